"""Fixed-wing approach and landing plant with a PD glide-path tracker.

State ``(x, y, z, psi, theta, v)``; the observer reports the pose without
the airspeed. The reference is a straight -3 degree descent at 10 m/s
ending at the touchdown point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..geometry import HyperRect, cos, sin, sqr, sqrt
from .base import ClosedLoopSystem, InvalidParam, Requirement, hash_noise

STATE_NAMES = ("x", "y", "z", "psi", "theta", "v")
OBSERVED_DIMS = (0, 1, 2, 3, 4)
ENV_NAMES = ("ambient", "sun_angle")

GLIDE_SLOPE = math.radians(3.0)
REF_SPEED = 10.0
DT = 0.1
START = (-3015.0, 0.0, 120.0)
ENV_BOUNDS = HyperRect([0.2, -0.1], [1.2, 0.6])
NOMINAL_ENV = (1.0, 0.0)

X01 = HyperRect.from_bounds([[-3020, -3010], [-5, 5], [118, 122],
                             [-0.001, 0.001], [-0.0534, -0.0514], [9.99, 10.01]])
X02 = HyperRect.from_bounds([[-3030, -3000], [-5, 5], [100, 140],
                             [-0.001, 0.001], [-0.0534, -0.0514], [9.99, 10.01]])

# PD gains
K_SPEED = 0.005
K_SPEED_POS = 0.01
K_LATERAL = 0.01
K_HEADING = 0.01
K_VERTICAL = 0.001


def touchdown_time(start: Sequence[float] = START) -> float:
    return start[2] / (REF_SPEED * math.sin(GLIDE_SLOPE))


def touchdown_point(start: Sequence[float] = START) -> np.ndarray:
    run = start[2] / math.tan(GLIDE_SLOPE)
    return np.array([start[0] + run, start[1], 0.0])


def autoland_reference(t: int, dt: float = DT, start: Sequence[float] = START) -> np.ndarray:
    """Reference state at step ``t``; holds at touchdown once reached."""
    tau = min(t * dt, touchdown_time(start))
    x = start[0] + REF_SPEED * math.cos(GLIDE_SLOPE) * tau
    z = start[2] - REF_SPEED * math.sin(GLIDE_SLOPE) * tau
    return np.array([x, start[1], max(z, 0.0), 0.0, -GLIDE_SLOPE, REF_SPEED])


def autoland_controls(obs: Sequence, v, ref: Sequence[float]) -> tuple:
    """PD law: returns ``(a, beta, omega)`` from the observed pose and true speed."""
    xh, yh, zh, psih, thetah = obs
    xr, yr, zr, psir, thetar, vr = ref
    c, s = cos(psih), sin(psih)
    dx = xr - xh
    dy = yr - yh
    x_e = c * dx + s * dy
    y_e = -s * dx + c * dy
    z_e = zr - zh
    psi_e = psir - psih
    theta_e = thetar - thetah
    along = vr * math.cos(thetar) * math.cos(psir) + K_SPEED_POS * x_e
    vert = vr * math.sin(thetar) + K_SPEED_POS * z_e
    a = K_SPEED * (sqrt(sqr(along) + sqr(vert)) - v)
    beta = psi_e + vr * (K_LATERAL * y_e + K_HEADING * sin(psi_e))
    omega = theta_e + K_VERTICAL * z_e
    return a, beta, omega


def autoland_step(s: Sequence, y_obs: Sequence, t: int, dt: float = DT,
                  start: Sequence[float] = START) -> list:
    """One discrete step of the closed loop; generic over the numeric type."""
    x, y, z, psi, theta, v = s
    ref = autoland_reference(t, dt, start)
    a, beta, omega = autoland_controls(y_obs, v, ref)
    ct = cos(theta)
    return [
        x + v * cos(psi) * ct * dt,
        y + v * sin(psi) * ct * dt,
        z + v * sin(theta) * dt,
        psi + beta * dt,
        theta + omega * dt,
        v + a * dt,
    ]


def autoland_requirement(horizon: int, half_width_start: Sequence[float] = (10.0, 5.0),
                         half_width_end: Sequence[float] = (1.0, 1.0),
                         dim_mask: Sequence[int] = (1, 2), dt: float = DT,
                         start: Sequence[float] = START) -> Requirement:
    """Shrinking boxes around the reference, linear in time.

    Negative half-widths are accepted and give empty boxes, the degenerate
    requirement nothing can satisfy.
    """
    h0 = np.asarray(half_width_start, dtype=float)
    h1 = np.asarray(half_width_end, dtype=float)
    if h0.shape != (len(dim_mask),) or h1.shape != h0.shape:
        raise InvalidParam("one start and one end half-width per constrained dim")
    if np.any(h1 > h0):
        raise InvalidParam("half-widths must not grow over the horizon")
    frac = np.linspace(0.0, 1.0, horizon + 1)[:, None]
    hw = h0 + (h1 - h0) * frac
    centers = np.array([autoland_reference(t, dt, start) for t in range(horizon + 1)])
    return Requirement.tube(centers, dim_mask, hw)


@dataclass(frozen=True)
class AutoLandObserver:
    """Deterministic stand-in for the camera, keypoint and pose pipeline.

    The error on each observed dim is ``scale(s) * (bias + amp * w)`` where
    ``scale`` grows affinely with range to the touchdown point, ``bias`` and
    ``amp`` grow with the lighting degradation, and ``w`` is hash noise of the
    quantised state and environment.
    """

    floor: tuple = (0.03, 0.008, 0.008, 0.00008, 0.000008)
    per_meter: tuple = (0.00008, 0.00002, 0.00001, 0.0000002, 0.00000001)
    bias_dir: tuple = (1.0, -0.6, 0.5, -0.4, 0.3)
    ambient_weight: float = 1.0
    glare_weight: float = 1.2
    compensation: float = 0.95
    amp_gain: float = 8.0
    bias_gain: float = 2.0
    glare_band: tuple = ((0.95, 1.1), (0.25, 0.4))
    compensated_band: tuple = ((0.4, 0.6), (0.25, 0.4))
    touchdown: tuple = tuple(touchdown_point())
    quanta: tuple = (0.01, 0.01, 0.01, 1e-5, 1e-5, 0.001, 1e-4, 1e-4)
    salt: int = 7

    def degradation(self, envs: np.ndarray) -> np.ndarray:
        envs = np.atleast_2d(envs)
        amb, sun = envs[:, 0], envs[:, 1]
        (g0, g1), (s0, s1) = self.glare_band
        (c0, c1), (t0, t1) = self.compensated_band
        glare = (amb >= g0) & (amb <= g1) & (sun >= s0) & (sun <= s1)
        comp = (amb >= c0) & (amb <= c1) & (sun >= t0) & (sun <= t1)
        ambient = self.ambient_weight * np.abs(amb - 1.0) * np.where(comp, 1.0 - self.compensation, 1.0)
        return ambient + self.glare_weight * glare

    def range_to_touchdown(self, states: np.ndarray) -> np.ndarray:
        return np.linalg.norm(states[:, :3] - np.asarray(self.touchdown), axis=1)

    def error_bound(self, states: np.ndarray, envs: np.ndarray) -> np.ndarray:
        """Per-dim bound on ``|y_hat - truth|`` (the ground-truth envelope)."""
        d = self.degradation(envs)[:, None]
        return self._scale(states) * (self.bias_gain * d + 1.0 + self.amp_gain * d)

    def _scale(self, states: np.ndarray) -> np.ndarray:
        dist = self.range_to_touchdown(states)[:, None]
        return np.asarray(self.floor) + np.asarray(self.per_meter) * dist

    def __call__(self, states: np.ndarray, envs: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        envs = np.atleast_2d(np.asarray(envs, dtype=float))
        if envs.shape[0] == 1 and states.shape[0] > 1:
            envs = np.repeat(envs, states.shape[0], axis=0)
        d = self.degradation(envs)[:, None]
        keys = np.concatenate([states, envs], axis=1)
        w = np.stack([hash_noise(keys, np.asarray(self.quanta), self.salt + j)
                      for j in range(len(OBSERVED_DIMS))], axis=1)
        dist = self.range_to_touchdown(states)[:, None]
        u = np.asarray(self.bias_dir) * (0.75 + 0.25 * np.cos(dist / 400.0))
        err = self._scale(states) * (self.bias_gain * d * u + (1.0 + self.amp_gain * d) * w)
        return states[:, list(OBSERVED_DIMS)] + err


def autoland_state_domain(start: Sequence[float] = START) -> HyperRect:
    td = touchdown_point(start)
    return HyperRect([start[0] - 20.0, -15.0, -5.0, -0.6, -0.25, 9.8],
                     [td[0] + 10.0, 15.0, start[2] + 25.0, 0.6, 0.15, 10.2])


def make_autoland(horizon: Optional[int] = None, dt: float = DT,
                  start: Sequence[float] = START) -> ClosedLoopSystem:
    if horizon is None:
        horizon = int(math.floor(touchdown_time(start) / dt))

    def step(s, y, t):
        return autoland_step(s, y, t, dt, start)

    def reference(t):
        return autoland_reference(t, dt, start)

    return ClosedLoopSystem(
        plant_id="autoland",
        dt=dt,
        state_names=STATE_NAMES,
        observed_dims=OBSERVED_DIMS,
        env_names=ENV_NAMES,
        step=step,
        reference=reference,
        state_domain=autoland_state_domain(start),
        env_bounds=ENV_BOUNDS,
        nominal_env=NOMINAL_ENV,
        horizon=horizon,
    )
