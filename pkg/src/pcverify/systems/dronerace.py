"""Quadrotor gate-racing plant with a linear state-feedback tracker.

State order follows the twelve rate equations:
``(x, vx, phi, rho, y, vy, theta, omega, z, vz, psi, beta)``, with
``vx, vy`` in the yaw-rotated body frame. The observer reports
``(x, y, z, psi)``. The closed loop holds each control for ``DT`` seconds
and integrates with forward Euler at ``SUBSTEP`` so that the point and set
versions of the step are the same map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from ..geometry import HyperRect, cos, sin, tan
from .base import ClosedLoopSystem, InvalidParam, Requirement, hash_noise

STATE_NAMES = ("x", "vx", "phi", "rho", "y", "vy", "theta", "omega", "z", "vz", "psi", "beta")
OBSERVED_DIMS = (0, 4, 8, 10)
ENV_NAMES = ("fog", "light")

G = 9.81
D0 = 10.0
D1 = 8.0
N0 = 10.0
KT = 0.91
HOVER_THRUST = G / KT

DT = 0.05
SUBSTEP = 0.01
SPEED = 1.0

ENV_BOUNDS = HyperRect([0.0, -1.0], [1.0, 0.0])
NOMINAL_ENV = (0.0, 0.0)

START_POS = (-0.84, -0.05, -0.33)
START_HEADING = 0.61
GATES = ((0.39, 0.81, -0.25), (1.32, 1.98, -0.15), (2.64, 2.70, -0.20))

_ZERO = 0.0
X0 = HyperRect.from_bounds([[-0.85, -0.83], [_ZERO, _ZERO], [-0.01, 0.01], [_ZERO, _ZERO],
                            [-0.06, -0.04], [_ZERO, _ZERO], [-0.01, 0.01], [_ZERO, _ZERO],
                            [-0.34, -0.32], [_ZERO, _ZERO], [0.60, 0.62], [_ZERO, _ZERO]])

# feedback gains on (x_e, vx_e, phi_e, rho_e, y_e, vy_e, theta_e, omega_e, z_e, vz_e)
GAINS = np.array([
    [3.16, 4.52, 4.25, 1.36, 0.0, -0.0, -0.0, 0.0, -0.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 1.0, 1.83, 1.46, 1.14, -0.0, -0.0],
    [0.0, 0.0, -0.0, 0.0, 0.0, -0.0, -0.0, -0.0, 1.0, 1.79],
])
YAW_GAINS = (1.0, 1.0)


def drone_derivative(s: Sequence, u: Sequence) -> list:
    """Right-hand side of the rate equations for inputs ``(ax, ay, F, az)``."""
    x, vx, phi, rho, y, vy, theta, omega, z, vz, psi, beta = s
    ax, ay, F, az = u
    c, sn = cos(psi), sin(psi)
    return [
        vx * c - vy * sn,
        G * tan(phi),
        -D1 * phi + rho,
        -D0 * phi + N0 * ax,
        vx * sn + vy * c,
        G * tan(theta),
        -D1 * theta + omega,
        -D0 * theta + N0 * ay,
        vz,
        KT * F - G,
        beta,
        N0 * az,
    ]


def tracking_error(est: Sequence, ref: Sequence[float]) -> list:
    """Reference minus estimate, with the position part in the body frame."""
    dx = ref[0] - est[0]
    dy = ref[4] - est[4]
    c, sn = cos(est[10]), sin(est[10])
    err = [ref[i] - est[i] for i in range(12)]
    err[0] = c * dx + sn * dy
    err[4] = -sn * dx + c * dy
    return err


def _dot(row: np.ndarray, err: Sequence):
    acc = 0.0
    for g, e in zip(row, err):
        if g != 0.0:
            acc = acc + float(g) * e
    return acc


def drone_controller(est: Sequence, ref: Sequence[float]) -> tuple:
    """``(ax, ay, thrust, az)``; ``thrust`` is the offset from hover thrust."""
    err = tracking_error(est, ref)
    ax, ay, thrust = (_dot(GAINS[r], err[:10]) for r in range(3))
    az = YAW_GAINS[0] * err[10] + YAW_GAINS[1] * err[11]
    return ax, ay, thrust, az


def drone_euler(s: Sequence, u: Sequence, h: float = SUBSTEP) -> list:
    d = drone_derivative(s, u)
    return [si + di * h for si, di in zip(s, d)]


def drone_step(s: Sequence, y_obs: Sequence, ref: Sequence[float], dt: float = DT,
               substep: float = SUBSTEP) -> list:
    """Hold the control computed from the estimate for ``dt``, Euler inside."""
    est = list(s)
    for k, j in enumerate(OBSERVED_DIMS):
        est[j] = y_obs[k]
    ax, ay, thrust, az = drone_controller(est, ref)
    u = (ax, ay, thrust + HOVER_THRUST, az)
    n_sub = int(round(dt / substep))
    out = list(s)
    for _ in range(n_sub):
        out = drone_euler(out, u, substep)
    return out


@dataclass
class DroneReference:
    """Constant-speed path through the gates, sampled once per control step.

    The path is a cubic spline in chord length, clamped to the start heading,
    then re-timed by arc length. Speed rises from rest to ``speed`` over
    ``ramp`` seconds along a half cosine. Reference states carry the
    body-frame speed, heading and heading rate; attitude and body rates are
    zero.
    """

    gates: tuple = GATES
    start: tuple = START_POS
    heading: float = START_HEADING
    speed: float = SPEED
    ramp: float = 2.0
    dt: float = DT
    states: np.ndarray = field(init=False, repr=False)
    curvature: np.ndarray = field(init=False, repr=False)
    gate_steps: tuple = field(init=False)
    length: float = field(init=False)

    def __post_init__(self) -> None:
        if len(self.gates) == 0:
            raise InvalidParam("at least one gate is needed")
        if self.speed <= 0:
            raise InvalidParam("reference speed must be positive")
        pts = np.vstack([np.asarray(self.start, dtype=float), np.asarray(self.gates, dtype=float)])
        if pts.shape[1] != 3:
            raise InvalidParam("gates are 3-d points")
        chord = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
        if np.any(np.diff(chord) <= 0):
            raise InvalidParam("consecutive gates must be distinct")
        d0 = np.array([math.cos(self.heading), math.sin(self.heading), 0.0])
        spline = CubicSpline(chord, pts, bc_type=((1, d0), "natural"))
        d1, d2 = spline.derivative(1), spline.derivative(2)
        u = np.linspace(0.0, chord[-1], 4001)
        speed_u = np.linalg.norm(d1(u), axis=1)
        arc = np.concatenate([[0.0], np.cumsum(0.5 * (speed_u[1:] + speed_u[:-1]) * np.diff(u))])
        self.length = float(arc[-1])
        horizon = int(math.floor((self.length / self.speed + 0.5 * self.ramp) / self.dt))
        tau = np.arange(horizon + 1) * self.dt
        s, v, acc, jerk = self._schedule(tau)
        uu = np.interp(s, arc, u)
        p, dp, ddp = spline(uu), d1(uu), d2(uu)
        norm = np.linalg.norm(dp, axis=1)
        hor2 = dp[:, 0] ** 2 + dp[:, 1] ** 2
        cross = dp[:, 0] * ddp[:, 1] - dp[:, 1] * ddp[:, 0]
        st = np.zeros((horizon + 1, 12))
        st[:, 0], st[:, 4], st[:, 8] = p[:, 0], p[:, 1], p[:, 2]
        st[:, 1] = v * np.sqrt(hor2) / norm
        # roll and roll rate that produce the ramp's along-track acceleration
        st[:, 2] = np.arctan(acc / G)
        st[:, 3] = D1 * st[:, 2] + jerk / (G * (1.0 + (acc / G) ** 2))
        st[:, 9] = v * dp[:, 2] / norm
        st[:, 10] = np.unwrap(np.arctan2(dp[:, 1], dp[:, 0]))
        st[:, 11] = v * cross / (hor2 * norm)
        # gates sit exactly on the spline; record where the schedule passes them
        self.gate_steps = tuple(int(np.argmin(np.abs(s - np.interp(c, u, arc)))) for c in chord[1:])
        self.states = st
        self.curvature = np.abs(cross) / hor2 ** 1.5
        self._spline = spline
        self._chord = chord

    def _schedule(self, tau: np.ndarray) -> tuple:
        """Arc length, speed, acceleration and jerk at times ``tau``."""
        V, Ta = self.speed, self.ramp
        zero = np.zeros_like(tau)
        if Ta <= 0:
            s, v, a, j = V * tau, np.full_like(tau, V), zero, zero
        else:
            early = tau < Ta
            w = math.pi / Ta
            s = np.where(early, 0.5 * V * (tau - np.sin(w * tau) / w), V * (tau - 0.5 * Ta))
            v = np.where(early, 0.5 * V * (1.0 - np.cos(w * tau)), V)
            a = np.where(early, 0.5 * V * w * np.sin(w * tau), 0.0)
            j = np.where(early, 0.5 * V * w * w * np.cos(w * tau), 0.0)
        done = s >= self.length
        return (np.where(done, self.length, s), np.where(done, 0.0, v),
                np.where(done, 0.0, a), np.where(done, 0.0, j))

    @property
    def horizon(self) -> int:
        return self.states.shape[0] - 1

    def __call__(self, t: int) -> np.ndarray:
        return self.states[min(max(int(t), 0), self.horizon)]

    def position_at_gate(self, i: int) -> np.ndarray:
        return np.asarray(self._spline(self._chord[i + 1]))

    def nearest_index(self, positions: np.ndarray) -> np.ndarray:
        ref = self.states[:, [0, 4, 8]]
        d = np.sum((np.atleast_2d(positions)[:, None, :] - ref[None, :, :]) ** 2, axis=-1)
        return np.argmin(d, axis=1)


def drone_requirement(reference: DroneReference, half_width: float = 0.3) -> Requirement:
    """Moving box of ``half_width`` around the reference position."""
    if half_width <= 0:
        raise InvalidParam("half-width must be positive")
    return Requirement.tube(reference.states, (0, 4, 8), np.full(3, float(half_width)))


@dataclass(frozen=True)
class DroneObserver:
    """Deterministic stand-in for the image-based particle filter.

    The error on ``(x, y, z, psi)`` is
    ``scale(s) * (bias_gain * d^2 * u + (1 + amp_gain * d^2) * w) + lock(d) * lock_amp * w_lock``
    with ``d = fog_weight * fog + light_weight * |light|``. ``scale`` grows
    with the path curvature at the nearest reference point, ``u`` is a fixed
    direction and ``w`` hash noise of the quantised state and environment.
    ``lock`` is a logistic step at ``knee``: past it the filter settles on
    wrong pose hypotheses, modelled by ``w_lock``, hash noise of the position
    quantised to ``lock_quantum`` metres, so the offset holds for a stretch
    of path before jumping.
    """

    reference: DroneReference
    floor: tuple = (0.01, 0.01, 0.01, 0.005)
    curvature_gain: float = 0.5
    bias_dir: tuple = (0.8, -0.6, 0.5, 0.4)
    fog_weight: float = 1.0
    light_weight: float = 0.8
    amp_gain: float = 4.0
    bias_gain: float = 20.0
    knee: float = 0.3
    knee_width: float = 0.02
    lock_amp: tuple = (1.2, 1.2, 0.8, 0.3)
    lock_quantum: float = 0.4
    quanta: tuple = (0.001,) * 12 + (0.001, 0.001)
    salt: int = 11

    def degradation(self, envs: np.ndarray) -> np.ndarray:
        envs = np.atleast_2d(envs)
        return self.fog_weight * envs[:, 0] + self.light_weight * np.abs(envs[:, 1])

    def lock(self, envs: np.ndarray) -> np.ndarray:
        z = (self.degradation(envs) - self.knee) / self.knee_width
        return 0.5 * (1.0 + np.tanh(0.5 * z))

    def _scale(self, states: np.ndarray) -> np.ndarray:
        idx = self.reference.nearest_index(states[:, [0, 4, 8]])
        kappa = self.reference.curvature[idx][:, None]
        return np.asarray(self.floor) * (1.0 + self.curvature_gain * kappa)

    def error_bound(self, states: np.ndarray, envs: np.ndarray) -> np.ndarray:
        """Per-dim bound on ``|y_hat - truth|``."""
        d2 = self.degradation(envs)[:, None] ** 2
        return (self._scale(np.atleast_2d(states)) * (self.bias_gain * d2 + 1.0 + self.amp_gain * d2)
                + self.lock(envs)[:, None] * np.asarray(self.lock_amp))

    def __call__(self, states: np.ndarray, envs: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        envs = np.atleast_2d(np.asarray(envs, dtype=float))
        if envs.shape[0] == 1 and states.shape[0] > 1:
            envs = np.repeat(envs, states.shape[0], axis=0)
        d2 = self.degradation(envs)[:, None] ** 2
        keys = np.concatenate([states, envs], axis=1)
        w = np.stack([hash_noise(keys, np.asarray(self.quanta), self.salt + j)
                      for j in range(len(OBSERVED_DIMS))], axis=1)
        err = self._scale(states) * (self.bias_gain * d2 * np.asarray(self.bias_dir)
                                     + (1.0 + self.amp_gain * d2) * w)
        lock_keys = np.concatenate([states[:, [0, 4, 8]], envs], axis=1)
        lock_q = np.array([self.lock_quantum] * 3 + list(self.quanta[-2:]))
        w_lock = np.stack([hash_noise(lock_keys, lock_q, 3 * self.salt + j)
                           for j in range(len(OBSERVED_DIMS))], axis=1)
        err = err + self.lock(envs)[:, None] * np.asarray(self.lock_amp) * w_lock
        return states[:, list(OBSERVED_DIMS)] + err


def drone_state_domain(reference: DroneReference, margin: float = 1.0) -> HyperRect:
    pos = reference.states[:, [0, 4, 8]]
    lo, hi = pos.min(axis=0) - margin, pos.max(axis=0) + margin
    psi = reference.states[:, 10]
    return HyperRect([lo[0], -3.0, -0.5, -5.0, lo[1], -3.0, -0.5, -5.0, lo[2], -3.0, psi.min() - 1.0, -5.0],
                     [hi[0], 3.0, 0.5, 5.0, hi[1], 3.0, 0.5, 5.0, hi[2], 3.0, psi.max() + 1.0, 5.0])


def make_dronerace(reference: Optional[DroneReference] = None, horizon: Optional[int] = None,
                   substep: float = SUBSTEP) -> ClosedLoopSystem:
    ref = reference if reference is not None else DroneReference()
    if horizon is None:
        horizon = ref.horizon

    def step(s, y, t):
        return drone_step(s, y, ref(t), ref.dt, substep)

    return ClosedLoopSystem(
        plant_id="dronerace",
        dt=ref.dt,
        state_names=STATE_NAMES,
        observed_dims=OBSERVED_DIMS,
        env_names=ENV_NAMES,
        step=step,
        reference=ref,
        state_domain=drone_state_domain(ref),
        env_bounds=ENV_BOUNDS,
        nominal_env=NOMINAL_ENV,
        horizon=horizon,
    )
