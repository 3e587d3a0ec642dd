"""Closed-loop system plumbing shared by the two case-study plants."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import InvalidParam
from ..geometry import HyperRect

__all__ = [
    "InvalidParam",
    "ClosedLoopSystem",
    "Requirement",
    "Trajectory",
    "simulate",
    "simulate_batch",
    "hash_noise",
]


StepFn = Callable[[Sequence, Sequence, int], list]


@dataclass(frozen=True)
class ClosedLoopSystem:
    """Plant dynamics composed with a tracking controller.

    ``step(state, observation, t)`` takes component sequences (floats, numpy
    batches, intervals or jets) and returns the next state as a list; the
    controller sees ``observation`` in place of the observed state dims.
    """

    plant_id: str
    dt: float
    state_names: tuple
    observed_dims: tuple
    env_names: tuple
    step: StepFn
    reference: Callable[[int], np.ndarray]
    state_domain: HyperRect
    env_bounds: HyperRect
    nominal_env: tuple
    horizon: int

    @property
    def n_state(self) -> int:
        return len(self.state_names)

    @property
    def n_obs(self) -> int:
        return len(self.observed_dims)

    def step_batch(self, states: np.ndarray, obs: np.ndarray, t: int) -> np.ndarray:
        """Vectorised step over rows of ``states`` (N, n) and ``obs`` (N, m)."""
        nxt = self.step(list(states.T), list(obs.T), t)
        return np.stack([np.broadcast_to(np.asarray(c, dtype=float), states.shape[:1]) for c in nxt], axis=1)

    def reference_states(self, horizon: Optional[int] = None) -> np.ndarray:
        T = self.horizon if horizon is None else horizon
        return np.array([self.reference(t) for t in range(T + 1)])


@dataclass(frozen=True)
class Requirement:
    """Time-indexed boxes ``R(t)`` over the state dims in ``dim_mask``.

    Stored as arrays of lower/upper bounds, one row per time index. A row
    with ``lo > hi`` on some dim is an empty box that no state satisfies.
    """

    dim_mask: tuple
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self) -> None:
        if self.lo.shape != self.hi.shape or self.lo.shape[1] != len(self.dim_mask):
            raise InvalidParam("requirement bounds do not match the dim mask")

    @property
    def first_empty(self) -> Optional[int]:
        """Index of the first empty box, or None."""
        empty = np.any(self.lo > self.hi, axis=1)
        return int(np.argmax(empty)) if empty.any() else None

    @property
    def horizon(self) -> int:
        return self.lo.shape[0] - 1

    def box(self, t: int) -> HyperRect:
        return HyperRect(self.lo[t], self.hi[t])

    def satisfied(self, states: np.ndarray) -> np.ndarray:
        """Per-step flags for a trajectory ``(T+1, n)`` or batch ``(N, T+1, n)``."""
        proj = states[..., list(self.dim_mask)]
        T = min(proj.shape[-2], self.lo.shape[0])
        proj = proj[..., :T, :]
        return np.all((proj >= self.lo[:T]) & (proj <= self.hi[:T]), axis=-1)

    @classmethod
    def tube(cls, centers: np.ndarray, dim_mask: Sequence[int], half_widths: np.ndarray) -> "Requirement":
        """Boxes ``centers[t, mask] +/- half_widths[t]``."""
        c = np.asarray(centers, dtype=float)[:, list(dim_mask)]
        hw = np.broadcast_to(np.asarray(half_widths, dtype=float), c.shape)
        return cls(tuple(dim_mask), c - hw, c + hw)


@dataclass
class Trajectory:
    states: np.ndarray
    observations: np.ndarray
    env: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def horizon(self) -> int:
        return self.states.shape[0] - 1


def simulate_batch(plant: ClosedLoopSystem, x0: np.ndarray, envs: np.ndarray,
                   observer, horizon: int) -> tuple:
    """Run ``N`` executions at once.

    Returns ``(states, observations)`` of shapes ``(N, horizon+1, n)`` and
    ``(N, horizon, m)``.
    """
    x = np.array(x0, dtype=float, ndmin=2)
    envs = np.array(envs, dtype=float, ndmin=2)
    if envs.shape[0] == 1 and x.shape[0] > 1:
        envs = np.repeat(envs, x.shape[0], axis=0)
    N, n = x.shape
    states = np.empty((N, horizon + 1, n))
    obs = np.empty((N, horizon, plant.n_obs))
    states[:, 0] = x
    for t in range(horizon):
        y = observer(x, envs)
        obs[:, t] = y
        x = plant.step_batch(x, y, t)
        states[:, t + 1] = x
    return states, obs


def simulate(plant: ClosedLoopSystem, x0, e, observer, horizon: int) -> Trajectory:
    """One execution ``x_{t+1} = f(x_t, observer(x_t, e))``."""
    states, obs = simulate_batch(plant, np.asarray(x0, dtype=float)[None, :],
                                 np.asarray(e, dtype=float)[None, :], observer, horizon)
    return Trajectory(states[0], obs[0], np.asarray(e, dtype=float))


def _splitmix64(z: np.ndarray) -> np.ndarray:
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def hash_noise(keys: np.ndarray, quanta: np.ndarray, salt: int) -> np.ndarray:
    """Deterministic pseudo-noise in ``[-1, 1]`` for each row of ``keys``.

    Each coordinate is quantised to its ``quanta`` step before hashing, so
    equal inputs always give equal outputs and nearby inputs decorrelate.
    """
    q = np.round(np.asarray(keys, dtype=float) / quanta).astype(np.int64).view(np.uint64)
    h = np.full(q.shape[0], (salt * 0x2545F4914F6CDD1D) & 0xFFFFFFFFFFFFFFFF, dtype=np.uint64)
    with np.errstate(over="ignore"):
        for j in range(q.shape[1]):
            h = _splitmix64(h ^ q[:, j])
    return (h >> np.uint64(11)).astype(float) * (2.0 / 2.0**53) - 1.0
