"""Reachable-set over-approximation of the contract-closed loop.

Each step encloses ``{f(x, y) : x in X_t, y in M(x)}``. Two enclosures are
available: the natural interval extension of the step (``step_reach``) and
a mean-value form over an affine set ``c + G xi`` that carries linear
correlations between dims from step to step (``reach_tube``). The tube box
at every step is the intersection of the two, so it is never looser than
the natural extension and does not suffer its wrapping growth over long
horizons.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .contract import PerceptionContract, contract_output_set
from .errors import Blowup, DimensionMismatch, DomainError, InvalidParam
from .geometry import HyperRect, Interval
from .jets import Jet, Jet2
from .systems.base import ClosedLoopSystem, Requirement

__all__ = [
    "CONTAINED",
    "FULL_EXIT",
    "PARTIAL_EXIT",
    "ReachTube",
    "TubeVerdict",
    "check_tube",
    "default_cap",
    "reach_tube",
    "step_reach",
]

CONTAINED = "Contained"
PARTIAL_EXIT = "PartialExit"
FULL_EXIT = "FullExit"

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class ReachTube:
    """Boxes ``steps[t]`` for ``t = 0 .. horizon`` stored as bound arrays.

    A tube cut short by a blowup has fewer rows than ``horizon + 1``;
    ``complete`` tells the two apart.
    """

    lo: np.ndarray
    hi: np.ndarray
    dt: float
    horizon: int
    extrapolation_steps: int = 0
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def complete(self) -> bool:
        return self.lo.shape[0] == self.horizon + 1

    @property
    def n_steps(self) -> int:
        return self.lo.shape[0]

    @property
    def steps(self) -> list:
        return [HyperRect(l, h) for l, h in zip(self.lo, self.hi)]

    def box(self, t: int) -> HyperRect:
        return HyperRect(self.lo[t], self.hi[t])

    def width(self) -> np.ndarray:
        return self.hi - self.lo

    def contains_states(self, states: np.ndarray) -> np.ndarray:
        """Per-step flags for a ``(T+1, n)`` trajectory (or ``(N, T+1, n)`` batch)."""
        T = min(states.shape[-2], self.n_steps)
        s = states[..., :T, :]
        return np.all((s >= self.lo[:T]) & (s <= self.hi[:T]), axis=-1)

    def dump(self, state_names: Optional[Sequence[str]] = None, sep: str = ",") -> str:
        """One record per step: ``t`` then ``lo``/``hi`` per state dim."""
        n = self.lo.shape[1]
        names = list(state_names) if state_names is not None else [f"s{i}" for i in range(n)]
        buf = io.StringIO()
        header = ["t"] + [f"{nm}_{b}" for nm in names for b in ("lo", "hi")]
        buf.write(sep.join(header) + "\n")
        for t in range(self.n_steps):
            cells = [str(t)]
            for i in range(n):
                cells.append(repr(float(self.lo[t, i])))
                cells.append(repr(float(self.hi[t, i])))
            buf.write(sep.join(cells) + "\n")
        return buf.getvalue()


@dataclass(frozen=True)
class TubeVerdict:
    kind: str
    first_violation_t: Optional[int] = None

    def __post_init__(self) -> None:
        if self.kind not in (CONTAINED, PARTIAL_EXIT, FULL_EXIT):
            raise InvalidParam(f"unknown verdict {self.kind!r}")
        if self.kind != CONTAINED and self.first_violation_t is None:
            raise InvalidParam("exits must carry the first violating step")


# -- one step ------------------------------------------------------------

def _as_box(obj) -> HyperRect:
    return obj if isinstance(obj, HyperRect) else HyperRect(*obj)


def step_reach(X_t: HyperRect, contract: PerceptionContract, plant: ClosedLoopSystem, t: int,
               events: Optional[list] = None) -> HyperRect:
    """Natural interval extension of one closed-loop step over ``X_t``."""
    if X_t.ndim != plant.n_state:
        raise DimensionMismatch(f"{X_t.ndim}-d box for a {plant.n_state}-d plant")
    Y = contract_output_set(contract, X_t, events)
    xs = [Interval(lo, hi) for lo, hi in zip(X_t.lo, X_t.hi)]
    ys = [Interval(lo, hi) for lo, hi in zip(Y.lo, Y.hi)]
    out = plant.step(xs, ys, t)
    return HyperRect([iv.lo for iv in out], [iv.hi for iv in out])


def _observation_jets(contract: PerceptionContract, xs: list, box: HyperRect, R: np.ndarray, n: int,
                      order: int = 1) -> list:
    """Jets for ``y = M_c(x) + w`` with ``|w_j| <= R_j``; inputs are ``(x, w)``."""
    m = contract.n_obs
    k = n + m
    aff = contract.affine_center()
    ys = []
    if aff is not None:
        C, _ = aff
        clo, chi = contract.center_image(box)
        for j in range(m):
            grad = np.zeros(k)
            grad[:n] = C[j]
            grad[n + j] = 1.0
            lo = math.nextafter(float(clo[j] - R[j]), -math.inf)
            hi = math.nextafter(float(chi[j] + R[j]), math.inf)
            if order == 2:
                ys.append(Jet2.affine(lo, hi, grad))
            else:
                ys.append(Jet(np.concatenate([[lo], grad]), np.concatenate([[hi], grad])))
        return ys
    centers = contract.center_generic(xs)
    var = Jet2.variable if order == 2 else Jet.variable
    for j in range(m):
        ys.append(centers[j] + var(-R[j], R[j], n + j, k))
    return ys


def _first_order_bounds(out: list, k: int) -> tuple:
    """``(value_lo, value_hi, grad_lo, grad_hi)`` arrays from first-order jets."""
    n = len(out)
    lo = np.zeros((n, k + 1))
    hi = np.zeros((n, k + 1))
    for i, o in enumerate(out):
        if isinstance(o, Jet):
            lo[i], hi[i] = o.lo, o.hi
        else:
            v = o if isinstance(o, Interval) else Interval(o, o)
            lo[i, 0], hi[i, 0] = v.lo, v.hi
    return lo[:, 0], hi[:, 0], lo[:, 1:], hi[:, 1:]


def _second_order_bounds(out: list, k: int) -> tuple:
    """Value, gradient and Hessian bound arrays from second-order jets."""
    n = len(out)
    vlo, vhi = np.zeros(n), np.zeros(n)
    glo, ghi = np.zeros((n, k)), np.zeros((n, k))
    hlo, hhi = np.zeros((n, k, k)), np.zeros((n, k, k))
    for i, o in enumerate(out):
        if isinstance(o, Jet2):
            vlo[i], vhi[i] = o.vlo, o.vhi
            glo[i], ghi[i] = o.glo, o.ghi
            hlo[i], hhi[i] = o.hlo, o.hhi
        else:
            v = o if isinstance(o, Interval) else Interval(o, o)
            vlo[i], vhi[i] = v.lo, v.hi
    return vlo, vhi, glo, ghi, hlo, hhi


def _quadratic_term(hlo: np.ndarray, hhi: np.ndarray, a: np.ndarray) -> tuple:
    """Bounds of ``0.5 * d^T H d`` over ``|d| <= a`` for each row's Hessian."""
    a2 = a * a
    diag_lo = np.einsum("ijj->ij", hlo)
    diag_hi = np.einsum("ijj->ij", hhi)
    qlo = 0.5 * np.sum(np.minimum(diag_lo, 0.0) * a2, axis=1)
    qhi = 0.5 * np.sum(np.maximum(diag_hi, 0.0) * a2, axis=1)
    mag = np.maximum(np.abs(hlo), np.abs(hhi))
    idx = np.arange(a.size)
    mag[:, idx, idx] = 0.0
    off = 0.5 * np.einsum("ijk,j,k->i", mag, a, a)
    slack = (a.size + 3) * _EPS * (np.abs(qlo) + np.abs(qhi) + off)
    return qlo - off - slack, qhi + off + slack


def _affine_step(plant: ClosedLoopSystem, contract: PerceptionContract, c: np.ndarray, G: np.ndarray,
                 box: HyperRect, t: int) -> tuple:
    """One step of the affine-set enclosure.

    Returns ``(c_new, lin, rem, nat_lo, nat_hi, R)`` where the new set is
    ``c_new + lin @ [xi; eta] + diag(rem) zeta`` with ``xi`` the old
    generator symbols, ``eta`` the per-step observation-noise symbols and
    ``zeta`` fresh symbols, all in ``[-1, 1]``.
    """
    n = plant.n_state
    m = contract.n_obs
    k = n + m
    R = contract.radius_bound(box)
    # Taylor expansions are about (c, 0) and must hold along the segment
    # to every true (x, w), so derivatives are bounded over hull(box, c)
    dom = HyperRect(np.minimum(box.lo, c), np.maximum(box.hi, c))
    xs2 = [Jet2.variable(dom.lo[i], dom.hi[i], i, k) for i in range(n)]
    out2 = plant.step(xs2, _observation_jets(contract, xs2, dom, R, n, order=2), t)
    nat_lo, nat_hi, dglo, dghi, hlo, hhi = _second_order_bounds(out2, k)

    xs1 = [Jet.variable(float(v), float(v), i, k) for i, v in enumerate(c)]
    out1 = plant.step(xs1, _observation_jets(contract, xs1, HyperRect(c, c), np.zeros(m), n), t)
    flo, fhi, pglo, pghi = _first_order_bounds(out1, k)

    a = np.concatenate([np.sum(np.abs(G), axis=1), R])
    fc = 0.5 * (flo + fhi)
    frad = np.maximum(fhi - fc, fc - flo)

    # first order: mean value form with the Jacobian over the domain
    Jm = 0.5 * (dglo + dghi)
    Jr = np.maximum(dghi - Jm, Jm - dglo)
    rem1 = Jr @ a + frad
    # second order: point Jacobian plus a Hessian remainder
    Pm = 0.5 * (pglo + pghi)
    Pr = np.maximum(pghi - Pm, Pm - pglo)
    qlo, qhi = _quadratic_term(hlo, hhi, a)
    qm = 0.5 * (qlo + qhi)
    rem2 = Pr @ a + frad + np.maximum(qhi - qm, qm - qlo)

    use2 = rem2 < rem1
    lin = np.where(use2[:, None], Pm, Jm)
    c_new = np.where(use2, fc + qm, fc)
    rem = np.where(use2, rem2, rem1)
    mid_slack = np.where(use2, np.abs(fc) + np.abs(qm), np.abs(fc)) * 2 * _EPS
    slack = (k + G.shape[1] + 4) * _EPS * (np.abs(lin) @ a + rem) + mid_slack
    rem = np.nextafter(rem + slack, np.inf)
    return c_new, lin, rem, nat_lo, nat_hi, R


def _reduce(G: np.ndarray, max_generators: int) -> np.ndarray:
    """Keep the largest generators and box the rest (Girard's heuristic)."""
    n, p = G.shape
    if p <= max_generators:
        return G
    keep = max_generators - n
    score = np.sum(np.abs(G), axis=0) - np.max(np.abs(G), axis=0)
    order = np.argsort(-score, kind="stable")
    big = G[:, order[:keep]]
    small = G[:, order[keep:]]
    boxed = np.sum(np.abs(small), axis=1) * (1.0 + 4.0 * _EPS)
    return np.hstack([big, np.diag(boxed)])


def default_cap(requirement: Requirement, n_state: int) -> np.ndarray:
    """Width cap: ten times the initial requirement width on constrained dims."""
    cap = np.full(n_state, np.inf)
    w0 = requirement.hi[0] - requirement.lo[0]
    cap[list(requirement.dim_mask)] = 10.0 * w0
    return cap


def reach_tube(X_c: HyperRect, contract: PerceptionContract, plant: ClosedLoopSystem, horizon: int,
               cap: Optional[np.ndarray] = None, max_generators: Optional[int] = None) -> ReachTube:
    """Tube over ``horizon`` steps from ``X_c`` with observations in ``M``.

    Raises :class:`Blowup` (carrying the partial tube) if a box becomes
    non-finite or wider than ``cap`` on any dim; :class:`DomainError`
    from the interval maths is re-raised with the partial tube attached
    the same way.
    """
    if horizon < 1:
        raise InvalidParam("horizon must be at least 1")
    if X_c.ndim != plant.n_state:
        raise DimensionMismatch(f"{X_c.ndim}-d box for a {plant.n_state}-d plant")
    n = plant.n_state
    m = contract.n_obs
    k = n + m
    max_generators = max_generators or 4 * k
    cap = np.full(n, np.inf) if cap is None else np.asarray(cap, dtype=float)
    lo_all = np.empty((horizon + 1, n))
    hi_all = np.empty((horizon + 1, n))
    lo_all[0], hi_all[0] = X_c.lo, X_c.hi

    c = X_c.center.copy()
    # start: G diag(radius), rounded up so the box stays inside c + G xi
    rad = np.nextafter(np.maximum(X_c.hi - c, c - X_c.lo), np.inf)
    G = np.diag(rad)[:, rad > 0]
    box = X_c
    extrapolated = 0
    domain = contract.state_domain

    def partial(t: int) -> ReachTube:
        return ReachTube(lo_all[:t + 1].copy(), hi_all[:t + 1].copy(), plant.dt, horizon, extrapolated,
                         {"cut_at": t})

    for t in range(horizon):
        if not domain.contains(box):
            extrapolated += 1
        try:
            c, lin, rem, nlo, nhi, R = _affine_step(plant, contract, c, G, box, t)
        except DomainError as exc:
            err = DomainError(f"step {t}: {exc}")
            err.tube = partial(t)
            raise err from exc
        G = _reduce(np.hstack([lin[:, :n] @ G, lin[:, n:] * R[None, :], np.diag(rem)]), max_generators)

        spread = np.nextafter(np.sum(np.abs(G), axis=1) * (1.0 + (G.shape[1] + 2) * _EPS), np.inf)
        zlo = np.nextafter(c - spread, -np.inf)
        zhi = np.nextafter(c + spread, np.inf)
        new_lo = np.maximum(zlo, nlo)
        new_hi = np.minimum(zhi, nhi)
        lo_all[t + 1], hi_all[t + 1] = new_lo, new_hi
        width = new_hi - new_lo
        if not np.all(np.isfinite(width)) or np.any(width > cap):
            bad = np.flatnonzero(~np.isfinite(width) | (width > cap))
            raise Blowup(f"tube width exceeds the cap at step {t + 1} on dims {bad.tolist()}",
                         partial(t + 1), t + 1)
        box = HyperRect(new_lo, new_hi)

    return ReachTube(lo_all, hi_all, plant.dt, horizon, extrapolated)


def check_tube(tube: ReachTube, requirement: Requirement) -> TubeVerdict:
    """Classify a (possibly partial) tube against ``R``.

    FullExit at the first step whose box misses ``R(t)``; otherwise
    PartialExit at the first step not inside ``R(t)``; otherwise Contained.
    A partial tube that stayed inside ``R`` is reported as PartialExit at
    its cut point.
    """
    mask = list(requirement.dim_mask)
    T = min(tube.n_steps, requirement.horizon + 1)
    lo = tube.lo[:T, mask]
    hi = tube.hi[:T, mask]
    rlo, rhi = requirement.lo[:T], requirement.hi[:T]
    disjoint = np.any((hi < rlo) | (lo > rhi), axis=1)
    if disjoint.any():
        return TubeVerdict(FULL_EXIT, int(np.argmax(disjoint)))
    outside = np.any((lo < rlo) | (hi > rhi), axis=1)
    if outside.any():
        return TubeVerdict(PARTIAL_EXIT, int(np.argmax(outside)))
    if tube.n_steps < min(tube.horizon, requirement.horizon) + 1:
        return TubeVerdict(PARTIAL_EXIT, tube.n_steps - 1)
    return TubeVerdict(CONTAINED)
