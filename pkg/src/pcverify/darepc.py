"""Requirement-guided refinement of perception contracts.

The loop keeps a LIFO stack of initial-state boxes. Each popped box gets a
reach tube under the current contract; a tube that leaves the requirement
entirely yields a counterexample, one that leaves it in part splits the box
and shrinks the environment grid toward the nominal point, after which the
contract is re-learned on the smaller grid.
"""

from __future__ import annotations

import logging
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .contract import PerceptionContract, SamplerSpec, learn_contract, rng_for
from .envgrid import EnvGrid
from .errors import DegenerateBox, DomainError, InvalidParam
from .geometry import HyperRect
from .reach import CONTAINED, FULL_EXIT, Blowup, ReachTube, TubeVerdict, check_tube, default_cap, reach_tube
from .systems.base import ClosedLoopSystem, Requirement, simulate_batch

__all__ = [
    "EnvGrid",
    "DarepcParams",
    "DarepcOutcome",
    "ValidationReport",
    "SAFE",
    "COUNTEREXAMPLE",
    "INCONCLUSIVE",
    "refine_state",
    "estimate_cell_conformance",
    "shrink_env",
    "darepc",
    "validate_outcome",
    "report",
]

log = logging.getLogger(__name__)

SAFE = "Safe"
COUNTEREXAMPLE = "Counterexample"
INCONCLUSIVE = "Inconclusive"


def refine_state(X_c: HyperRect, X_0: HyperRect) -> tuple:
    """Bisect ``X_c`` along its widest axis relative to ``X_0``."""
    w0 = X_0.width
    rel = np.where(w0 > 0, X_c.width / np.where(w0 > 0, w0, 1.0), 0.0)
    axis = int(np.argmax(rel))
    if rel[axis] < 1e-12:
        raise DegenerateBox("no axis left to split")
    return X_c.bisect(axis)


def estimate_cell_conformance(grid: EnvGrid, contract: PerceptionContract, observer: Callable,
                              probe_budget: int, sampler: SamplerSpec,
                              rng: np.random.Generator) -> np.ndarray:
    """Fraction of ``probe_budget`` fresh probes per active cell inside the contract.

    States come from the sampler's state distribution, environments are
    uniform inside each cell. Inactive cells get NaN.
    """
    out = np.full(grid.n_cells, np.nan)
    for idx in grid.active_cells():
        X = sampler.draw_states(rng, probe_budget)
        E = grid.sample(rng, probe_budget, cells=np.array([idx]))
        Y = observer(X, E)
        out[idx] = float(np.mean(contract.conforms(X, Y)))
    return out


def shrink_env(grid: EnvGrid, contract: PerceptionContract, observer: Callable, probe_budget: int,
               sampler: SamplerSpec, rng: np.random.Generator, threshold: float = 0.8) -> tuple:
    """One shrink of the active cells toward the nominal environment.

    Returns ``(new_grid, removed)``. Every active cell whose probe
    conformance is below ``threshold`` is removed; if none is, the active
    cell farthest from the nominal point goes instead (lowest index on
    ties). The nominal cell always stays.
    """
    if grid.n_active < 1:
        raise InvalidParam("grid has no active cells")
    nominal = grid.nominal_cell
    if grid.n_active == 1:
        return grid.copy(), []
    conf = estimate_cell_conformance(grid, contract, observer, probe_budget, sampler, rng)
    active = grid.active_cells()
    bad = [int(i) for i in active if i != nominal and conf[i] < threshold]
    if not bad:
        cand = np.array([i for i in active if i != nominal])
        dist = grid.normalized_distance(cand)
        # argmax returns the first maximum, which is the lowest index
        bad = [int(cand[int(np.argmax(dist))])]
    new = grid.remove(bad)
    new.conformance = np.where(grid.active, conf, grid.conformance)
    new.samples_seen = grid.samples_seen + np.where(grid.active, probe_budget, 0)
    return new, bad


@dataclass(frozen=True)
class DarepcParams:
    pr: float = 0.9
    epsilon: float = 0.01
    delta: float = 0.001
    removal_threshold: float = 0.8
    max_state_depth: int = 12
    max_env_shrinks: int = 23
    horizon: Optional[int] = None
    probe_budget: int = 200
    seed: int = 0
    feature_map_id: str = "affine"
    n_samples: Optional[int] = None
    max_generators: Optional[int] = None
    jobs: int = 1

    def __post_init__(self) -> None:
        if not (0 < self.pr < 1 and 0 < self.epsilon < 1 and 0 < self.delta < 1):
            raise InvalidParam("pr, epsilon and delta must lie in (0, 1)")
        if self.max_state_depth < 0 or self.max_env_shrinks < 0:
            raise InvalidParam("budgets must be non-negative")
        if self.probe_budget < 1 or self.jobs < 1:
            raise InvalidParam("probe budget and jobs must be positive")


@dataclass
class DarepcOutcome:
    kind: str
    env: Optional[EnvGrid]
    contract: Optional[PerceptionContract] = None
    witness_state_box: Optional[HyperRect] = None
    witness_tube: Optional[ReachTube] = None
    cover: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    events: list = field(default_factory=list)
    reason: str = ""


@dataclass
class _Item:
    box: HyperRect
    depth: int
    path: str


def _verify(box: HyperRect, contract: PerceptionContract, plant: ClosedLoopSystem,
            requirement: Requirement, horizon: int, cap: np.ndarray,
            max_generators: Optional[int]) -> tuple:
    """Tube and verdict for one box; interval failures give a cut tube."""
    note = ""
    try:
        tube = reach_tube(box, contract, plant, horizon, cap=cap, max_generators=max_generators)
    except (Blowup, DomainError) as exc:
        tube = exc.tube
        note = f"{type(exc).__name__}: {exc}"
    return tube, check_tube(tube, requirement), note


# worker-side copies for the fork pool; set before the pool starts
_WORKER: dict = {}


def _verify_worker(box: HyperRect, contract: PerceptionContract) -> tuple:
    w = _WORKER
    return _verify(box, contract, w["plant"], w["requirement"], w["horizon"], w["cap"], w["max_generators"])


def _fmt_box(box: HyperRect) -> str:
    return "[" + ", ".join(f"[{lo:.6g}, {hi:.6g}]" for lo, hi in zip(box.lo, box.hi)) + "]"


def darepc(X_0: HyperRect, grid0: EnvGrid, requirement: Requirement, observer: Callable,
           plant: ClosedLoopSystem, params: DarepcParams, sampler: SamplerSpec,
           cap: Optional[np.ndarray] = None) -> DarepcOutcome:
    """Run the refinement loop from ``X_0`` and the grid ``grid0``.

    ``sampler`` fixes the state distribution used for learning and for the
    shrink probes; its environment part is replaced by the current grid.
    Boxes certified under an older contract are re-checked once the stack
    runs dry, so a Safe outcome's cover is Contained under its contract.
    """
    t_start = time.perf_counter()
    if not grid0.active[grid0.nominal_cell]:
        raise InvalidParam("the nominal cell must be active")
    horizon = plant.horizon if params.horizon is None else params.horizon
    cap = default_cap(requirement, plant.n_state) if cap is None else cap
    events: list = []
    stats = {"refinements_state": 0, "refinements_env": 0, "tubes_computed": 0, "contracts_learned": 0,
             "max_depth": 0}

    def note(msg: str) -> None:
        events.append(msg)
        log.info(msg)

    grid = grid0.copy()
    version = 0

    def learn(g: EnvGrid, v: int) -> PerceptionContract:
        stats["contracts_learned"] += 1
        c = learn_contract(sampler.state_box, g, observer, params.pr, params.epsilon, params.delta,
                           sampler.with_env(g), plant.observed_dims, params.feature_map_id,
                           params.n_samples, version=v)
        note(f"learn v{v}: {g.n_active} active cells, conformance "
             f"{c.calibration.empirical_conformance:.4f}, n={c.calibration.n_samples}")
        return c

    def finish(kind: str, **kw) -> DarepcOutcome:
        stats["wall_time"] = time.perf_counter() - t_start
        note(f"outcome {kind}" + (f": {kw['reason']}" if kw.get("reason") else ""))
        return DarepcOutcome(kind, grid, stats=stats, events=events, **kw)

    if requirement.first_empty is not None and requirement.first_empty <= horizon:
        return finish(COUNTEREXAMPLE, witness_state_box=X_0,
                      reason=f"R({requirement.first_empty}) is empty")

    # the loop presumes a safe run at the nominal point; say so when it fails
    nominal_run, _ = simulate_batch(plant, X_0.center[None], np.asarray(grid0.nominal, float)[None],
                                    observer, horizon)
    if not requirement.satisfied(nominal_run[0]).all():
        log.warning("the run from the centre of X_0 at the nominal environment violates R")
        events.append("warning: nominal run violates R")

    try:
        contract = learn(grid, version)
    except Exception as exc:  # learner failures end the run
        return finish(INCONCLUSIVE, reason=f"learning failed: {exc}")

    stack = [_Item(X_0, 0, "r")]
    done: list = []  # (item, tube, contract version)
    pool = None
    if params.jobs > 1:
        _WORKER.update(plant=plant, requirement=requirement, horizon=horizon, cap=cap,
                       max_generators=params.max_generators)
        pool = ProcessPoolExecutor(params.jobs, mp_context=multiprocessing.get_context("fork"))

    def run_batch(items: list) -> list:
        if pool is None or len(items) == 1:
            return [_verify(it.box, contract, plant, requirement, horizon, cap, params.max_generators)
                    for it in items]
        return list(pool.map(_verify_worker, [it.box for it in items], [contract] * len(items)))

    try:
        while stack or any(v != version for _, _, v in done):
            if not stack:
                stale = [d for d in done if d[2] != version]
                done = [d for d in done if d[2] == version]
                note(f"re-check {len(stale)} boxes under contract v{version}")
                stack.extend(d[0] for d in reversed(stale))
                continue
            # speculative batch from the top of the stack, consumed in pop order
            batch = stack[-params.jobs:][::-1]
            try:
                results = run_batch(batch)
            except Exception as exc:
                return finish(INCONCLUSIVE, reason=f"reach failed: {exc}")
            for item, (tube, verdict, err) in zip(batch, results):
                stack.pop()
                stats["tubes_computed"] += 1
                stats["max_depth"] = max(stats["max_depth"], item.depth)
                msg = f"box {item.path} depth {item.depth} v{version}: {verdict.kind}"
                if verdict.first_violation_t is not None:
                    msg += f" at t={verdict.first_violation_t}"
                if err:
                    msg += f" ({err})"
                note(msg)
                if verdict.kind == FULL_EXIT:
                    return finish(COUNTEREXAMPLE, contract=contract, witness_state_box=item.box,
                                  witness_tube=tube, cover=[(d[0].box, d[1]) for d in done])
                if verdict.kind == CONTAINED:
                    done.append((item, tube, version))
                    continue
                # partial exit: split, shrink, re-learn; later results are stale
                if item.depth + 1 > params.max_state_depth:
                    return finish(INCONCLUSIVE, reason=f"state depth budget {params.max_state_depth} exhausted")
                if stats["refinements_env"] >= params.max_env_shrinks:
                    return finish(INCONCLUSIVE, reason=f"env shrink budget {params.max_env_shrinks} exhausted")
                try:
                    X1, X2 = refine_state(item.box, X_0)
                except DegenerateBox as exc:
                    return finish(INCONCLUSIVE, reason=str(exc))
                stack.append(_Item(X1, item.depth + 1, item.path + "0"))
                stack.append(_Item(X2, item.depth + 1, item.path + "1"))
                stats["refinements_state"] += 1
                rng = rng_for(params.seed, 2, stats["refinements_env"])
                before = grid.n_active
                grid, removed = shrink_env(grid, contract, observer, params.probe_budget,
                                           sampler.with_env(grid), rng, params.removal_threshold)
                assert grid.active[grid.nominal_cell]
                stats["refinements_env"] += 1
                note(f"shrink {stats['refinements_env']}: {before} -> {grid.n_active} cells, removed {removed}")
                version += 1
                try:
                    contract = learn(grid, version)
                except Exception as exc:
                    return finish(INCONCLUSIVE, reason=f"learning failed: {exc}")
                break
    finally:
        if pool is not None:
            pool.shutdown()
            _WORKER.clear()

    return finish(SAFE, contract=contract, cover=[(d[0].box, d[1]) for d in done])


@dataclass
class ValidationReport:
    mode: str
    n_sims: int
    n_satisfied: int
    n_violated: int
    observation_conformance: float
    in_tube: Optional[int] = None
    records: list = field(default_factory=list)

    @property
    def fraction_satisfied(self) -> float:
        return self.n_satisfied / self.n_sims if self.n_sims else float("nan")

    @property
    def fraction_violated(self) -> float:
        return self.n_violated / self.n_sims if self.n_sims else float("nan")


def validate_outcome(outcome: DarepcOutcome, X_0: HyperRect, plant: ClosedLoopSystem, observer: Callable,
                     requirement: Requirement, n_sims: int, seed: int, outside: bool = False,
                     horizon: Optional[int] = None) -> ValidationReport:
    """Simulate the real observer against the outcome.

    Safe: initial states uniform over ``X_0`` with environments over the
    active cells (or, with ``outside``, over the removed cells). Counterexample:
    states from the witness box under the retained cells.
    """
    if outcome.kind not in (SAFE, COUNTEREXAMPLE):
        raise InvalidParam("only Safe and Counterexample outcomes can be validated")
    grid = outcome.env
    horizon = plant.horizon if horizon is None else horizon
    rng = rng_for(seed, 3, int(outside))
    if outcome.kind == SAFE:
        box = X_0
        cells = np.flatnonzero(~grid.active) if outside else grid.active_cells()
        mode = "safe-outside" if outside else "safe"
    else:
        box = outcome.witness_state_box
        cells = grid.active_cells()
        mode = "counterexample"
    if cells.size == 0:
        raise InvalidParam("no cells to sample environments from")
    x0 = box.sample(rng, n_sims)
    envs = grid.sample(rng, n_sims, cells=cells)
    states, obs = simulate_batch(plant, x0, envs, observer, horizon)
    ok = requirement.satisfied(states).all(axis=1)
    conf = float("nan")
    if outcome.contract is not None:
        X = states[:, :-1].reshape(-1, plant.n_state)
        conf = float(np.mean(outcome.contract.conforms(X, obs.reshape(-1, plant.n_obs))))
    in_tube = None
    if outcome.kind == SAFE and outcome.cover and not outside:
        in_tube = 0
        for i in range(n_sims):
            tubes = [t for b, t in outcome.cover if b.contains(x0[i])]
            in_tube += int(any(t.contains_states(states[i]).all() for t in tubes))
    records = []
    for i in range(n_sims):
        sat = requirement.satisfied(states[i])
        first = None if sat.all() else int(np.argmin(sat))
        records.append({"x0": x0[i].tolist(), "env": envs[i].tolist(), "satisfied": bool(ok[i]),
                        "first_violation_t": first})
    return ValidationReport(mode, n_sims, int(ok.sum()), int((~ok).sum()), conf, in_tube, records)


def report(outcome: DarepcOutcome, env_names: Optional[tuple] = None, include_events: bool = True) -> str:
    """Plain-text outcome report; wall time is left out so reruns compare equal."""
    lines = [f"outcome: {outcome.kind}"]
    if outcome.reason:
        lines.append(f"reason: {outcome.reason}")
    for k in ("refinements_state", "refinements_env", "tubes_computed", "contracts_learned", "max_depth"):
        if k in outcome.stats:
            lines.append(f"{k}: {outcome.stats[k]}")
    if outcome.contract is not None:
        cal = outcome.contract.calibration
        lines.append(f"contract_version: {outcome.contract.version}")
        lines.append(f"contract_conformance: {cal.empirical_conformance:.6f}")
        lines.append(f"contract_samples: {cal.n_samples}")
    if outcome.witness_state_box is not None:
        lines.append(f"witness_state_box: {_fmt_box(outcome.witness_state_box)}")
    if outcome.cover:
        lines.append(f"cover_boxes: {len(outcome.cover)}")
        for b, _ in outcome.cover:
            lines.append(f"  {_fmt_box(b)}")
    g = outcome.env
    if g is not None:
        names = env_names or tuple(f"e{i}" for i in range(g.bounds.ndim))
        lines.append(f"grid: resolution {list(g.resolution)}, active {g.n_active}/{g.n_cells}, "
                     f"nominal {list(g.nominal)}")
        header = ["cell"] + [f"{n}_lo" for n in names] + [f"{n}_hi" for n in names] + \
            ["status", "conformance", "samples"]
        lines.append("\t".join(header))
        for row in g.table():
            cells = [str(row[0])] + [f"{v:.6g}" for v in row[1:-3]] + \
                [row[-3], "nan" if np.isnan(row[-2]) else f"{row[-2]:.4f}", str(row[-1])]
            lines.append("\t".join(cells))
    if include_events and outcome.events:
        lines.append("events:")
        lines.extend(f"  {e}" for e in outcome.events)
    return "\n".join(lines) + "\n"
