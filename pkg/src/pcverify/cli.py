"""Command line runner: ``pcverify {learn,verify,simulate,sweep}``.

Exit codes: 0 success (Safe for verify), 2 configuration or domain error,
3 solver failure, 10 Counterexample, 11 Inconclusive. Every file written
starts with the config hash and seed so results can be traced to their
inputs; reruns with the same config write identical files.
"""

from __future__ import annotations

import argparse
import ast
import json
import logging
import os
import sys
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import ConfigError, Experiment, build_experiment, load_config
from .contract import learn_contract, rng_for
from .darepc import COUNTEREXAMPLE, INCONCLUSIVE, SAFE, darepc, report, validate_outcome
from .envgrid import EnvGrid
from .errors import InvalidParam, SingularDesign, SolverFailure
from .systems.base import simulate_batch

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_COUNTEREXAMPLE = 10
EXIT_INCONCLUSIVE = 11

_OUTCOME_EXIT = {SAFE: EXIT_OK, COUNTEREXAMPLE: EXIT_COUNTEREXAMPLE, INCONCLUSIVE: EXIT_INCONCLUSIVE}

log = logging.getLogger("pcverify")


def _out_dir(exp: Experiment, cli_out: Optional[str]) -> str:
    out = cli_out or os.environ.get("PCVERIFY_OUT") or exp.cfg["run"]["out"]
    os.makedirs(out, exist_ok=True)
    return out


def _header(exp: Experiment, command: str) -> str:
    return f"# pcverify {__version__} {command} plant={exp.cfg['run']['plant']} " \
           f"config_hash={exp.hash} seed={exp.seed}\n"


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    def fmt(v):
        if isinstance(v, (float, np.floating)):
            return "nan" if np.isnan(v) else repr(float(v))
        return str(v)
    lines = ["\t".join(header)] + ["\t".join(fmt(v) for v in r) for r in rows]
    return "\n".join(lines) + "\n"


# -- learn ---------------------------------------------------------------------

def cmd_learn(exp: Experiment, out: str) -> int:
    p = exp.params
    contract = learn_contract(exp.sampler.state_box, exp.grid, exp.observer, p.pr, p.epsilon, p.delta,
                              exp.sampler, exp.plant.observed_dims, p.feature_map_id, p.n_samples)
    doc = contract.to_dict()
    doc["config_hash"] = exp.hash
    doc["seed"] = exp.seed
    _write(os.path.join(out, "contract.json"), json.dumps(doc, sort_keys=True, indent=1) + "\n")
    cal = contract.calibration
    names = [exp.plant.state_names[d] for d in exp.plant.observed_dims]
    lines = [
        f"n_samples: {cal.n_samples}",
        f"pr: {cal.pr}",
        f"epsilon: {cal.epsilon!r}",
        f"delta: {cal.delta}",
        f"quantile: {cal.quantile!r}",
        f"empirical_conformance: {cal.empirical_conformance:.6f}",
        f"clamp_count: {cal.clamp_count}",
        "per_dim_coverage: " + ", ".join(f"{n}={c:.6f}" for n, c in zip(names, cal.per_dim_coverage)),
    ]
    _write(os.path.join(out, "learn_report.txt"), _header(exp, "learn") + "\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


# -- verify --------------------------------------------------------------------

def _grid_rows(grid: EnvGrid) -> list:
    return [list(r) for r in grid.table()]


def cmd_verify(exp: Experiment, out: str) -> int:
    from . import plotting

    outcome = darepc(exp.initial_set, exp.grid, exp.requirement, exp.observer, exp.plant, exp.params, exp.sampler)
    plant = exp.plant
    text = _header(exp, "verify") + report(outcome, plant.env_names)
    names = plant.env_names
    grid_header = ["cell"] + [f"{n}_lo" for n in names] + [f"{n}_hi" for n in names] + \
        ["status", "conformance", "samples"]
    _write(os.path.join(out, "grid.tsv"), _header(exp, "verify") + _table(grid_header, _grid_rows(outcome.env)))
    plotting.plot_grid(outcome.env, os.path.join(out, "grid.png"), names, f"{outcome.kind}: active cells")

    tubes = [t for _, t in outcome.cover]
    if outcome.witness_tube is not None:
        tubes.append(outcome.witness_tube)
    tube_dir = os.path.join(out, "tubes")
    os.makedirs(tube_dir, exist_ok=True)
    for i, tube in enumerate(tubes):
        _write(os.path.join(tube_dir, f"tube_{i:03d}.csv"), _header(exp, "verify") + tube.dump(plant.state_names))

    val_lines = []
    sims = None
    if outcome.kind in (SAFE, COUNTEREXAMPLE):
        n_sims = int(exp.cfg["validate"]["n_sims"])
        vr = validate_outcome(outcome, exp.initial_set, plant, exp.observer, exp.requirement, n_sims,
                              exp.seed, horizon=exp.horizon)
        val_lines.append(f"validation_{vr.mode}: {vr.n_satisfied}/{vr.n_sims} satisfy R, "
                         f"{vr.n_violated}/{vr.n_sims} violate R, observation conformance "
                         f"{vr.observation_conformance:.4f}"
                         + ("" if vr.in_tube is None else f", {vr.in_tube}/{vr.n_sims} inside the tubes"))
        rows = [[i, r["satisfied"], r["first_violation_t"] if r["first_violation_t"] is not None else -1,
                 *r["x0"], *r["env"]] for i, r in enumerate(vr.records)]
        header = ["sim", "satisfied", "first_violation_t"] + [f"x0_{n}" for n in plant.state_names] + list(names)
        _write(os.path.join(out, "validation.tsv"), _header(exp, "verify") + _table(header, rows))
        n_out = int(exp.cfg["validate"]["n_outside"])
        if outcome.kind == SAFE and n_out > 0 and not outcome.env.active.all():
            vo = validate_outcome(outcome, exp.initial_set, plant, exp.observer, exp.requirement, n_out,
                                  exp.seed, outside=True, horizon=exp.horizon)
            val_lines.append(f"validation_{vo.mode}: {vo.n_violated}/{vo.n_sims} violate R")
        rng = rng_for(exp.seed, 4)
        box = exp.initial_set if outcome.kind == SAFE else outcome.witness_state_box
        cells = outcome.env.active_cells()
        sims, _ = simulate_batch(plant, box.sample(rng, 10), outcome.env.sample(rng, 10, cells=cells),
                                 exp.observer, exp.horizon)
    if tubes:
        mask = list(exp.requirement.dim_mask)
        plotting.plot_tubes(tubes, exp.requirement, mask, os.path.join(out, "tubes.png"), plant.dt,
                            plant.state_names, sims, f"{outcome.kind}: reach tubes and requirement")
    text += "".join(line + "\n" for line in val_lines)
    _write(os.path.join(out, "outcome.txt"), text)
    summary = text.split("cell\t", 1)[0] + "".join(line + "\n" for line in val_lines)
    print(summary, end="")
    log.info("wall time %.1f s", outcome.stats.get("wall_time", float("nan")))
    return _OUTCOME_EXIT[outcome.kind]


# -- simulate ------------------------------------------------------------------

def _vector(value, n: int, what: str) -> np.ndarray:
    if isinstance(value, str):
        try:
            value = ast.literal_eval(value)
        except (ValueError, SyntaxError) as exc:
            raise ConfigError(f"cannot parse {what}: {value!r}") from exc
    v = np.asarray(value, dtype=float).reshape(-1)
    if v.size != n:
        raise ConfigError(f"{what} needs {n} values, got {v.size}")
    return v


def cmd_simulate(exp: Experiment, out: str, x0=None, env=None, horizon=None) -> int:
    plant = exp.plant
    sim = exp.cfg["simulate"]
    x0 = x0 if x0 is not None else sim["x0"]
    env = env if env is not None else sim["env"]
    horizon = horizon if horizon is not None else sim["horizon"]
    x0 = exp.initial_set.center if x0 is None else _vector(x0, plant.n_state, "x0")
    env = np.asarray(plant.nominal_env, dtype=float) if env is None else _vector(env, plant.env_bounds.ndim, "env")
    horizon = exp.horizon if horizon is None else int(horizon)
    if horizon < 0 or horizon > plant.horizon:
        raise ConfigError(f"horizon must lie in [0, {plant.horizon}]")
    if not plant.state_domain.contains(x0):
        raise ConfigError("x0 lies outside the plant's state domain")
    if not plant.env_bounds.contains(env):
        raise ConfigError("environment point lies outside the environment box")
    states, obs = simulate_batch(plant, x0[None, :], env[None, :], exp.observer, horizon)
    states, obs = states[0], obs[0]
    flags = exp.requirement.satisfied(states)
    obs_names = [f"obs_{plant.state_names[d]}" for d in plant.observed_dims]
    rows = []
    for t in range(horizon + 1):
        o = obs[t].tolist() if t < horizon else [float("nan")] * plant.n_obs
        rows.append([t, *states[t].tolist(), *o, bool(flags[t])])
    header = ["t", *plant.state_names, *obs_names, "satisfied"]
    _write(os.path.join(out, "trajectory.tsv"), _header(exp, "simulate") + _table(header, rows))
    print(f"steps: {horizon}, satisfied all: {bool(flags.all())}")
    return EXIT_OK


# -- sweep ---------------------------------------------------------------------

def cmd_sweep(exp: Experiment, out: str, resolution=None, n_per_cell=None) -> int:
    from . import plotting

    plant = exp.plant
    sw = exp.cfg["sweep"]
    resolution = sw["resolution"] if resolution is None else resolution
    n = int(sw["n_per_cell"] if n_per_cell is None else n_per_cell)
    if n < 1:
        raise ConfigError("sweep.n_per_cell must be at least 1")
    try:
        grid = EnvGrid.uniform(exp.grid.bounds, tuple(resolution), exp.grid.nominal)
    except Exception as exc:
        raise ConfigError(f"bad sweep grid: {exc}") from exc
    rng = rng_for(exp.seed, 5)
    rows, bounds, rates = [], [], []
    for idx, box, _ in grid.iter_cells():
        x0 = exp.initial_set.sample(rng, n)
        envs = box.sample(rng, n)
        states, _ = simulate_batch(plant, x0, envs, exp.observer, exp.horizon)
        rate = float(np.mean(~exp.requirement.satisfied(states).all(axis=1)))
        rows.append([idx, *box.lo.tolist(), *box.hi.tolist(), n, rate])
        bounds.append([*box.lo, *box.hi])
        rates.append(rate)
    names = plant.env_names
    header = ["cell"] + [f"{k}_lo" for k in names] + [f"{k}_hi" for k in names] + ["n", "violation_rate"]
    _write(os.path.join(out, "sweep.tsv"), _header(exp, "sweep") + _table(header, rows))
    plotting.plot_sweep(np.array(bounds), np.array(rates), os.path.join(out, "sweep.png"), names,
                        "violation rate per environment cell")
    print(f"cells: {len(rows)}, mean violation rate: {np.mean(rates):.4f}")
    return EXIT_OK


# -- entry ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pcverify", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"pcverify {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("learn", "verify", "simulate", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI experiment file (defaults are used for anything missing)")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--out", help="output directory (else $PCVERIFY_OUT, else run.out)")
        p.add_argument("--jobs", type=int, help="worker processes for tube checks")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "simulate":
            p.add_argument("--x0", help="initial state as a list literal")
            p.add_argument("--env", help="environment point as a list literal")
            p.add_argument("--horizon", type=int)
        if name == "sweep":
            p.add_argument("--resolution", help="cells per env dim, e.g. '[4, 4]'")
            p.add_argument("--n-per-cell", type=int)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, args.seed)
        if args.jobs is not None:
            cfg["run"]["jobs"] = int(args.jobs)
        exp = build_experiment(cfg)
        out = _out_dir(exp, args.out)
        if args.command == "learn":
            return cmd_learn(exp, out)
        if args.command == "verify":
            return cmd_verify(exp, out)
        if args.command == "simulate":
            return cmd_simulate(exp, out, args.x0, args.env, args.horizon)
        res = None
        if args.resolution is not None:
            res = _vector(args.resolution, exp.grid.bounds.ndim, "resolution").astype(int).tolist()
        return cmd_sweep(exp, out, res, args.n_per_cell)
    except InvalidParam as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverFailure, SingularDesign) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
