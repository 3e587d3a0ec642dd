"""Acceptance criteria, one test each.

Every test appends a ``PASS``/``FAIL`` line to the session log, printed in the
terminal summary. The end-to-end runs (X01, X02, drone) are computed once per
module and reused by the determinism check, which reruns them.
"""
import filecmp
import json
import math
import os

import numpy as np
import pytest

from pcverify import cli
from pcverify.config import build_experiment, load_config, parse_config
from pcverify.contract import (SamplerSpec, draw_samples, empirical_conformance, fit_radius, learn_contract,
                               required_samples, rng_for)
from pcverify.darepc import shrink_env
from pcverify.envgrid import EnvGrid
from pcverify.geometry import HyperRect
from pcverify.reach import reach_tube
from pcverify.systems import autoland as al
from pcverify.systems import dronerace as dr
from pcverify.systems.base import simulate_batch

pytestmark = pytest.mark.slow

DRONE_INI = '[run]\nplant = "dronerace"\n'
X02_INI = '[initial_set]\nbox = "X02"\n'


def record(log, n, ok, detail):
    log.append(f"{'PASS' if ok else 'FAIL'} criterion {n:>2}: {detail}")
    print(log[-1])
    return ok


# -- 1 ---------------------------------------------------------------------

def test_c01_hoeffding_calibration(acceptance_log):
    a, b = required_samples(0.01, 0.001), required_samples(0.02, 0.01)
    ok = a == 34539 and b in (5756, 5757)
    assert record(acceptance_log, 1, ok, f"required_samples -> {a}, {b}")


# -- 2 ---------------------------------------------------------------------

def _pinball(r, b, tau):
    u = r - b
    return float(np.mean(np.maximum(tau * u, (tau - 1.0) * u)))


def test_c02_quantile_lp_matches_bruteforce(acceptance_log):
    rng = np.random.default_rng(2024)
    worst_gap, inside = 0.0, 0
    for k in range(50):
        n = int(rng.integers(1, 501))
        r = rng.exponential(1.0, n)
        if k % 2:
            r = np.round(r, 1)  # ties
        tau = float(rng.uniform(0.05, 0.995))
        _, b = fit_radius(None, r, tau, "constant")
        # the loss is convex and piecewise linear with kinks at the data
        losses = np.array([_pinball(r, v, tau) for v in r])
        best = losses.min()
        argmins = r[losses <= best + 1e-12 * max(1.0, best)]
        lo, hi = argmins.min(), argmins.max()
        inside += int(lo - 1e-9 <= b <= hi + 1e-9)
        worst_gap = max(worst_gap, _pinball(r, b, tau) - best)
    ok = inside == 50 and worst_gap <= 1e-8
    assert record(acceptance_log, 2, ok,
                  f"{inside}/50 LP solutions in the minimiser interval, worst loss gap {worst_gap:.2e}")


# -- 3 ---------------------------------------------------------------------

def _coverage_run(seed):
    exp = build_experiment(load_config(None, seed=seed))
    p = exp.params
    contract = learn_contract(exp.sampler.state_box, exp.grid, exp.observer, 0.9, 0.01, 0.001, exp.sampler,
                              exp.plant.observed_dims)
    held = draw_samples(exp.sampler, exp.observer, required_samples(0.01, 0.001), stream=(9, 9))
    return contract, empirical_conformance(contract, held), p


@pytest.fixture(scope="module")
def coverage():
    return {s: _coverage_run(s) for s in range(5)}


def test_c03_contract_coverage(coverage, acceptance_log):
    parts, ok = [], True
    for s, (c, held, _) in coverage.items():
        train = c.calibration.empirical_conformance
        ok &= train >= 0.91 and held >= 0.89
        parts.append(f"s{s} {train:.4f}/{held:.4f}")
    assert record(acceptance_log, 3, ok, "train/held-out " + ", ".join(parts))


# -- 4 ---------------------------------------------------------------------

def _soundness_run(cfg_text, radius, frac):
    """Tube from a centred sub-box under a near-nominal contract, plus clamped sims."""
    exp = build_experiment(parse_config(cfg_text))
    p, plant = exp.params, exp.plant
    grid = exp.grid
    far = np.flatnonzero(grid.normalized_distance(np.arange(grid.n_cells)) > radius)
    grid = grid.remove(far)
    sampler = exp.sampler.with_env(grid)
    contract = learn_contract(sampler.state_box, grid, exp.observer, p.pr, p.epsilon, p.delta, sampler,
                              plant.observed_dims)
    X = exp.initial_set
    half = frac * (X.hi - X.lo) / 2
    X = HyperRect(X.center - half, X.center + half)
    tube = reach_tube(X, contract, plant, exp.horizon)

    def clamped(states, envs):
        return contract.clamp(states, exp.observer(states, envs))

    rng = rng_for(exp.seed, 40)
    states, _ = simulate_batch(plant, X.sample(rng, 100), grid.sample(rng, 100), clamped, exp.horizon)
    inside = sum(bool(tube.contains_states(s).all()) for s in states)
    return tube, inside


@pytest.fixture(scope="module")
def soundness():
    return {"autoland": _soundness_run("", 0.15, 0.25), "dronerace": _soundness_run(DRONE_INI, 0.15, 0.5)}


def test_c04_reach_soundness(soundness, acceptance_log):
    ok = all(t.complete and inside == 100 for t, inside in soundness.values())
    detail = ", ".join(f"{k} {inside}/100 inside a {t.n_steps}-step tube" for k, (t, inside) in soundness.items())
    assert record(acceptance_log, 4, ok, detail)


# -- 5 ---------------------------------------------------------------------

def _nesting_run():
    plant, obs = al.make_autoland(), al.AutoLandObserver()
    grid = EnvGrid.uniform(al.ENV_BOUNDS, 16, al.NOMINAL_ENV)
    sampler = SamplerSpec("uniform_box", plant.state_domain, grid, 0)
    c = learn_contract(plant.state_domain, grid, obs, 0.9, 0.01, 0.001, sampler, plant.observed_dims)
    contracts = {0: c}
    for k in range(1, 7):
        grid, _ = shrink_env(grid, c, obs, 200, sampler.with_env(grid), rng_for(0, 2, k - 1))
        c = learn_contract(plant.state_domain, grid, obs, 0.9, 0.01, 0.001, sampler.with_env(grid),
                           plant.observed_dims, version=k)
        contracts[k] = c
    X = plant.state_domain.sample(np.random.default_rng(9), 100)
    Y = obs(X, np.tile(al.NOMINAL_ENV, (100, 1)))
    return contracts, X, Y


@pytest.fixture(scope="module")
def nesting():
    return _nesting_run()


def test_c05_contract_nesting(nesting, acceptance_log):
    contracts, X, Y = nesting
    boxes = {}
    for k in (0, 3, 6):
        c, r = contracts[k].center(X), contracts[k].radius(X)
        boxes[k] = (c - r, c + r)
    nested = {}
    for inner, outer in ((6, 3), (3, 0), (6, 0)):
        (ilo, ihi), (olo, ohi) = boxes[inner], boxes[outer]
        slack = np.maximum(olo - ilo, ihi - ohi) / (ohi - olo)
        nested[(inner, outer)] = float(np.mean(np.all(slack <= 0.05, axis=1)))
    contains = {k: float(np.mean(np.all((Y >= lo) & (Y <= hi), axis=1))) for k, (lo, hi) in boxes.items()}
    ok = all(v == 1.0 for v in nested.values()) and all(v >= 0.99 for v in contains.values())
    detail = ("nested " + ", ".join(f"{i}in{o} {v:.2f}" for (i, o), v in nested.items())
              + "; contains h(x,e_d) " + ", ".join(f"{k}: {v:.2f}" for k, v in contains.items()))
    assert record(acceptance_log, 5, ok, detail)


# -- 6, 7, 8 -----------------------------------------------------------------

def _verify(out, cfg_text):
    os.makedirs(out, exist_ok=True)
    args = ["verify", "--out", out]
    if cfg_text:
        path = os.path.join(out, "..", os.path.basename(out) + ".ini")
        with open(path, "w") as fh:
            fh.write(cfg_text)
        args += ["--config", path]
    code = cli.main(args)
    text = open(os.path.join(out, "outcome.txt")).read()
    fields = dict(ln.split(": ", 1) for ln in text.splitlines() if ": " in ln and not ln.startswith(("#", " ")))
    lines = open(os.path.join(out, "grid.tsv")).read().splitlines()
    header = lines[1].split("\t")
    grid = [dict(zip(header, ln.split("\t"))) for ln in lines[2:]]
    return {"code": code, "fields": fields, "grid": grid, "out": out}


def _count(field, word):
    """``'29/30 satisfy R, ...'`` -> (29, 30) for the clause containing ``word``."""
    for clause in field.split(", "):
        if word in clause:
            a, b = clause.split()[0].split("/")
            return int(a), int(b)
    raise AssertionError(f"no {word!r} clause in {field!r}")


SCENARIOS = {"x01": "", "x02": X02_INI, "drone": DRONE_INI}


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("accept")
    return {k: _verify(str(base / k), v) for k, v in SCENARIOS.items()}


def _cells_inside(grid, band):
    (a0, a1), (s0, s1) = band
    return [r for r in grid if float(r["ambient_lo"]) >= a0 and float(r["ambient_hi"]) <= a1
            and float(r["sun_angle_lo"]) >= s0 and float(r["sun_angle_hi"]) <= s1]


def test_c06_x01_safe(runs, acceptance_log):
    r = runs["x01"]
    obs = al.AutoLandObserver()
    glare = _cells_inside(r["grid"], obs.glare_band)
    comp = _cells_inside(r["grid"], obs.compensated_band)
    glare_kept = sum(c["status"] == "active" for c in glare)
    comp_kept = sum(c["status"] == "active" for c in comp)
    sat, n = _count(r["fields"].get("validation_safe", "0/0 satisfy R"), "satisfy")
    ok = r["code"] == 0 and r["fields"]["outcome"] == "Safe" and sat >= 29 and n == 30 \
        and glare_kept == 0 and comp_kept >= 1
    detail = (f"{r['fields']['outcome']} (exit {r['code']}), {sat}/{n} satisfy R, glare cells kept "
              f"{glare_kept}/{len(glare)}, compensated cells kept {comp_kept}/{len(comp)}")
    assert record(acceptance_log, 6, ok, detail)


def test_c07_x02_counterexample(runs, acceptance_log):
    r = runs["x02"]
    bad, n = _count(r["fields"].get("validation_counterexample", "0/0 violate R"), "violate")
    ok = r["code"] == 10 and r["fields"]["outcome"] == "Counterexample" and n == 30 and bad >= 0.8 * n
    assert record(acceptance_log, 7, ok, f"{r['fields']['outcome']} (exit {r['code']}), {bad}/{n} violate R")


def test_c08_drone_safe(runs, acceptance_log):
    r = runs["drone"]
    f = r["fields"]
    shrinks = int(f.get("refinements_env", -1))
    sat, n_in = _count(f.get("validation_safe", "0/0 satisfy R"), "satisfy")
    bad, n_out = _count(f.get("validation_safe-outside", "0/0 violate R"), "violate")
    ok = r["code"] == 0 and f["outcome"] == "Safe" and 0 <= shrinks <= 23 and n_in == 20 and sat == 20 \
        and n_out == 20 and bad >= 18
    detail = (f"{f['outcome']} (exit {r['code']}) after {shrinks} shrinks, inside {sat}/{n_in} satisfy R, "
              f"outside {bad}/{n_out} violate R")
    assert record(acceptance_log, 8, ok, detail)


# -- 9 ---------------------------------------------------------------------

def _same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(_same_tree(os.path.join(a, d), os.path.join(b, d))
                                               for d in cmp.common_dirs)


def test_c09_determinism(coverage, soundness, nesting, runs, tmp_path_factory, acceptance_log):
    same = {}
    again = {s: _coverage_run(s) for s in coverage}
    same[3] = all(json.dumps(coverage[s][0].to_dict()) == json.dumps(again[s][0].to_dict())
                  and coverage[s][1] == again[s][1] for s in coverage)
    again = {"autoland": _soundness_run("", 0.15, 0.25), "dronerace": _soundness_run(DRONE_INI, 0.15, 0.5)}
    same[4] = all(soundness[k][0].dump() == again[k][0].dump() and soundness[k][1] == again[k][1]
                  for k in soundness)
    contracts, X, Y = _nesting_run()
    same[5] = all(json.dumps(contracts[k].to_dict()) == json.dumps(nesting[0][k].to_dict()) for k in contracts) \
        and np.array_equal(X, nesting[1]) and np.array_equal(Y, nesting[2])
    base = tmp_path_factory.mktemp("accept_again")
    for k, n in zip(SCENARIOS, (6, 7, 8)):
        rerun = _verify(str(base / k), SCENARIOS[k])
        same[n] = _same_tree(runs[k]["out"], rerun["out"])
    ok = all(same.values())
    detail = "byte-identical reruns: " + ", ".join(f"c{k} {'yes' if v else 'NO'}" for k, v in same.items())
    assert record(acceptance_log, 9, ok, detail)


# -- 10 --------------------------------------------------------------------

def test_c10_plant_sanity(acceptance_log):
    hover = float(np.linalg.norm(dr.drone_derivative([0.0] * 12, [0.0, 0.0, dr.HOVER_THRUST, 0.0])))
    ref0, ref1 = al.autoland_reference(0), al.autoland_reference(1)
    nxt = np.array(al.autoland_step(list(ref0), list(ref0[:5]), 0))
    advance = float(np.linalg.norm(nxt[:3] - ref0[:3]))
    expected = float(ref0[5]) * al.DT
    ref = np.zeros(12)
    ref[0] = 1.0
    ax = float(dr.drone_controller([0.0] * 12, ref)[0])
    ok = hover < 1e-12 and math.isclose(advance, expected, abs_tol=1e-12) and np.allclose(nxt, ref1, atol=1e-12) \
        and math.isclose(ax, 3.16, abs_tol=1e-12)
    detail = f"hover |f| {hover:.1e}, step advance {advance!r} (v dt {expected!r}), ax {ax!r}"
    assert record(acceptance_log, 10, ok, detail)
