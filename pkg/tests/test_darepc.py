import numpy as np
import pytest

from conftest import toy_contract, toy_plant, toy_requirement
from pcverify.contract import SamplerSpec
from pcverify.darepc import (
    COUNTEREXAMPLE,
    INCONCLUSIVE,
    SAFE,
    DarepcParams,
    darepc,
    refine_state,
    report,
    shrink_env,
    validate_outcome,
)
from pcverify.envgrid import EnvGrid
from pcverify.errors import DegenerateBox, InvalidParam
from pcverify.geometry import HyperRect
from pcverify.systems.base import Requirement, hash_noise

PARAMS = DarepcParams(pr=0.8, epsilon=0.1, delta=0.1, probe_budget=50, seed=0)


def exact(X, E):
    return np.atleast_2d(X)[:, :2]


def noisy(scale):
    """Error grows with the first env coordinate."""
    def obs(X, E):
        X, E = np.atleast_2d(X), np.atleast_2d(E)
        w = np.stack([hash_noise(np.hstack([X, E]), np.full(4, 1e-3), j) for j in range(2)], axis=1)
        return X[:, :2] + scale * (0.01 + E[:, :1]) * w
    return obs


def setup(res=4):
    plant = toy_plant(horizon=30)
    grid = EnvGrid.uniform(plant.env_bounds, (res, res), (0.1, 0.1))
    sampler = SamplerSpec("uniform_box", HyperRect([-1, -1], [1, 1]), grid, 0)
    return plant, grid, sampler


def test_refine_state_examples():
    unit = HyperRect([0, 0], [1, 1])
    a, b = refine_state(unit, unit)
    assert a == HyperRect([0, 0], [0.5, 1]) and b == HyperRect([0.5, 0], [1, 1])
    X0 = HyperRect([0, 0], [10, 10])
    a, _ = refine_state(HyperRect([0, 0], [1, 9]), X0)
    assert a == HyperRect([0, 0], [1, 4.5])
    with pytest.raises(DegenerateBox):
        refine_state(HyperRect.point([1, 1]), X0)


def test_refine_partitions():
    X0 = HyperRect([0, -1, 2], [3, 1, 2.5])
    leaves = [X0]
    for _ in range(4):
        leaves = [h for b in leaves for h in refine_state(b, X0)]
    assert len(leaves) == 16
    assert sum(b.volume() for b in leaves) == pytest.approx(X0.volume())


def test_shrink_single_cell_unchanged():
    plant, grid, sampler = setup(1)
    new, removed = shrink_env(grid, toy_contract(1.0), exact, 10, sampler, np.random.default_rng(0))
    assert removed == [] and new.n_active == 1


def test_shrink_removes_bad_cell():
    plant = toy_plant()
    grid = EnvGrid.uniform(HyperRect([0, 0], [1, 1]), (2, 1), (0.25, 0.5))
    sampler = SamplerSpec("uniform_box", HyperRect([-1, -1], [1, 1]), grid, 0)

    def obs(X, E):
        return X[:, :2] + np.where(E[:, :1] > 0.5, 1.0, 0.0)

    new, removed = shrink_env(grid, toy_contract(0.1), obs, 20, sampler, np.random.default_rng(0))
    assert removed == [1] and new.active.tolist() == [True, False]
    assert new.conformance[1] == 0.0 and new.conformance[0] == 1.0


def test_shrink_farthest_corner():
    grid = EnvGrid.uniform(HyperRect([0, 0], [3, 3]), (3, 3), (1.5, 1.5))
    sampler = SamplerSpec("uniform_box", HyperRect([-1, -1], [1, 1]), grid, 0)
    new, removed = shrink_env(grid, toy_contract(1.0), exact, 10, sampler, np.random.default_rng(0))
    assert removed == [0]
    new2, removed2 = shrink_env(new, toy_contract(1.0), exact, 10, sampler, np.random.default_rng(0))
    assert removed2 == [2]


def test_exact_observer_safe_without_refinement():
    plant, grid, sampler = setup()
    out = darepc(HyperRect([-0.3, -0.3], [0.3, 0.3]), grid, toy_requirement(30, 1.0), exact, plant,
                 PARAMS, sampler)
    assert out.kind == SAFE
    assert out.stats["refinements_state"] == 0 and out.stats["refinements_env"] == 0
    assert out.env.n_active == 16
    rep = validate_outcome(out, HyperRect([-0.3, -0.3], [0.3, 0.3]), plant, exact, toy_requirement(30, 1.0),
                           20, seed=1)
    assert rep.n_satisfied == 20 and rep.observation_conformance == 1.0 and rep.in_tube == 20


def test_disjoint_requirement_counterexample():
    plant, grid, sampler = setup()
    req = toy_requirement(30, 1.0)
    req.lo[0], req.hi[0] = 5.0, 6.0
    X0 = HyperRect([-0.3, -0.3], [0.3, 0.3])
    out = darepc(X0, grid, req, exact, plant, PARAMS, sampler)
    assert out.kind == COUNTEREXAMPLE and out.witness_state_box == X0
    assert out.stats["refinements_state"] == 0
    rep = validate_outcome(out, X0, plant, exact, req, 10, seed=0)
    assert rep.n_violated == 10


def test_empty_requirement_counterexample_immediately():
    plant, grid, sampler = setup()
    req = Requirement((0, 1), np.full((31, 2), 1.0), np.full((31, 2), -1.0))
    out = darepc(HyperRect([-0.3, -0.3], [0.3, 0.3]), grid, req, exact, plant, PARAMS, sampler)
    assert out.kind == COUNTEREXAMPLE and out.stats["contracts_learned"] == 0


def test_refinement_then_safe_and_cover():
    plant, grid, sampler = setup()
    X0 = HyperRect([-0.45, -0.45], [0.45, 0.45])
    req = toy_requirement(30, 0.75)
    out = darepc(X0, grid, req, noisy(0.5), plant, PARAMS, sampler)
    assert out.kind == SAFE, out.events
    assert out.stats["refinements_state"] >= 1
    # cover partitions X0 and every box is Contained under the final contract
    assert sum(b.volume() for b, _ in out.cover) == pytest.approx(X0.volume())
    from pcverify.reach import CONTAINED, check_tube, reach_tube
    for b, _ in out.cover:
        assert check_tube(reach_tube(b, out.contract, plant, 30), req).kind == CONTAINED
    assert out.env.active[out.env.nominal_cell]


def test_budget_exhaustion_inconclusive():
    plant, grid, sampler = setup()
    X0 = HyperRect([-0.45, -0.45], [0.45, 0.45])
    params = DarepcParams(pr=0.8, epsilon=0.1, delta=0.1, probe_budget=50, seed=0, max_state_depth=0)
    out = darepc(X0, grid, toy_requirement(30, 0.75), noisy(0.5), plant, params, sampler)
    assert out.kind == INCONCLUSIVE and "depth" in out.reason
    text = report(out, ("e0", "e1"))
    assert text.startswith("outcome: Inconclusive")


def test_determinism():
    plant, grid, sampler = setup()
    X0 = HyperRect([-0.45, -0.45], [0.45, 0.45])
    runs = [darepc(X0, grid, toy_requirement(30, 0.75), noisy(0.5), plant, PARAMS, sampler) for _ in range(2)]
    assert report(runs[0]) == report(runs[1])


def test_nominal_cell_must_be_active():
    plant, grid, sampler = setup()
    grid.active[grid.nominal_cell] = False
    with pytest.raises(InvalidParam):
        darepc(HyperRect([0, 0], [0.1, 0.1]), grid, toy_requirement(30), exact, plant, PARAMS, sampler)


def test_nominal_violation_is_a_warning(caplog):
    plant, grid, sampler = setup()

    def biased(X, E):
        return np.atleast_2d(X)[:, :2] + 3.0  # pushes the loop out of R everywhere

    with caplog.at_level("WARNING", logger="pcverify.darepc"):
        out = darepc(HyperRect([-0.1, -0.1], [0.1, 0.1]), grid, toy_requirement(30, 0.75), biased, plant,
                     PARAMS, sampler)
    assert "warning: nominal run violates R" in out.events
    assert any("nominal environment violates R" in r.message for r in caplog.records)
    assert out.kind in (SAFE, COUNTEREXAMPLE, INCONCLUSIVE)
