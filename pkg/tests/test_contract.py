import math

import numpy as np
import pytest

from pcverify.contract import (
    PerceptionContract,
    SampleSet,
    SamplerSpec,
    contract_output_set,
    empirical_conformance,
    epsilon_for_samples,
    fit_center,
    fit_radius,
    learn_contract,
    pinball_loss,
    required_samples,
)
from pcverify.envgrid import EnvGrid
from pcverify.errors import InvalidParam, SamplerExhausted, SingularDesign
from pcverify.geometry import HyperRect


def test_required_samples():
    assert required_samples(0.01, 0.001) == 34539
    assert required_samples(0.02, 0.01) == 5757
    assert required_samples(0.5, math.exp(-1)) == 2
    for bad in ((0.0, 0.1), (0.1, 1.0), (1.2, 0.1), (0.1, -0.5)):
        with pytest.raises(InvalidParam):
            required_samples(*bad)


def test_epsilon_for_samples():
    assert epsilon_for_samples(80000, 0.001) == pytest.approx(0.006571, abs=5e-6)
    e = epsilon_for_samples(62638, 0.001)
    assert e == pytest.approx(0.00743, abs=5e-6)
    assert 0.85 + e == pytest.approx(0.8574, abs=1e-4)
    for eps in (0.3, 0.05, 0.01, 0.004):
        for delta in (0.2, 0.01, 1e-4):
            assert epsilon_for_samples(required_samples(eps, delta), delta) <= eps
    with pytest.raises(InvalidParam):
        epsilon_for_samples(0, 0.1)


def test_fit_center_identity_and_constant():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, (50, 3))
    C, d = fit_center(X, X)
    assert np.allclose(C, np.eye(3), atol=1e-9) and np.allclose(d, 0, atol=1e-9)
    C, d = fit_center(X, np.full((50, 1), 4.5))
    assert np.allclose(C, 0, atol=1e-12) and d[0] == pytest.approx(4.5)


def test_fit_center_symmetric_noise_matches_normal_equations():
    x = np.repeat(np.linspace(0, 1, 11), 2)
    y = 2 * x - 3 + np.tile([0.1, -0.1], 11)
    C, d = fit_center(x[:, None], y)
    # hand-solved 2x2 normal system
    A = np.array([[len(x), x.sum()], [x.sum(), (x * x).sum()]])
    b0, b1 = np.linalg.solve(A, [y.sum(), (x * y).sum()])
    assert C[0, 0] == pytest.approx(2.0, abs=1e-6) and d[0] == pytest.approx(-3.0, abs=1e-6)
    assert C[0, 0] == pytest.approx(b1, abs=1e-12) and d[0] == pytest.approx(b0, abs=1e-12)


def test_fit_center_singular_reports_collinear():
    x = np.linspace(0, 1, 10)
    X = np.stack([x, 2 * x], axis=1)
    with pytest.raises(SingularDesign) as info:
        fit_center(X, x)
    assert "collinear" in str(info.value)


def test_fit_radius_constant_residuals():
    X = np.linspace(0, 1, 30)[:, None]
    coef, b = fit_radius(X, np.full(30, 0.7), 0.8)
    assert np.allclose(coef, 0, atol=1e-9) and b == pytest.approx(0.7, abs=1e-9)


def test_fit_radius_quantile_interval():
    r = np.arange(1, 101, dtype=float)
    _, b = fit_radius(None, r, 0.9, "constant")
    assert 90 - 1e-9 <= b <= 91 + 1e-9
    grid = np.linspace(0, 101, 10101)
    best = min(pinball_loss(r, g, 0.9) for g in grid)
    assert pinball_loss(r, b, 0.9) <= best + 1e-8


def test_fit_radius_full_coverage():
    x = np.linspace(-1, 1, 21)
    r = np.abs(x)
    coef, b = fit_radius(x[:, None], r, 1.0 - 1.0 / len(x))
    assert np.all(x * coef[0] + b >= r - 1e-9)


def test_fit_radius_rejects_bad_quantile():
    with pytest.raises(InvalidParam):
        fit_radius(None, np.ones(3), 1.0, "constant")
    with pytest.raises(InvalidParam):
        fit_radius(None, -np.ones(3), 0.5, "constant")


def _toy(offset=0.0, noise=0.0):
    def observer(X, E):
        rng = np.random.default_rng(int(1e6 * abs(X[0, 0])) % 2**31)
        return X[:, :2] + offset + noise * rng.uniform(-1, 1, (X.shape[0], 2))
    box = HyperRect([0, 0, 0], [1, 1, 1])
    env = HyperRect([0], [1])
    return observer, box, env, SamplerSpec("uniform_box", box, env, seed=5)


def test_learn_exact_observer():
    obs, box, env, sp = _toy()
    c = learn_contract(box, env, obs, 0.9, 0.05, 0.05, sp, (0, 1))
    assert c.calibration.n_samples == required_samples(0.05, 0.05)
    assert c.calibration.empirical_conformance == 1.0
    assert np.all(np.abs(c.radius_intercept) < 1e-6)


def test_learn_offset_observer():
    obs, box, env, sp = _toy(offset=0.25)
    c = learn_contract(box, env, obs, 0.9, 0.05, 0.05, sp, (0, 1))
    assert np.allclose(c.center_intercept, 0.25, atol=1e-8)
    assert np.all(c.radius(np.array([[0.5, 0.5, 0.5]])) < 1e-6)


def test_learn_is_deterministic_and_roundtrips():
    obs, box, env, sp = _toy(noise=0.1)
    a = learn_contract(box, env, obs, 0.8, 0.05, 0.05, sp, (0, 1))
    b = learn_contract(box, env, obs, 0.8, 0.05, 0.05, sp, (0, 1))
    assert a.to_json() == b.to_json()
    c = PerceptionContract.from_json(a.to_json())
    assert c.to_json() == a.to_json()
    assert a.calibration.empirical_conformance >= 0.8


def test_learn_rejects_pr_plus_eps():
    obs, box, env, sp = _toy()
    with pytest.raises(InvalidParam):
        learn_contract(box, env, obs, 0.99, 0.01, 0.05, sp, (0, 1))


def test_learn_on_empty_grid():
    obs, box, _, _ = _toy()
    grid = EnvGrid.uniform(HyperRect([0], [1]), (2,), (0.1,))
    grid.active[:] = False
    sp = SamplerSpec("uniform_box", box, grid)
    with pytest.raises(SamplerExhausted):
        learn_contract(box, grid, obs, 0.8, 0.05, 0.05, sp, (0, 1))


def _manual_contract(radius, center_eye=True):
    n = 3
    from pcverify.contract import Calibration
    return PerceptionContract((0, 1), "affine", np.eye(n)[:2] if center_eye else np.zeros((2, n)), np.zeros(2),
                              np.zeros((2, n)), np.full(2, radius), HyperRect([0] * n, [1] * n),
                              Calibration(0.9, 0.01, 0.01, 1, 0.95, 1.0))


def test_empirical_conformance_examples():
    rng = np.random.default_rng(1)
    X = rng.uniform(0, 1, (200, 3))
    Y = X[:, :2] + rng.uniform(-0.5, 0.5, (200, 2))
    E = np.zeros((200, 1))
    assert empirical_conformance(_manual_contract(1e6), SampleSet(X, E, Y)) == 1.0
    assert empirical_conformance(_manual_contract(0.0), SampleSet(X, E, Y)) < 0.01
    Yh = X[:, :2].copy()
    Yh[:100, 0] += 2.0
    assert empirical_conformance(_manual_contract(0.5), SampleSet(X, E, Yh)) == 0.5
    with pytest.raises(InvalidParam):
        empirical_conformance(_manual_contract(1.0), SampleSet(X[:0], E[:0], Y[:0]))


def test_output_set_examples():
    c = _manual_contract(0.1)
    out = contract_output_set(c, HyperRect([0, 0, 0], [1, 1, 1]))
    assert np.allclose(out.lo, -0.1) and np.allclose(out.hi, 1.1)
    p = np.array([0.3, 0.6, 0.2])
    out = contract_output_set(c, HyperRect.point(p))
    assert np.allclose(out.center, p[:2]) and np.allclose(out.width, 0.2)
    inner = contract_output_set(c, HyperRect([0.2] * 3, [0.4] * 3))
    outer = contract_output_set(c, HyperRect([0.1] * 3, [0.6] * 3))
    assert outer.contains(inner)
    events = []
    contract_output_set(c, HyperRect([0.5] * 3, [1.5] * 3), events)
    assert len(events) == 1
