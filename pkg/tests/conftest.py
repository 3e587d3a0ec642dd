import numpy as np
import pytest

from pcverify.contract import Calibration, PerceptionContract
from pcverify.geometry import HyperRect
from pcverify.systems.base import ClosedLoopSystem, Requirement


def toy_plant(horizon=40, static=False):
    """Damped 2-d oscillator driven by a full-state observation."""
    def step(s, y, t):
        if static:
            return [s[0], s[1]]
        return [s[0] + 0.1 * s[1], s[1] - 0.1 * y[0] - 0.05 * y[1]]

    return ClosedLoopSystem(
        plant_id="toy", dt=0.1, state_names=("p", "v"), observed_dims=(0, 1), env_names=("e0", "e1"),
        step=step, reference=lambda t: np.zeros(2), state_domain=HyperRect([-5, -5], [5, 5]),
        env_bounds=HyperRect([0, 0], [1, 1]), nominal_env=(0.5, 0.5), horizon=horizon)


def toy_contract(radius=0.0, offset=0.0):
    cal = Calibration(0.9, 0.01, 0.01, 1, 0.95, 1.0)
    return PerceptionContract((0, 1), "affine", np.eye(2), np.full(2, offset), np.zeros((2, 2)),
                              np.full(2, float(radius)), HyperRect([-5, -5], [5, 5]), cal)


def toy_requirement(horizon=40, half=1.0):
    return Requirement((0, 1), np.full((horizon + 1, 2), -half), np.full((horizon + 1, 2), half))


@pytest.fixture
def plant():
    return toy_plant()


# -- acceptance summary ----------------------------------------------------

_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Append one ``PASS``/``FAIL`` line per acceptance criterion."""
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
