import numpy as np
import pytest

from emagslabel.grid_core import Canvas
from emagslabel.synth import Scenario


def make_canvas(po, ve=None, vn=None, var=0.01, cs=0.15, dt=0.1, ego=None, origin=(0.0, 0.0)):
    """Canvas from raw arrays; a 2-D ``po`` becomes a single slice."""
    po = np.asarray(po, dtype=float)
    if po.ndim == 2:
        po = po[None]
    shape = po.shape
    ve = np.zeros(shape) if ve is None else np.broadcast_to(np.asarray(ve, float), shape).copy()
    vn = np.zeros(shape) if vn is None else np.broadcast_to(np.asarray(vn, float), shape).copy()
    var = np.broadcast_to(np.asarray(var, float), shape).copy()
    valid = np.isfinite(var) & (var > 0)
    ve = np.where(valid, ve, 0.0)
    vn = np.where(valid, vn, 0.0)
    t, h, w = shape
    if ego is None:
        ego = np.tile([origin[0] + 0.5 * w * cs, origin[1] + 0.5 * h * cs], (t, 1))
    return Canvas(cs, origin[0], origin[1], np.arange(t) * dt, po, ve, vn, var, var.copy(),
                  valid, np.ones(shape, bool), np.asarray(ego, float), dt)


def scenario_doc(**kw):
    doc = {"name": "test", "duration": 20,
           "grid": {"width": 80, "height": 60, "cell_size": 0.15, "dt": 0.1},
           "ego": {"waypoints": [[0, 0]]}, "actors": []}
    doc.update(kw)
    return doc


def make_scenario(**kw) -> Scenario:
    return Scenario.from_dict(scenario_doc(**kw))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria report, printed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
