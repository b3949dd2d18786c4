import numpy as np
import pytest

from contactfield import _backend
from contactfield.core import Frame, TactileState, MARKERS_PER_SENSOR

BACKENDS = _backend.available()


@pytest.fixture(params=BACKENDS)
def backend(request):
    """Run the test once per available kernel implementation."""
    previous = _backend.NAME
    _backend.use(request.param)
    yield request.param
    _backend.use(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_tactile(rng=None, scale=0.0, sensors=2):
    m = sensors * MARKERS_PER_SENSOR
    rng = rng or np.random.default_rng(0)
    pos = rng.uniform(-0.02, 0.02, (m, 3))
    disp = scale * rng.normal(size=(m, 3))
    depth = scale * rng.normal(size=m)
    return TactileState(pos, disp, depth, sensor_count=sensors)


def make_frame(t=0.0, n_tool=40, n_env=60, rng=None, **kw):
    rng = rng or np.random.default_rng(int(t * 1000) + 7)
    tool = rng.uniform(-0.05, 0.05, (n_tool, 3))
    env = rng.uniform(-0.2, 0.2, (n_env, 3))
    env[:, 2] = 0.0
    args = dict(
        time=t,
        tool_points=tool,
        env_points=env,
        tactile=make_tactile(rng, 1e-4),
        gripper_pose=np.array([0.0, 0.0, 0.1, 1.0, 0.0, 0.0, 0.0]),
        table_z=0.0,
    )
    args.update(kw)
    return Frame(**args)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in RESULTS.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
