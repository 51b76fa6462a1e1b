import numpy as np
import pytest
from hypothesis import settings

from lipshare.data import DemoSet, Demonstration

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# filled by tests/test_acceptance.py, printed after the run
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_demo(demo_id, T, d_raw=2, l=1, dt=0.1, rng=None, mode=None):
    rng = rng if rng is not None else np.random.default_rng(0)
    return Demonstration(
        demo_id,
        np.arange(T) * dt,
        rng.normal(size=(T, d_raw)),
        rng.normal(size=(T, l)),
        None if mode is None else np.asarray(mode, dtype=np.int64),
    )


@pytest.fixture
def small_ds():
    rng = np.random.default_rng(7)
    return DemoSet((make_demo("a", 12, rng=rng), make_demo("b", 9, rng=rng)))
