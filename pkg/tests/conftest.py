import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from retmosaic import phantom

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


def pan(n, step=24.0, start=(200.0, 320.0), zoom=1.0):
    """Straight horizontal pan with ``step`` pixels between frame centres."""
    return [(start[0] + step * i, start[1], zoom) for i in range(n)]


@pytest.fixture(scope="session")
def short_sequence():
    """Six overlapping phantom frames with ground truth."""
    return phantom.generate(phantom.PhantomConfig(frame_count=6, trajectory=pan(6), seed=5))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
