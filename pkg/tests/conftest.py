import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("repo", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def central_fd(fn, arr, h=1e-6, index=None):
    """Central finite differences of scalar ``fn()`` w.r.t. entries of ``arr`` (perturbed in place)."""
    out = np.zeros_like(arr)
    indices = np.ndindex(arr.shape) if index is None else index
    for ix in indices:
        old = arr[ix]
        arr[ix] = old + h
        up = fn()
        arr[ix] = old - h
        down = fn()
        arr[ix] = old
        out[ix] = (up - down) / (2 * h)
    return out


def rel_err(a, b, floor=1e-6):
    """Max error normalised by the larger gradient magnitude (or ``floor``)."""
    scale = max(np.abs(a).max(), np.abs(b).max(), floor)
    return float(np.abs(a - b).max() / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
