import numpy as np
import pytest

from uniqode.autodiff import Mlp


def central_diff(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Elementwise central differences of scalar ``f`` around array ``x``."""
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        out[idx] = (f(xp) - f(xm)) / (2 * h)
    return out


def assert_fd_close(analytic, numeric, rtol=1e-5, floor=1e-8):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    bound = np.maximum(rtol * np.abs(numeric), floor)
    bad = np.abs(analytic - numeric) > bound
    assert not bad.any(), f"max abs diff {np.max(np.abs(analytic - numeric)):.3e}"


@pytest.fixture
def tiny_net():
    # [1,1,1]: hidden weight 1, output weight 1, zero biases
    return Mlp([1, 1, 1], [np.ones((1, 1)), np.ones((1, 1))], [np.zeros(1), np.zeros(1)])


# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
