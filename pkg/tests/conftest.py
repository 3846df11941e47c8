import numpy as np
import pytest

from heatsmoothing import autodiff as ad


def central_fd(fn, arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``fn()`` with respect to ``arr`` (perturbed in place)."""
    out = np.zeros_like(arr)
    for i in np.ndindex(arr.shape):
        old = arr[i]
        arr[i] = old + h
        up = fn()
        arr[i] = old - h
        down = fn()
        arr[i] = old
        out[i] = (up - down) / (2 * h)
    return out


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Worst absolute deviation relative to the largest entry of either array."""
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def leaf(values, grad=True):
    return ad.Tensor(np.array(values, dtype=np.float64), requires_grad=grad)


_CRITERIA: list[str] = []


@pytest.fixture
def report():
    """Record one acceptance line; all lines are repeated in the terminal summary."""

    def emit(number: int, passed: bool, detail: str) -> None:
        line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'} {detail}"
        print(line)
        _CRITERIA.append(line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
