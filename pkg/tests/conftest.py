import numpy as np
import pytest

from phmpl.basis import basis_for_data
from phmpl.survdata import Dataset


def mixed_dataset(rng: np.random.Generator, n: int = 30, p: int = 2, beta=None) -> Dataset:
    """Weibull-type event times with events and all three censoring types present."""
    X = rng.normal(size=(n, p))
    beta = np.full(p, 0.4) if beta is None else np.asarray(beta, dtype=float)
    y = np.sqrt(-2.0 * np.log(rng.random(n)) * np.exp(-X @ beta))
    kind = np.arange(n) % 4
    rng.shuffle(kind)
    lo = rng.uniform(0.2, 0.8, n) * y
    hi = y + rng.uniform(0.1, 1.0, n)
    tl = np.where(kind == 0, y, np.where(kind == 1, 0.0, np.where(kind == 2, y, lo)))
    tr = np.where(kind == 0, y, np.where(kind == 1, hi, np.where(kind == 2, np.inf, hi)))
    return Dataset.from_intervals(tl, tr, X)


def feasible_theta(rng: np.random.Generator, m: int) -> np.ndarray:
    return rng.uniform(0.2, 1.5, m)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_data(rng):
    return mixed_dataset(rng, 40, 2)


@pytest.fixture
def small_system(small_data):
    return basis_for_data(small_data, "mspline", 3, 3)


ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def report():
    """Record one summary line per acceptance criterion."""

    def _report(number: int, passed: bool, detail: str) -> bool:
        ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(ACCEPTANCE_LINES[number])
        return passed

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
