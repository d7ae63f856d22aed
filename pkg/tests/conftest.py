import numpy as np
import pytest

from subgroupmax.data import DataSet


def random_dataset(rng, n=60, p1=2, p2=8, beta=None, gamma=None, noise=1.0):
    Z = rng.standard_normal((n, p1))
    X = rng.standard_normal((n, p2))
    beta = np.zeros(p1) if beta is None else np.asarray(beta, dtype=float)
    gamma = np.zeros(p2) if gamma is None else np.asarray(gamma, dtype=float)
    y = 0.5 + Z @ beta + X @ gamma + noise * rng.standard_normal(n)
    return DataSet(y, Z, X)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# acceptance lines, echoed in the terminal summary so they survive output capture
CRITERIA: dict = {}


def record_criterion(number: int, title: str, ok: bool, detail: str) -> str:
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    CRITERIA[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[k])
