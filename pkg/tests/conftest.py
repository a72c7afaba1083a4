import numpy as np
import pytest

from splitgibbs.gmrf_models import lattice2d_precision
from splitgibbs.sparse_core import SparseSpd

# 2x2 matrix with eigenpairs (10, [1, 1]) and (1, [1, -1])
FIG1 = np.array([[5.5, 4.5], [4.5, 5.5]])


@pytest.fixture
def fig1():
    return SparseSpd.from_dense(FIG1)


@pytest.fixture(scope="session")
def lattice():
    return lattice2d_precision(10)


def random_spd(n, rng, density=0.3, shift=0.5):
    """Sparse SPD test matrix with a nonzero off-diagonal pattern."""
    B = rng.standard_normal((n, n)) * (rng.random((n, n)) < density)
    S = B + B.T
    lam = np.linalg.eigvalsh(S)[0]
    return S + (shift - min(lam, 0.0) + 0.1) * np.eye(n)


def tridiag(n, diag=2.5, off=-1.0):
    return SparseSpd.from_dense(np.diag(np.full(n, diag)) + np.diag(np.full(n - 1, off), 1)
                                + np.diag(np.full(n - 1, off), -1))


def small_lattice(m=5, delta=0.1):
    return lattice2d_precision(m, delta)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = {}


def record_criterion(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
