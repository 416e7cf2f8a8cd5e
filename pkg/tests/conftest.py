import numpy as np
import pytest

from noisymc.core import SparseObservations


@pytest.fixture
def rng():
    return np.random.default_rng(20100)


def random_mask(rng, shape, p):
    mask = rng.random(shape) < p
    return mask


@pytest.fixture
def lowrank_obs(rng):
    """A 40 x 30 rank-2 matrix observed at ~60% of its entries (noiseless)."""
    U = rng.standard_normal((40, 2))
    V = rng.standard_normal((30, 2))
    M = U @ V.T
    mask = random_mask(rng, M.shape, 0.6)
    return M, SparseObservations.from_dense(M, mask)


ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    """Register the pass/fail line of an acceptance criterion and print it."""
    status = passed if isinstance(passed, str) else ("PASS" if passed else "FAIL")
    line = f"criterion {number:>2}: {status}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
