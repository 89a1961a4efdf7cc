import os

# single-threaded BLAS keeps reductions in a fixed order (bitwise determinism checks)
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from stsg import tensor as T  # noqa: E402

_REPORT = []


@pytest.fixture(autouse=True)
def float64_default():
    prev = T.get_default_dtype()
    T.set_default_dtype(np.float64)
    yield
    T.set_default_dtype(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def report():
    """Collects one summary line per acceptance criterion; printed after the run."""
    def add(line):
        print(line)
        _REPORT.append(line)
    return add


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in _REPORT:
            terminalreporter.write_line(line)
