import sys
from pathlib import Path

import numpy as np
import pytest

from survchallenge import data
from survchallenge._kernels import available_backends

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(params=available_backends())
def backend(request):
    return request.param


@pytest.fixture(scope="session")
def cohort():
    """Small default-feature cohort shared by the model tests (read-only)."""
    return data.synthesize_cohort(data.CohortConfig(n=600, seed=3))


@pytest.fixture(scope="session")
def cohort_split(cohort):
    return data.split_train_test(cohort, 0.7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """Collect the acceptance verdict lines into one block at the end of the run."""
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if rep.when == "call":
                lines += [v for k, v in rep.user_properties if k == "verdict"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
