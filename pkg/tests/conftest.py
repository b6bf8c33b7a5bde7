import numpy as np
import pytest

from tnncca.dataset import PairedDataset

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_ds(rng):
    labels = np.repeat(np.arange(3), 4)
    return PairedDataset(rng.standard_normal((12, 4)), rng.standard_normal((12, 3)), labels, 3)
