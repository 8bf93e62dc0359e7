import numpy as np
import pytest

from ipgp.dynamics import SpeciesConfig, generate_dataset
from ipgp.kernels import preset


def small_dataset(n1=2, n2=2, M=2, L=2, T=1.0, sigma=0.05, seed=0, name="repulsive"):
    return generate_dataset(SpeciesConfig(n1, n2), preset(name), M, L, T, sigma, rng=seed)


@pytest.fixture
def tiny():
    return small_dataset()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


#: One line per acceptance criterion, filled by ``test_acceptance``.
ACCEPTANCE_LINES: list = []


@pytest.fixture
def acceptance_line():
    def record(criterion: int, passed: bool, detail: str) -> None:
        ACCEPTANCE_LINES.append((criterion, f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}"))

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
