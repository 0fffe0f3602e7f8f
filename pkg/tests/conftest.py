from __future__ import annotations

import numpy as np
import pytest

from freespike.edge import locate_upper_edge
from freespike.measure import AtomicMeasure, DensitySpec, discretize

ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    """Remember one acceptance line; all lines are printed in the terminal summary."""
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def uniform_spec() -> DensitySpec:
    return DensitySpec.uniform(0.5, 1.5)


@pytest.fixture(scope="session")
def uniform_1000(uniform_spec) -> AtomicMeasure:
    return discretize(uniform_spec, 1000)


@pytest.fixture(scope="session")
def uniform_edge(uniform_1000):
    return locate_upper_edge(uniform_1000, uniform_1000)


@pytest.fixture(scope="session")
def two_point() -> AtomicMeasure:
    return AtomicMeasure([0.5, 1.5], [0.5, 0.5])


@pytest.fixture
def gen() -> np.random.Generator:
    return np.random.default_rng(12345)
