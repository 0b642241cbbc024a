from __future__ import annotations

import numpy as np
import pytest

from hetancova import AncovaData
from hetancova.datasets import load_bodyweight


@pytest.fixture(scope="session")
def bodyweight() -> AncovaData:
    return load_bodyweight("week4")


@pytest.fixture(scope="session")
def baseline() -> AncovaData:
    return load_bodyweight("baseline")


def random_data(rng, n1=8, n2=11, L=2, s1=1.0, s2=2.0) -> AncovaData:
    M = rng.normal(5.0, 1.5, size=(n1 + n2, L))
    y = np.repeat([3.0, 4.0], [n1, n2]) + M @ np.linspace(0.5, 1.0, L)
    y = y + rng.standard_normal(n1 + n2) * np.repeat([s1, s2], [n1, n2])
    return AncovaData(y, np.repeat([1, 2], [n1, n2]), M)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[k])
