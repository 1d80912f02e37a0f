import numpy as np
import pytest

from spikelab.fem.weights import ConstantWeight, MonomialWeight
from spikelab.geometry import DomainGeometry

SQRT_E = float(np.sqrt(np.e))


@pytest.fixture(scope="session")
def unit_disk():
    return DomainGeometry.disk()


@pytest.fixture(scope="session")
def shifted_disk():
    """Unit disk centered at (2, 0), inside the right half plane."""
    return DomainGeometry.disk((2.0, 0.0), 1.0)


@pytest.fixture(scope="session")
def const_weight():
    return ConstantWeight()


@pytest.fixture(scope="session")
def x1_weight():
    return MonomialWeight(1, 0)


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one acceptance line and assert it."""
    def record(num, name, ok, detail=""):
        line = f"criterion {num:2d} [{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        _VERDICTS.append((num, line))
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance")
        for _, line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
