import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vortasym import field_core as fc

settings.register_profile(
    "default",
    deadline=None,
    max_examples=20,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def grid32():
    return fc.Grid3(32, 10.0)


@pytest.fixture(scope="session")
def grid64():
    return fc.Grid3(64, 12.0)


@pytest.fixture(scope="session")
def grid96():
    return fc.Grid3(96, 12.0)


@pytest.fixture(scope="session")
def grid128():
    return fc.Grid3(128, 12.0)


def random_field(grid, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    return fc.VectorFieldR(grid, scale * rng.standard_normal((3,) + (grid.n,) * 3))


_ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def acceptance_report():
    """record(number, passed, detail): one summary line per acceptance criterion."""

    def record(number, passed, detail):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES[number] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(_ACCEPTANCE_LINES[number])
