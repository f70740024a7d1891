import numpy as np
import pytest

from voxreg import available_backends, use_backend


@pytest.fixture(params=available_backends())
def backend(request):
    """Run the test once per importable kernel backend."""
    with use_backend(request.param):
        yield request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def uniform_cloud(rng, n, lo=-1.0, hi=1.0):
    from voxreg.core import PointCloud

    return PointCloud(rng.uniform(lo, hi, size=(n, 3)))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
