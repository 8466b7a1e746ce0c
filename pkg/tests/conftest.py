import numpy as np
import pytest

from desenat.core import PointCloud, RngSpec
from desenat.net import init_model

# (criterion, passed, detail) rows appended by test_acceptance.py
ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")


def random_cloud(n: int, seed: int, label=None) -> PointCloud:
    return PointCloud(np.random.default_rng(seed).random((n, 3)), label)


@pytest.fixture
def small_model():
    return init_model(3, (8, 16, 8), RngSpec(1))


@pytest.fixture
def cloud8():
    return random_cloud(8, 0, 1)
