import numpy as np
import pytest

from conicfinsler import catalog
from conicfinsler.conformal import ConformalPoint

SEED = 7
COUNT = 100

# criterion number -> (title, outcome); filled by the acceptance tests
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        title, ok = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {title}")


@pytest.fixture(scope="session")
def record_acceptance():
    def record(key, title, ok, detail=""):
        ACCEPTANCE[key] = (title + (f" ({detail})" if detail else ""), bool(ok))
        print(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {title}  {detail}")

    return record


class _ScenarioCache:
    """One ConformalPoint per scenario over a fixed sample, shared by all tests."""

    def __init__(self):
        self._points = {}

    def sample(self, name, count=COUNT, seed=SEED):
        metric, factor = catalog.resolve(name)
        return metric, factor, catalog.sample_points(metric, factor, count=count, seed=seed)

    def point(self, name) -> ConformalPoint:
        if name not in self._points:
            metric, factor, u = self.sample(name)
            self._points[name] = ConformalPoint(metric, factor, u)
        return self._points[name]


@pytest.fixture(scope="session")
def scenarios():
    return _ScenarioCache()


NONDEGENERATE = [name for name, sc in catalog.SCENARIOS.items() if not sc.degenerate]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
