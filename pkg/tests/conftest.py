import numpy as np
import pytest

from actcast.taxonomy import Taxonomy

# collected by test_acceptance.py; printed one per criterion at the end
ACCEPTANCE_RESULTS: dict[str, str] = {}


@pytest.fixture
def tiny_tax() -> Taxonomy:
    """4 fine labels in 2 coarse groups."""
    return Taxonomy(("a1", "a2", "b1", "b2"), ("a", "b"), (0, 0, 1, 1))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(42)


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if name.startswith("test_criterion"):
        ACCEPTANCE_RESULTS[name] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"{name}: {ACCEPTANCE_RESULTS[name]}")
