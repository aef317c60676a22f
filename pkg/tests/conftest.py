import numpy as np
import pytest

from fairshare.coredata import ExperimentSet, ObservationTable


def random_table(rng, n=200, L=2, d=0, weights=False, all_coalitions=True):
    """Table with random outcomes; every coalition appears when ``all_coalitions``."""
    K = 1 << L
    if all_coalitions:
        T = np.concatenate([np.arange(K), rng.integers(0, K, size=n - K)])
    else:
        T = rng.integers(0, K, size=n)
    y = rng.normal(size=n) + 0.3 * T
    w = rng.uniform(0.5, 3.0, size=n) if weights else np.ones(n)
    X = rng.normal(size=(n, d))
    return ObservationTable(y, w, T, X, ExperimentSet(L))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
