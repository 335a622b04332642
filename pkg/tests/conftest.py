import numpy as np
import pytest

from beq.constraint import FullSpace, Halfspace
from beq.equilibrium import solve_borrowing, solve_constrained
from beq.market import MarketModel
from beq.preference import MixedCRRA, WeightedUtility, build_G_table


@pytest.fixture(scope="session")
def weighted():
    return WeightedUtility(0.25, -0.5)


@pytest.fixture(scope="session")
def weighted_table(weighted):
    return build_G_table(weighted, 2.0)


@pytest.fixture(scope="session")
def two_atom():
    return MixedCRRA([(-1.0, 0.5), (0.5, 0.5)])


@pytest.fixture(scope="session")
def two_atom_table(two_atom):
    return build_G_table(two_atom, 2.0)


@pytest.fixture(scope="session")
def dirac_half():
    return MixedCRRA([(0.5, 1.0)])


@pytest.fixture(scope="session")
def dirac_half_table(dirac_half):
    return build_G_table(dirac_half, 2.0)


@pytest.fixture(scope="session")
def scalar_market():
    # kappa = 0.4
    return MarketModel.constant(1.0, [0.08], [[0.2]])


@pytest.fixture(scope="session")
def two_rate_market():
    return MarketModel.constant(1.0, [0.07], [[0.2]], r=0.02, R=0.05)


@pytest.fixture(scope="session")
def full_solution(weighted_table, scalar_market):
    return solve_constrained(weighted_table, scalar_market, FullSpace(1))


@pytest.fixture(scope="session")
def halfspace_solution(weighted_table, scalar_market):
    return solve_constrained(weighted_table, scalar_market, Halfspace([1.0], 1.0))


@pytest.fixture(scope="session")
def borrow_solution(dirac_half_table, two_rate_market):
    return solve_borrowing(dirac_half_table, two_rate_market)


def random_sigma(rng, d=2, lo=0.3, hi=1.2):
    """``Q diag(s) Q^T`` with a random rotation and spectrum in ``[lo, hi]``."""
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return q @ np.diag(rng.uniform(lo, hi, d)) @ q.T


# ---------------------------------------------------------------------------
# acceptance summary: one line per criterion
# ---------------------------------------------------------------------------


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    failed = rep.failed or (rep.when == "call" and rep.skipped)
    prev = item.config._criteria.get(n, (title, True, 0.0))
    item.config._criteria[n] = (title, prev[1] and not failed, prev[2] + rep.duration)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    crit = getattr(config, "_criteria", {})
    if not crit:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(crit):
        title, ok, secs = crit[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  ({secs:6.2f} s)  {title}")
