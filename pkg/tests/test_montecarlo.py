import numpy as np
import pytest

from beq.constraint import FullSpace, Halfspace
from beq.equilibrium import scaled_candidate, solve_constrained
from beq.errors import ConfigError, RootBracketError
from beq.market import Coefficient, MarketModel
from beq.preference import MixedCRRA
from beq.verify.hjb import analytic_J, f_and_derivatives
from beq.verify.montecarlo import (
    Piecewise,
    SimConfig,
    implicit_J_mc,
    perturbation_test,
    perturbed,
    simulate_joint,
    simulate_terminal_wealth,
)

LOG = MixedCRRA([(0.0, 1.0)])


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("kw,key", [({"n_paths": 0}, "verify.n_paths"), ({"seed": -1}, "verify.seed"),
                                    ({"seed": 2**64}, "verify.seed"), ({"scheme": "milstein"}, "verify.scheme"),
                                    ({"n_time_steps": 0}, "verify.n_time_steps")])
def test_sim_config_validation(kw, key):
    with pytest.raises(ConfigError) as info:
        SimConfig(**kw)
    assert info.value.key == key


def test_thread_count_from_environment(monkeypatch):
    monkeypatch.setenv("BEQ_THREADS", "3")
    assert SimConfig().workers() == 3
    monkeypatch.setenv("BEQ_THREADS", "")
    assert SimConfig().workers() == 0
    monkeypatch.setenv("BEQ_THREADS", "many")
    with pytest.raises(ConfigError):
        SimConfig().workers()
    assert SimConfig(threads=2).workers() == 2


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


def test_no_investment_keeps_wealth(scalar_market):
    x = simulate_terminal_wealth(scalar_market, [0.0], 0.0, 1.7, SimConfig(n_paths=2000), "constrained")
    assert np.all(x == 1.7)


def test_no_investment_earns_saving_rate(two_rate_market):
    for scheme in ("exact", "euler"):
        x = simulate_terminal_wealth(two_rate_market, [0.0], 0.25, 2.0, SimConfig(n_paths=2000, scheme=scheme),
                                     "borrowing")
        assert np.allclose(x, 2.0 * np.exp(0.02 * 0.75), rtol=1e-13, atol=0)


@pytest.mark.parametrize("scheme", ["exact", "euler"])
def test_log_mean(scheme):
    m = MarketModel.constant(1.0, [0.08, 0.05], [[0.2, 0.0], [0.05, 0.25]])
    u = np.array([0.6, 0.3])
    n = 40_000
    x = simulate_terminal_wealth(m, u, 0.2, 1.0, SimConfig(n_paths=n, seed=7, scheme=scheme, n_time_steps=16),
                                 "constrained")
    a = m.sigma(0.0).T @ u
    mean = (u @ m.mu(0.0) - 0.5 * a @ a) * 0.8
    se = np.sqrt(a @ a * 0.8 / n)
    assert abs(np.mean(np.log(x)) - mean) <= 4 * se
    assert np.var(np.log(x)) == pytest.approx(a @ a * 0.8, rel=0.03)


def test_borrowing_drift_uses_borrow_rate(two_rate_market):
    # weight 1.5: half a unit borrowed at R
    x = simulate_terminal_wealth(two_rate_market, [1.5], 0.0, 1.0, SimConfig(n_paths=50_000, seed=3), "borrowing")
    drift = 1.5 * 0.07 - 0.5 * 0.05 - 0.5 * (1.5 * 0.2) ** 2
    se = 1.5 * 0.2 / np.sqrt(50_000)
    assert abs(np.mean(np.log(x)) - drift) <= 4 * se


def test_threads_do_not_change_samples(scalar_market, full_solution):
    strategies = [full_solution, perturbed(full_solution, 0.1, 0.05, [0.3])]
    base = simulate_joint(scalar_market, strategies, 0.1, 1.0, SimConfig(n_paths=5000, seed=99, threads=0),
                          "constrained")
    for th in (1, 4):
        other = simulate_joint(scalar_market, strategies, 0.1, 1.0, SimConfig(n_paths=5000, seed=99, threads=th),
                               "constrained")
        assert np.array_equal(base, other)
    diff = simulate_joint(scalar_market, strategies, 0.1, 1.0, SimConfig(n_paths=5000, seed=100), "constrained")
    assert not np.array_equal(base, diff)


def test_prefix_of_paths_is_stable(scalar_market):
    a = simulate_terminal_wealth(scalar_market, [1.0], 0.0, 1.0, SimConfig(n_paths=3000, seed=5), "constrained")
    b = simulate_terminal_wealth(scalar_market, [1.0], 0.0, 1.0, SimConfig(n_paths=5000, seed=5), "constrained")
    assert np.array_equal(a, b[:3000])


def test_piecewise_strategy_switches(full_solution):
    p = perturbed(full_solution, 0.25, 0.125, [0.5])
    assert np.array_equal(p(0.1), full_solution.u_at(0.1))
    assert np.array_equal(p(0.25), [0.5])
    assert np.array_equal(p(0.37), [0.5])
    assert np.array_equal(p(0.375), full_solution.u_at(0.375))
    q = Piecewise([(0.0, lambda t: np.array([t]))])
    assert np.array_equal(q(0.4), [0.4])


def test_exact_and_euler_agree_on_time_varying_market():
    mu = Coefficient(nodes=[(0.0, [0.05]), (1.0, [0.12])])
    m = MarketModel(1.0, mu, Coefficient([[0.2]]))
    u = Piecewise([(0.0, lambda t: np.array([0.5 + t]))])
    n = 40_000
    xe = simulate_terminal_wealth(m, u, 0.0, 1.0, SimConfig(n_paths=n, seed=1), "constrained")
    xu = simulate_terminal_wealth(m, u, 0.0, 1.0, SimConfig(n_paths=n, seed=2, scheme="euler", n_time_steps=512),
                                  "constrained")
    se = np.hypot(np.std(np.log(xe)), np.std(np.log(xu))) / np.sqrt(n)
    assert abs(np.mean(np.log(xe)) - np.mean(np.log(xu))) <= 4 * se


def test_simulation_rejects_bad_start(scalar_market):
    with pytest.raises(ConfigError):
        simulate_terminal_wealth(scalar_market, [0.0], 1.5, 1.0, SimConfig(n_paths=1000), "constrained")
    with pytest.raises(ConfigError):
        simulate_terminal_wealth(scalar_market, [0.0], 0.0, -1.0, SimConfig(n_paths=1000), "constrained")


# ---------------------------------------------------------------------------
# Monte Carlo certainty equivalent
# ---------------------------------------------------------------------------


def test_implicit_J_constant_samples(weighted):
    z, ci = implicit_J_mc(weighted, np.full(1000, 2.5))
    assert z == 2.5 and ci == 0.0


def test_implicit_J_log_is_geometric_mean():
    rng = np.random.default_rng(0)
    x = np.exp(rng.normal(0.1, 0.3, 5000))
    z, ci = implicit_J_mc(LOG, x)
    assert z == pytest.approx(np.exp(np.mean(np.log(x))), rel=1e-13)
    # delta-method half-width for log utility is 1.96 * z * sd(log X) / sqrt(N)
    assert ci == pytest.approx(1.96 * z * np.std(np.log(x), ddof=1) / np.sqrt(5000), rel=1e-10)


def test_implicit_J_homogeneous(two_atom):
    rng = np.random.default_rng(1)
    x = np.exp(rng.normal(0.0, 0.4, 4000))
    z, ci = implicit_J_mc(two_atom, x)
    z3, ci3 = implicit_J_mc(two_atom, 3.0 * x)
    assert z3 == pytest.approx(3.0 * z, rel=1e-12)
    assert ci3 == pytest.approx(3.0 * ci, rel=1e-9)


def test_implicit_J_errors(weighted):
    with pytest.raises(ConfigError):
        implicit_J_mc(weighted, np.ones(999))
    with pytest.raises(RootBracketError):
        implicit_J_mc(weighted, np.r_[np.ones(999), -1.0])


def test_implicit_J_matches_analytic(two_atom, two_atom_table, scalar_market):
    sol = solve_constrained(two_atom_table, scalar_market, FullSpace(1))
    x = simulate_terminal_wealth(scalar_market, sol, 0.0, 1.0, SimConfig(n_paths=100_000, seed=11), "constrained")
    z, ci = implicit_J_mc(two_atom, x)
    assert abs(z - analytic_J(two_atom_table, sol, 0.0, 1.0)) <= 3 * ci


# ---------------------------------------------------------------------------
# perturbation test
# ---------------------------------------------------------------------------


def test_perturbation_at_equilibrium(full_solution, weighted, weighted_table, scalar_market):
    u = full_solution.u_at(0.0)
    alts = [u, u + 0.5, u - 0.8]
    rep = perturbation_test(weighted, weighted_table, full_solution, scalar_market, None, 0.0, 1.0, alts,
                            [0.1, 0.05, 0.02], SimConfig(n_paths=50_000, seed=4))
    # small deviations at small eps may be Inconclusive (slope within noise, prediction negative)
    assert rep.verdict in ("Pass", "Inconclusive")
    # no deviation (up to rounding of the node weights): zero slope within the interval
    assert np.all(np.abs(rep.slopes[0]) <= rep.cis[0] + 1e-12) and rep.predicted[0] == pytest.approx(0.0, abs=2e-6)
    assert np.all(rep.slopes[1:] <= 3 * rep.cis[1:])
    assert np.all(rep.agrees)
    z = analytic_J(weighted_table, full_solution, 0.0, 1.0)
    d = f_and_derivatives(weighted, weighted_table, full_solution, 0.0, 1.0, z)
    expect = 0.5 * d.f_xx * (0.2 * 0.5) ** 2 / (-d.f_z)
    assert rep.predicted[1] == pytest.approx(expect, abs=1e-5)
    assert abs(rep.J_mc - rep.J_analytic) <= 3 * rep.J_mc_ci


def test_perturbation_detects_scaled_candidate(full_solution, weighted, weighted_table, scalar_market):
    bad = scaled_candidate(full_solution, scalar_market, 1.5)
    rep = perturbation_test(weighted, weighted_table, bad, scalar_market, None, 0.0, 1.0,
                            [full_solution.u_at(0.0)], [0.2, 0.1], SimConfig(n_paths=100_000, seed=8))
    assert rep.verdict == "Fail"
    assert rep.predicted[0] > 0 and np.all(rep.slopes[0] > 3 * rep.cis[0])


def test_perturbation_argument_validation(halfspace_solution, weighted, weighted_table, scalar_market):
    cset = Halfspace([1.0], 1.0)
    cfg = SimConfig(n_paths=1000)
    call = lambda alts, eps, **kw: perturbation_test(weighted, weighted_table, halfspace_solution, scalar_market,
                                                     cset, kw.get("t", 0.0), 1.0, alts, eps, cfg)  # noqa: E731
    with pytest.raises(ConfigError, match="not in the constraint set"):
        call([[2.0]], [0.1])
    with pytest.raises(ConfigError):
        call([[0.5]], [0.05, 0.1])
    with pytest.raises(ConfigError):
        call([[0.5]], [0.5], t=0.8)
    with pytest.raises(ConfigError):
        call([[0.5, 0.5]], [0.1])
    with pytest.raises(ConfigError):
        perturbation_test(weighted, weighted_table, halfspace_solution, scalar_market, cset, 0.0, 1.0, [[0.5]],
                          [0.1], SimConfig(n_paths=999))
