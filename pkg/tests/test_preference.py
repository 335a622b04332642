import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beq.errors import DegenerateCurvatureError, ExtrapolationError, NumericalDomainError, RootBracketError
from beq.preference import (
    CustomPreference,
    DiscreteMeasure,
    MixedCRRA,
    WeightedUtility,
    build_G_table,
    compute_G,
    compute_G_mixed_closed,
    compute_H,
    compute_Q,
    expected_F,
    gauss_hermite,
)

LOG = MixedCRRA([(0.0, 1.0)])


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------


def test_quadrature_rule_normalised_and_symmetric():
    q = gauss_hermite(96)
    assert abs(q.weights.sum() - 1.0) < 1e-12
    assert np.array_equal(q.nodes, -q.nodes[::-1])
    # first moments of N(0, 1)
    assert abs(q.expect(q.nodes)) < 1e-14
    assert abs(q.expect(q.nodes**2) - 1.0) < 1e-12


@pytest.mark.parametrize("pref", [WeightedUtility(0.25, -0.5), WeightedUtility(0.0, -0.3), LOG,
                                  MixedCRRA([(-2.0, 0.3), (0.0, 0.3), (0.7, 0.4)])])
def test_generator_shape(pref):
    assert abs(float(pref.F(np.array([1.0]))[0])) <= 1e-12
    pref.check_shape()


@pytest.mark.parametrize("rho,gamma", [(0.25, 0.5), (0.25, -1.0), (-0.6, -0.5), (0.5, -0.5), (0.0, 0.0)])
def test_weighted_parameter_bounds(rho, gamma):
    with pytest.raises(ValueError):
        WeightedUtility(rho, gamma)


@pytest.mark.parametrize("atoms", [[], [(0.5, 0.6), (0.2, 0.4)], [(0.2, 0.5), (0.5, 0.6)], [(1.0, 1.0)],
                                   [(0.1, -0.5), (0.2, 1.5)]])
def test_discrete_measure_invariants(atoms):
    with pytest.raises(ValueError):
        DiscreteMeasure(atoms)


def test_custom_preference_shape_check():
    good = CustomPreference(np.log, lambda x: 1.0 / x, lambda x: -1.0 / x**2, growth_exponent=1.0)
    good.check_shape()
    bad = CustomPreference(lambda x: x - 1.0, lambda x: np.ones_like(x), lambda x: np.zeros_like(x), 1.0)
    with pytest.raises(ValueError):
        bad.check_shape()


# ---------------------------------------------------------------------------
# expected_F
# ---------------------------------------------------------------------------


def test_expected_F_examples(weighted):
    assert expected_F(weighted, 0.0, 1.0) == 0.0
    assert abs(expected_F(LOG, 4.0, 1.0)) < 1e-14
    z = float(np.exp(-0.125))  # closed-form H(1) for rho=0.25, gamma=-0.5
    assert abs(z - 0.88250) < 1e-5
    assert abs(expected_F(weighted, 1.0, z)) < 1e-8


def test_expected_F_rejects_bad_arguments(weighted):
    with pytest.raises(ValueError):
        expected_F(weighted, -1.0, 1.0)
    with pytest.raises(ValueError):
        expected_F(weighted, 1.0, 0.0)


def test_expected_F_names_nonfinite_node():
    pref = CustomPreference(lambda x: np.where(x > 5.0, np.nan, np.log(x)), lambda x: 1.0 / x,
                            lambda x: -1.0 / x**2, 1.0)
    with pytest.raises(NumericalDomainError, match="node"):
        expected_F(pref, 1.0, 1.0)


@settings(max_examples=40, deadline=None)
@given(y=st.floats(0.0, 4.0), z0=st.floats(0.2, 3.0))
def test_expected_F_decreasing_in_z(weighted, y, z0):
    zs = z0 * np.array([1.0, 1.1, 1.3, 2.0])
    vals = [expected_F(weighted, y, z) for z in zs]
    assert all(b < a for a, b in zip(vals[:-1], vals[1:]))


# ---------------------------------------------------------------------------
# H and G
# ---------------------------------------------------------------------------


def test_compute_H_examples(weighted):
    assert compute_H(weighted, 0.0) == 1.0
    assert compute_H(LOG, 0.0) == 1.0
    assert abs(compute_H(LOG, 2.0) - 1.0) < 1e-12
    assert abs(compute_H(weighted, 2.0) - np.exp(-0.25)) < 1e-8


@pytest.mark.parametrize("y", [0.0, 0.3, 1.0, 2.5, 5.0])
def test_weighted_closed_forms(weighted, y):
    assert abs(compute_H(weighted, y) - weighted.closed_form_H(y)) < 1e-8
    assert abs(compute_G(weighted, y) - 0.8) < 1e-8


@pytest.mark.parametrize("y", [0.1, 0.7, 1.9, 3.0])
def test_H_residual_small(two_atom, y):
    h = compute_H(two_atom, y)
    assert abs(expected_F(two_atom, y, h)) <= 1e-10


def test_compute_H_guess_gives_same_root(two_atom):
    h = compute_H(two_atom, 1.3)
    assert compute_H(two_atom, 1.3, guess=h * (1 + 1e-9)) == pytest.approx(h, abs=1e-14)
    assert compute_H(two_atom, 1.3, guess=0.01) == pytest.approx(h, abs=1e-14)


def test_compute_H_bracket_failure():
    # F > 0 everywhere: no root exists
    pref = CustomPreference(lambda x: np.ones_like(x), lambda x: np.ones_like(x), lambda x: -np.ones_like(x), 1.0)
    with pytest.raises(RootBracketError):
        compute_H(pref, 1.0)


def test_compute_G_examples(weighted, two_atom):
    assert abs(compute_G(weighted, 3.0) - 0.8) < 1e-8
    assert abs(compute_G(MixedCRRA([(0.5, 1.0)]), 1.0) - 2.0) < 1e-8
    g0 = compute_G(two_atom, 0.0)
    assert 0.5 <= g0 <= 2.0


def test_compute_G_degenerate_curvature():
    pref = CustomPreference(lambda x: x - 1.0, lambda x: np.ones_like(x), lambda x: np.zeros_like(x), 1.0)
    with pytest.raises(DegenerateCurvatureError):
        compute_G(pref, 1.0)


@pytest.mark.parametrize("gamma", [-1.0, 0.0, 0.5])
def test_dirac_reduction(gamma):
    pref = MixedCRRA([(gamma, 1.0)])
    for y in (0.0, 0.5, 2.0):
        assert abs(compute_G(pref, y) - 1.0 / (1.0 - gamma)) < 1e-8
        assert abs(compute_G_mixed_closed(pref.measure, y, compute_H(pref, y)) - 1.0 / (1.0 - gamma)) < 1e-12


def test_mixed_closed_examples(two_atom):
    assert compute_G_mixed_closed(DiscreteMeasure([(0.0, 1.0)]), 0.0, 1.0) == 1.0
    h = compute_H(two_atom, 1.0)
    assert abs(compute_G_mixed_closed(two_atom.measure, 1.0, h) - compute_G(two_atom, 1.0)) < 1e-8


@settings(max_examples=25, deadline=None)
@given(g0=st.floats(-3.0, 0.3), gap=st.floats(0.05, 0.6), w=st.floats(0.05, 0.95), y=st.floats(0.0, 3.0))
def test_mixed_closed_agrees_with_quadrature(g0, gap, w, y):
    pref = MixedCRRA([(g0, w), (g0 + gap, 1.0 - w)])
    h = compute_H(pref, y)
    closed = compute_G_mixed_closed(pref.measure, y, h)
    assert abs(closed - compute_G(pref, y, H_y=h)) < 1e-8
    lo, hi = pref.G_bounds()
    assert lo - 1e-8 <= closed <= hi + 1e-8


@pytest.mark.parametrize("pref", [WeightedUtility(0.25, -0.5), MixedCRRA([(-1.0, 0.5), (0.5, 0.5)])])
def test_quadrature_order_convergence(pref):
    q1, q2 = gauss_hermite(96), gauss_hermite(192)
    for y in (0.5, 1.0, 2.0):
        assert abs(compute_H(pref, y, q1) - compute_H(pref, y, q2)) < 1e-9
        assert abs(compute_G(pref, y, q1) - compute_G(pref, y, q2)) < 1e-9


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------


def test_table_examples(weighted):
    t = build_G_table(weighted, 2.0, n_nodes=64)
    assert abs(t.Gcal(2.0) - 3.125) < 1e-9
    assert t.Gcal_vals[0] == 0.0
    t2 = build_G_table(MixedCRRA([(0.5, 1.0)]), 1.0)
    assert abs(t2.Gcal(1.0) - 0.25) < 1e-9


def test_table_invariants(two_atom_table, two_atom):
    t = two_atom_table
    assert t.H_vals[0] == 1.0
    assert np.all(t.H_vals > 0) and np.all(t.G_vals > 0)
    assert np.all(np.diff(t.Gcal_vals) > 0)
    assert np.all(t.G_vals <= 1.0 / two_atom.rra_lower_bound() + 1e-8)


def test_table_interpolation_accuracy(two_atom_table, two_atom):
    for y in (0.013, 0.77, 1.5555):
        assert abs(two_atom_table.G(y) - compute_G(two_atom, y)) < 1e-7
        assert abs(two_atom_table.H(y) - compute_H(two_atom, y)) < 1e-7


def test_table_refuses_extrapolation(weighted_table):
    with pytest.raises(ExtrapolationError):
        weighted_table.G(2.5)
    with pytest.raises(ExtrapolationError):
        weighted_table.H(-0.1)
    with pytest.raises(ExtrapolationError):
        weighted_table.Gcal_inv(10.0)


def test_table_scalar_and_array_paths_agree(two_atom_table):
    ys = np.linspace(0.0, 2.0, 37)
    arr = two_atom_table.G(ys)
    assert np.allclose(arr, [two_atom_table.G(float(y)) for y in ys], rtol=0, atol=1e-15)


def test_G_exact_many_matches_scalar(two_atom_table):
    ys = np.linspace(0.0, 2.0, 41)
    many = two_atom_table.G_exact_many(ys)
    assert np.max(np.abs(many - [two_atom_table.G_exact(float(y)) for y in ys])) < 1e-12


def test_Gcal_inverse_round_trip(two_atom_table):
    for y in (0.0, 0.3, 1.0, 1.99):
        assert abs(two_atom_table.Gcal_inv(two_atom_table.Gcal(y)) - y) < 1e-10


def test_build_table_rejects_bad_sizes(weighted):
    with pytest.raises(ValueError):
        build_G_table(weighted, 0.0)
    with pytest.raises(ValueError):
        build_G_table(weighted, 1.0, n_nodes=8)


# ---------------------------------------------------------------------------
# Q
# ---------------------------------------------------------------------------


def test_compute_Q_examples(weighted_table, dirac_half_table):
    # integrand 1 / (6 * 0.16 * 0.64 + 4 * 0.04) = 1 / 0.7744
    assert abs(compute_Q(weighted_table, 0.04, 0.16, 1.0, 1.0) - 1.0 / 0.7744) < 1e-10
    assert compute_Q(weighted_table, 0.04, 0.16, 1.0, 0.0) == 0.0
    t = build_G_table(MixedCRRA([(0.5, 1.0)]), 2.5)
    assert abs(compute_Q(t, 1.0, 1.0, 0.0, 2.4) - 0.1) < 1e-10


def test_compute_Q_increasing_and_bounded(two_atom_table):
    xs = np.linspace(0.0, 2.0, 9)
    qs = [compute_Q(two_atom_table, 0.04, 0.2, 0.5, x) for x in xs]
    assert all(b > a for a, b in zip(qs[:-1], qs[1:]))
    with pytest.raises(ExtrapolationError):
        compute_Q(two_atom_table, 0.04, 0.2, 0.5, 3.0)


def test_near_zero_exponent_matches_log():
    near = MixedCRRA([(-4.4e-16, 1.0)])
    x = np.array([1e-3, 0.5, 2.0, 50.0])
    assert np.allclose(near.F(x), np.log(x), rtol=1e-12, atol=0)
    assert abs(compute_H(near, 1.5) - 1.0) < 1e-12
