"""Equilibrium portfolio strategies from the backward ODEs for ``A(t)``.

Two problems are supported:

``constrained``
    portfolio weights restricted to a closed convex set ``U`` (zero interest
    rate).  ``A' = -|P_t(kappa(t) G(A))|^2`` with ``A(T) = 0`` and the
    equilibrium exposure ``a(t) = sigma^T(t) u(t) = P_t(kappa(t) G(A(t)))``.

``borrowing``
    unconstrained weights, saving rate ``r`` and borrowing rate ``R >= r``.
    The exposure is chosen among three regimes (borrow / boundary / save).

Both ODEs are integrated in reversed time ``s = T - t`` from ``A = 0`` with a
fixed-step classical RK4.  The drift integral ``B(t)`` is carried along as a
second state component so that ``J(t, x) = x exp(B(t)) H(A(t))`` can be
evaluated afterwards.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .constraint import ConvexSet, FullSpace, project_sigma_image, project_sigma_image_u
from .errors import ConfigError, ExtrapolationError, StepControlError, TableRangeError, WellposednessError
from .market import MarketModel, certify_ellipticity, kappa, kappa12
from .preference import GTable, compute_Q, simpson_refine

DEFAULT_N_STEPS = 2048
PROVEN_MARGIN = 1e-9


class Regime(str, enum.Enum):
    BORROW = "borrow"
    BOUNDARY = "boundary"
    SAVE = "save"
    CONSTRAINED = "constrained"
    UNCONSTRAINED = "unconstrained"


class Problem(str, enum.Enum):
    CONSTRAINED = "constrained"
    BORROWING = "borrowing"


@dataclass
class EquilibriumSolution:
    problem: Problem
    t_grid: np.ndarray
    A_vals: np.ndarray
    B_vals: np.ndarray
    a_vals: np.ndarray
    u_vals: np.ndarray
    regime: list
    fp_residual: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.u_vals.shape[1]

    @property
    def T(self) -> float:
        return float(self.t_grid[-1])

    def u_at(self, t: float) -> np.ndarray:
        """Strategy between nodes, linear in time."""
        return np.array([np.interp(t, self.t_grid, self.u_vals[:, j]) for j in range(self.d)])


# ---------------------------------------------------------------------------
# drift of log-wealth
# ---------------------------------------------------------------------------


def wealth_drift(model: MarketModel, t: float, u: np.ndarray, problem: Problem) -> float:
    """Instantaneous return of the self-financing portfolio ``u`` (fractions of wealth)."""
    mu = model.mu(t)
    if problem == Problem.CONSTRAINED:
        return float(u @ mu)
    e = float(u.sum())
    return max(1.0 - e, 0.0) * float(model.r(t)) - max(e - 1.0, 0.0) * float(model.R(t)) + float(u @ mu)


# ---------------------------------------------------------------------------
# right-hand sides
# ---------------------------------------------------------------------------


def _G(table: GTable, y: float) -> float:
    try:
        return table.G(y)
    except ExtrapolationError as exc:
        raise TableRangeError(
            f"A reached {y!r}, outside the G-table range [0, {table.y_max!r}]; rebuild the table with a larger y_max",
            value=y,
        ) from exc


def constrained_exposure(model: MarketModel, cset: ConvexSet, t: float, g: float):
    """Return ``(a, u, regime)`` with ``a = P_t(kappa(t) g)`` and ``u = (sigma^T)^-1 a``."""
    v = kappa(model, t) * g
    a, u = project_sigma_image_u(cset, model.sigma(t), v)
    dv = a - v
    active = float(np.sqrt(dv @ dv)) > 1e-12 * (1.0 + float(np.sqrt(v @ v)))
    return a, u, (Regime.CONSTRAINED if active else Regime.UNCONSTRAINED)


class _BorrowBasis(NamedTuple):
    v1: np.ndarray
    v2: np.ndarray
    tilt: np.ndarray
    minvar: np.ndarray
    sum1: float
    sum2: float
    st: np.ndarray
    mu: np.ndarray
    r: float
    R: float


def _borrowing_basis(model: MarketModel, t: float) -> _BorrowBasis:
    """Per-time vectors from which every two-rate portfolio is a linear function of G."""

    def compute():
        k1, k2 = kappa12(model, t)
        sig = model.sigma(t)
        st = sig.T
        v2 = np.linalg.solve(st, k2)
        v1 = v2 if k1 is k2 else np.linalg.solve(st, k1)
        cov = sig @ st
        one = np.ones(model.d)
        mu = model.mu(t)
        ci1 = np.linalg.solve(cov, one)
        cimu = np.linalg.solve(cov, mu)
        s1 = float(one @ ci1)
        smu = float(one @ cimu)
        return _BorrowBasis(v1, v2, cimu - (smu / s1) * ci1, ci1 / s1, float(v1.sum()), float(v2.sum()),
                            st, mu, float(model.r(t)), float(model.R(t)))

    t = float(t)
    return model._cached(("borrow", 0.0 if model.is_constant else t), compute)


def _portfolio(b: _BorrowBasis, g: float):
    if g * b.sum2 >= 1.0:
        return g * b.v2, Regime.BORROW
    if g * b.sum1 <= 1.0:
        return g * b.v1, Regime.SAVE
    return g * b.tilt + b.minvar, Regime.BOUNDARY


def borrowing_portfolio(model: MarketModel, t: float, g: float):
    """Equilibrium weights under two rates for risk tolerance ``g``; returns ``(u, regime)``.

    Branches are selected by comparing total risky weight with 1: borrow when
    the weight computed at the borrowing rate is at least 1, save when the
    weight at the saving rate is at most 1, and otherwise hold exactly 1 in
    the risky assets with the minimum-variance tilt.
    """
    return _portfolio(_borrowing_basis(model, t), g)


def borrowing_rhs(table: GTable, model: MarketModel, t: float, y: float):
    """``|sigma^T(t) u|^2`` for the selected two-rate portfolio at state ``y``, with its regime."""
    u, regime = borrowing_portfolio(model, t, _G(table, y))
    a = model.sigma(t).T @ u
    return float(a @ a), regime


# ---------------------------------------------------------------------------
# integrator
# ---------------------------------------------------------------------------


def _integrate(rhs: Callable[[float, float], tuple[float, float]], T: float, n_steps: int, y_max: float):
    """Fixed-step RK4 on ``(A, C)`` in reversed time; ``rhs(t, A)`` returns ``(|a|^2, drift)``.

    Each step is taken once with ``h`` and once as two steps of ``h/2``.  The
    two-half-step value is kept; their difference / 15 is the local error estimate.
    """
    h = T / n_steps

    def f(s, y):
        q, dr = rhs(T - s, y[0])
        return np.array([q, dr])

    def step(s, y, k1, hh):
        k2 = f(s + 0.5 * hh, y + 0.5 * hh * k1)
        k3 = f(s + 0.5 * hh, y + 0.5 * hh * k2)
        k4 = f(s + hh, y + hh * k3)
        return y + hh / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    ys = np.zeros((n_steps + 1, 2))
    y = np.zeros(2)
    max_err = 0.0
    for n in range(n_steps):
        s = n * h
        k1 = f(s, y)
        full = step(s, y, k1, h)
        half = step(s, y, k1, 0.5 * h)
        half = step(s + 0.5 * h, half, f(s + 0.5 * h, half), 0.5 * h)
        err = abs(half[0] - full[0]) / 15.0
        max_err = max(max_err, err)
        if err > 1e-8 * (1.0 + abs(half[0])):
            raise StepControlError(
                f"local error estimate {float(err)!r} at t={T - s - h!r} exceeds tolerance; increase n_steps"
            )
        if not (0.0 <= half[0] <= y_max):
            raise TableRangeError(
                f"A reached {float(half[0])!r} at t={T - s - h!r}, outside the G-table range [0, {y_max!r}]; "
                "rebuild the table with a larger y_max",
                value=float(half[0]),
            )
        y = half
        ys[n + 1] = y
    # reversed time -> forward time
    return ys[::-1].copy(), max_err


def _time_grid(T: float, n_steps: int) -> np.ndarray:
    return np.linspace(0.0, T, n_steps + 1)


def _check_steps(n_steps: int):
    if int(n_steps) != n_steps or n_steps < 1:
        raise ValueError(f"n_steps must be a positive integer, got {n_steps!r}")


# ---------------------------------------------------------------------------
# constrained problem
# ---------------------------------------------------------------------------


def solve_constrained(table: GTable, model: MarketModel, cset: ConvexSet,
                      n_steps: int = DEFAULT_N_STEPS, exact_residual: bool = True) -> EquilibriumSolution:
    """Equilibrium under a convex constraint set with zero interest rate."""
    _check_steps(n_steps)
    if not model.has_zero_rate:
        raise ConfigError("the constrained problem requires a zero interest rate", key="market.r")
    if cset.d != model.d:
        raise ConfigError(f"constraint dimension {cset.d} differs from market dimension {model.d}", key="constraint")
    certify_ellipticity(model)

    def rhs(t, A):
        k = kappa(model, t)
        a = project_sigma_image(cset, model.sigma(t), k * _G(table, A))
        # u.mu = (sigma^T u).(sigma^-1 mu) = a.kappa
        return float(a @ a), float(a @ k)

    ys, max_err = _integrate(rhs, model.T, n_steps, table.y_max)
    t_grid = _time_grid(model.T, n_steps)
    A = ys[:, 0]
    A[-1] = 0.0
    B = ys[:, 1] - 0.5 * A
    n = len(t_grid)
    a_vals = np.zeros((n, model.d))
    u_vals = np.zeros((n, model.d))
    regime = []
    fp = np.zeros(n)
    g_ex = table.G_exact_many(A) if exact_residual else None
    for k, t in enumerate(t_grid):
        a, u, reg = constrained_exposure(model, cset, t, _G(table, A[k]))
        a_vals[k], u_vals[k] = a, u
        regime.append(reg)
        if exact_residual:
            a_ex, _, _ = constrained_exposure(model, cset, t, float(g_ex[k]))
            fp[k] = float(np.linalg.norm(a - a_ex))
    diag = {"steps": n_steps, "max_local_error": max_err, "warnings": []}
    return EquilibriumSolution(Problem.CONSTRAINED, t_grid, A, B, a_vals, u_vals, regime, fp, diag)


def _gl_nodes(k: int = 5):
    x, w = np.polynomial.legendre.leggauss(k)
    return 0.5 * (x + 1.0), 0.5 * w


def integrate_in_time(fn: Callable[[float], float], t_grid: np.ndarray, breakpoints=(), order: int = 5) -> np.ndarray:
    """``int_{t_k}^{T} fn(s) ds`` for every node, Gauss-Legendre per interval, split at breakpoints."""
    x, w = _gl_nodes(order)
    bps = np.asarray(breakpoints, dtype=float)
    per = np.zeros(len(t_grid) - 1)
    for k in range(len(t_grid) - 1):
        a, b = t_grid[k], t_grid[k + 1]
        inner = bps[(bps > a) & (bps < b)]
        edges = np.concatenate([[a], inner, [b]])
        tot = 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            tot += (hi - lo) * sum(wi * fn(lo + xi * (hi - lo)) for xi, wi in zip(x, w))
        per[k] = tot
    out = np.zeros(len(t_grid))
    out[:-1] = np.cumsum(per[::-1])[::-1]
    return out


def solve_unconstrained_closed_form(table: GTable, model: MarketModel, n_steps: int = DEFAULT_N_STEPS,
                                    exact_residual: bool = False) -> EquilibriumSolution:
    """Unconstrained equilibrium by inverting the cumulative integral of ``1/G^2``.

    ``A(t) = Gcal^-1(int_t^T |kappa|^2)`` and ``B(t) = Phi(A(t)) - A(t)/2`` where
    ``Phi`` integrates ``1/G``.  Used as an oracle for :func:`solve_constrained`.
    """
    _check_steps(n_steps)
    t_grid = _time_grid(model.T, n_steps)

    def k2(s):
        k = kappa(model, s)
        return float(k @ k)

    K = integrate_in_time(k2, t_grid, model.breakpoints())
    top = float(table.Gcal_vals[-1])
    if top - K[0] < PROVEN_MARGIN:
        raise WellposednessError(
            f"Gcal(y_max) = {top!r} does not exceed int_0^T |kappa|^2 = {K[0]!r}; enlarge y_max or the horizon is too long"
        )
    A = np.array([table.Gcal_inv(float(v)) for v in K])
    A[-1] = 0.0
    n = len(t_grid)
    a_vals = np.zeros((n, model.d))
    u_vals = np.zeros((n, model.d))
    fp = np.zeros(n)
    g_ex = table.G_exact_many(A) if exact_residual else None
    for k, t in enumerate(t_grid):
        kap = kappa(model, t)
        g = table.G(A[k])
        a_vals[k] = kap * g
        u_vals[k] = np.linalg.solve(model.sigma(t).T, a_vals[k])
        if exact_residual:
            fp[k] = float(np.linalg.norm(a_vals[k] - kap * g_ex[k]))
    B = table.Phi(A) - 0.5 * A
    regime = [Regime.UNCONSTRAINED] * n
    diag = {"steps": n_steps, "max_local_error": 0.0, "warnings": [], "method": "closed_form"}
    return EquilibriumSolution(Problem.CONSTRAINED, t_grid, A, np.asarray(B, dtype=float), a_vals, u_vals, regime, fp, diag)


# ---------------------------------------------------------------------------
# borrowing problem
# ---------------------------------------------------------------------------


def solve_borrowing(table: GTable, model: MarketModel, n_steps: int = DEFAULT_N_STEPS,
                    exact_residual: bool = True) -> EquilibriumSolution:
    """Equilibrium with saving rate ``r`` and borrowing rate ``R >= r``.

    Hand-checkable instance: one asset with ``sigma = 0.2``, ``mu = 0.07``,
    ``r = 0.02``, ``R = 0.05`` and a single CRRA atom at ``gamma = 0.5``, so
    ``G = 1/(1 - gamma) = 2``.  The weight at the borrowing rate is
    ``2 (0.07 - 0.05) / 0.04 = 1``, which meets the borrow threshold (the
    weight at the saving rate would be 2.5), hence ``u(t) = 1`` for all ``t``
    and ``A(0) = T (0.2 * 1)^2``.
    """
    _check_steps(n_steps)
    certify_ellipticity(model)

    def rhs(t, A):
        b = _borrowing_basis(model, t)
        u, _ = _portfolio(b, _G(table, A))
        a = b.st @ u
        e = float(u.sum())
        drift = max(1.0 - e, 0.0) * b.r - max(e - 1.0, 0.0) * b.R + float(u @ b.mu)
        return float(a @ a), drift

    ys, max_err = _integrate(rhs, model.T, n_steps, table.y_max)
    t_grid = _time_grid(model.T, n_steps)
    A = ys[:, 0]
    A[-1] = 0.0
    B = ys[:, 1] - 0.5 * A
    n = len(t_grid)
    a_vals = np.zeros((n, model.d))
    u_vals = np.zeros((n, model.d))
    regime = []
    fp = np.zeros(n)
    odd_nodes = []
    g_ex = table.G_exact_many(A) if exact_residual else None
    for k, t in enumerate(t_grid):
        u, reg = borrowing_portfolio(model, t, _G(table, A[k]))
        st = model.sigma(t).T
        u_vals[k] = u
        a_vals[k] = st @ u
        regime.append(reg)
        if exact_residual:
            u_ex, _ = borrowing_portfolio(model, t, float(g_ex[k]))
            fp[k] = float(np.linalg.norm(a_vals[k] - st @ u_ex))
        b = _borrowing_basis(model, t)
        if b.sum1 <= 0 or b.sum2 <= 0:
            odd_nodes.append(float(t))
    switches = sum(1 for p, q in zip(regime[:-1], regime[1:]) if p != q)
    warnings = []
    if switches > n_steps / 4:
        warnings.append(f"regime chattering: {switches} switches over {n_steps} steps")
    if odd_nodes:
        warnings.append(f"{len(odd_nodes)} nodes with non-positive total risky weight per unit G")
    diag = {"steps": n_steps, "max_local_error": max_err, "warnings": warnings,
            "regime_switches": switches, "nonpositive_threshold_nodes": odd_nodes}
    return EquilibriumSolution(Problem.BORROWING, t_grid, A, B, a_vals, u_vals, regime, fp, diag)


# ---------------------------------------------------------------------------
# arbitrary state-independent candidates
# ---------------------------------------------------------------------------


def solution_from_strategy(model: MarketModel, t_grid, u_vals, problem: Problem | str,
                           regime=None) -> EquilibriumSolution:
    """Wrap a state-independent strategy (linear in time between nodes) with its ``A`` and ``B``.

    The candidate need not be an equilibrium; ``fp_residual`` is left as NaN.
    """
    problem = Problem(problem)
    t_grid = np.asarray(t_grid, dtype=float)
    u_vals = np.atleast_2d(np.asarray(u_vals, dtype=float))
    if u_vals.shape[0] != len(t_grid):
        u_vals = u_vals.T

    def u_at(s):
        return np.array([np.interp(s, t_grid, u_vals[:, j]) for j in range(u_vals.shape[1])])

    def var(s):
        a = model.sigma(s).T @ u_at(s)
        return float(a @ a)

    def drift(s):
        return wealth_drift(model, s, u_at(s), problem)

    order = 5 if problem == Problem.CONSTRAINED else 8
    A = integrate_in_time(var, t_grid, model.breakpoints(), order=order)
    C = integrate_in_time(drift, t_grid, model.breakpoints(), order=order)
    a_vals = np.array([model.sigma(t).T @ u for t, u in zip(t_grid, u_vals)])
    if regime is None:
        if problem == Problem.BORROWING:
            regime = []
            for u in u_vals:
                e = float(np.sum(u))
                regime.append(Regime.BOUNDARY if abs(e - 1.0) <= 1e-12 else (Regime.BORROW if e > 1 else Regime.SAVE))
        else:
            regime = [Regime.UNCONSTRAINED] * len(t_grid)
    fp = np.full(len(t_grid), np.nan)
    return EquilibriumSolution(problem, t_grid, A, C - 0.5 * A, a_vals, u_vals.copy(), list(regime), fp,
                               {"steps": len(t_grid) - 1, "max_local_error": 0.0, "warnings": [], "method": "candidate"})


def scaled_candidate(sol: EquilibriumSolution, model: MarketModel, factor: float) -> EquilibriumSolution:
    """The strategy ``factor * u(t)`` with its own ``A`` and ``B`` recomputed."""
    return solution_from_strategy(model, sol.t_grid, factor * sol.u_vals, sol.problem)


# ---------------------------------------------------------------------------
# well-posedness
# ---------------------------------------------------------------------------


@dataclass
class WellposednessReport:
    problem: Problem
    condition_values: dict
    verdict: str
    notes: list

    @property
    def proven(self) -> bool:
        return self.verdict == "Proven"


def _margin_ok(lhs: float, rhs: float) -> bool:
    return bool(lhs - rhs >= PROVEN_MARGIN) or (np.isinf(lhs) and not np.isinf(rhs))


def check_wellposedness(problem: Problem | str, table: GTable, model: MarketModel,
                        cset: ConvexSet | None = None) -> WellposednessReport:
    """Evaluate the sufficient conditions for a unique ODE solution on ``[0, T]``.

    Conditions involving integrals up to infinity are evaluated at the table's
    ``y_max`` as a finite proxy; the verdict is ``Proven`` only when an
    applicable inequality holds there with margin at least 1e-9.
    """
    problem = Problem(problem)
    cert = certify_ellipticity(model)
    y_max = table.y_max
    vals: dict = {"y_max": y_max, "c1": cert.c1, "c2": cert.c2, "c3": cert.c3, "T": model.T}
    notes: list = []
    proven = False
    G_const = table.pref.constant_G()
    vals["sup_G_table"] = float(np.max(table.G_vals))

    if problem == Problem.BORROWING:
        c = table.pref.rra_lower_bound()
        if G_const is not None:
            vals["G_constant"] = G_const
            notes.append("G is constant: A(t) is the integral of a bounded right-hand side")
            proven = True
        if c is not None:
            vals["G_upper_bound"] = 1.0 / c
            notes.append("G is bounded by the inverse relative risk aversion bound")
            proven = True
        if not proven:
            notes.append("no global bound on G is known for this preference")
        return WellposednessReport(problem, vals, "Proven" if proven else "NotProven", notes)

    if cset is None:
        cset = FullSpace(model.d)
    if G_const is not None:
        vals["G_constant"] = G_const
        notes.append("G is constant: explicit solution")
        proven = True


    def k2(s):
        k = kappa(model, s)
        return float(k @ k)

    int_k2 = float(integrate_in_time(k2, np.array([0.0, model.T]), model.breakpoints())[0])
    vals["int_kappa2"] = int_k2
    if isinstance(cset, FullSpace):
        vals["Gcal_y_max"] = float(table.Gcal_vals[-1])
        if _margin_ok(vals["Gcal_y_max"], int_k2):
            notes.append("Gcal(y_max) exceeds the integrated squared price of risk")
            proven = True

    if model.is_constant:

        def pnorm2(ys):
            out = np.empty_like(ys)
            for i, y in enumerate(ys):
                a, _, _ = constrained_exposure(model, cset, 0.0, table.G(y))
                out[i] = float(a @ a)
            return out

        probe = pnorm2(table.y_grid)
        if np.any(probe <= 1e-300):
            P_val = float("inf")
        else:
            P_val = simpson_refine(lambda y: 1.0 / pnorm2(y), 0.0, y_max, n0=len(table.y_grid) - 1)
        vals["P_y_max"] = P_val
        if _margin_ok(P_val, model.T):
            notes.append("P(y_max) exceeds T")
            proven = True

    beta = cset.witness()
    b2 = float(beta @ beta)
    Q = compute_Q(table, cert.c2, cert.c3, b2, y_max)
    vals["Q_y_max"] = Q
    vals["beta_norm2"] = b2
    if _margin_ok(Q, model.T):
        notes.append("no-blow-up: Q(y_max) exceeds T, so Q^-1(T) < y_max")
        proven = True
    return WellposednessReport(problem, vals, "Proven" if proven else "NotProven", notes)
