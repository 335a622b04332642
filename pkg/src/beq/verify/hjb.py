"""Analytic objective and extended-HJB residuals for state-independent candidates.

For a state-independent strategy the terminal wealth started from ``x`` at ``t``
is ``x exp(B(t) + sqrt(A(t)) xi)``, so ``f(t, x, z) = E[F(X(T) / z)]`` and all of
its partial derivatives reduce to lognormal moments.  Time derivatives of
``A`` and ``B`` are taken from cubic splines through the solution's node values,
so the residual at the candidate itself is a genuine consistency check rather
than an identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.interpolate import CubicSpline

from ..constraint import ConvexSet, FullSpace, contains, project_native, project_sigma_image_u
from ..equilibrium import EquilibriumSolution, Problem, borrowing_portfolio, wealth_drift
from ..errors import DegenerateCurvatureError, InternalConsistencyError
from ..market import MarketModel, kappa
from ..preference import BetweennessPreference, GTable, QuadratureRule, lognormal_moments

SMALL_A = 1e-8
HJB_TOL = 2e-6
SWEEP_SAMPLES = 200
SWEEP_SLACK = 1e-7


class _Curves:
    def __init__(self, sol: EquilibriumSolution):
        self.A = CubicSpline(sol.t_grid, sol.A_vals)
        self.B = CubicSpline(sol.t_grid, sol.B_vals)
        self.dA = self.A.derivative()
        self.dB = self.B.derivative()


def _curves(sol: EquilibriumSolution) -> _Curves:
    c = sol.__dict__.get("_curves")
    if c is None:
        c = _Curves(sol)
        sol.__dict__["_curves"] = c
    return c


def _node_or(sol: EquilibriumSolution, t: float, vals: np.ndarray, spline) -> float:
    k = int(np.searchsorted(sol.t_grid, t))
    if k < len(sol.t_grid) and sol.t_grid[k] == t:
        return float(vals[k])
    return float(spline(t))


def A_at(sol: EquilibriumSolution, t: float) -> float:
    """``A(t)``; node values are returned exactly, spline in between (clamped at 0)."""
    return max(_node_or(sol, t, sol.A_vals, _curves(sol).A), 0.0)


def B_at(sol: EquilibriumSolution, t: float) -> float:
    return _node_or(sol, t, sol.B_vals, _curves(sol).B)


def _check_t(sol: EquilibriumSolution, t: float):
    if not (sol.t_grid[0] <= t <= sol.t_grid[-1]):
        raise ValueError(f"t={t!r} outside solution grid [{float(sol.t_grid[0])!r}, {float(sol.t_grid[-1])!r}]")


def analytic_J(table: GTable, sol: EquilibriumSolution, t: float, x: float) -> float:
    """Certainty equivalent ``x exp(B(t)) H(A(t))`` of the candidate started from ``(t, x)``."""
    _check_t(sol, t)
    if not x > 0:
        raise ValueError(f"x must be > 0, got {x!r}")
    return float(x * np.exp(B_at(sol, t)) * table.H(A_at(sol, t)))


class FDerivatives(NamedTuple):
    f: float
    f_t: float
    f_x: float
    f_xx: float
    f_z: float


def _moments(pref, sol, t, x, z, quad):
    A = A_at(sol, t)
    B = B_at(sol, t)
    return A, lognormal_moments(pref, (x / z) * np.exp(B), A, quad)


def f_and_derivatives(pref: BetweennessPreference, table: GTable, sol: EquilibriumSolution,
                      t: float, x: float, z: float, quad: QuadratureRule | None = None) -> FDerivatives:
    """``f = E[F(X(T)/z)]`` and its partial derivatives for the candidate ``sol``.

    With ``w = (x/z) exp(B + sqrt(A) xi)``: ``x f_x = E[F'(w) w]``,
    ``x^2 f_xx = E[F''(w) w^2]``, ``z f_z = -E[F'(w) w]`` and
    ``f_t = B' E[F'(w) w] + A' E[F'(w) w xi] / (2 sqrt(A))``.  For tiny ``A``
    the last term uses Gaussian integration by parts,
    ``E[F'(w) w xi] / sqrt(A) = E[F''(w) w^2] + E[F'(w) w]``, which is finite at ``A = 0``.
    """
    _check_t(sol, t)
    if not z > 0:
        raise ValueError(f"z must be > 0, got {z!r}")
    quad = quad or table.quad
    A, m = _moments(pref, sol, t, x, z, quad)
    c = _curves(sol)
    dA = float(c.dA(t))
    dB = float(c.dB(t))
    if A < SMALL_A:
        xi_term = m.E2 + m.E1
    else:
        xi_term = m.E1xi / np.sqrt(A)
    f_t = dB * m.E1 + 0.5 * dA * xi_term
    f_x = m.E1 / x
    f_xx = m.E2 / (x * x)
    f_z = -m.E1 / z
    if not f_z < 0:
        raise DegenerateCurvatureError(f"f_z = {f_z!r} is not negative at t={t!r}, x={x!r}")
    if not f_xx < 0:
        raise DegenerateCurvatureError(f"f_xx = {f_xx!r} is not negative at t={t!r}, x={x!r}")
    return FDerivatives(float(m.EF), float(f_t), float(f_x), float(f_xx), float(f_z))


def _generator(d: FDerivatives, model: MarketModel, t: float, x: float, u: np.ndarray, problem: Problem) -> float:
    a = model.sigma(t).T @ u
    drift = wealth_drift(model, t, u, problem)
    return d.f_t + x * drift * d.f_x + 0.5 * float(a @ a) * x * x * d.f_xx


def hjb_residual(pref: BetweennessPreference, table: GTable, sol: EquilibriumSolution, model: MarketModel,
                 t: float, x: float, u, problem: Problem | str | None = None,
                 quad: QuadratureRule | None = None) -> float:
    """Generator of ``f`` under the constant control ``u`` at ``z = J(t, x)``."""
    problem = Problem(problem) if problem is not None else sol.problem
    u = np.atleast_1d(np.asarray(u, dtype=float))
    z = analytic_J(table, sol, t, x)
    d = f_and_derivatives(pref, table, sol, t, x, z, quad)
    return _generator(d, model, t, x, u, problem)


def _maximizer(model, cset, t, g_eff, problem):
    if problem == Problem.BORROWING:
        u, _ = borrowing_portfolio(model, t, g_eff)
        return u
    _, u = project_sigma_image_u(cset, model.sigma(t), kappa(model, t) * g_eff)
    return u


def _sweep(model, cset, t, u_star, problem, rng, n):
    d = len(u_star)
    scale = 1.0 + float(np.linalg.norm(u_star))
    radii = scale * np.logspace(-3, 0, n)
    out = []
    for r in radii:
        u = u_star + r * rng.standard_normal(d)
        if problem == Problem.CONSTRAINED:
            u = project_native(cset, u)
        out.append(u)
    return out


def max_hjb_residual(pref: BetweennessPreference, table: GTable, sol: EquilibriumSolution, model: MarketModel,
                     cset: ConvexSet | None, t: float, x: float, problem: Problem | str | None = None,
                     quad: QuadratureRule | None = None, n_samples: int = SWEEP_SAMPLES,
                     seed: int = 0) -> tuple[float, np.ndarray]:
    """Maximum of the generator over feasible controls, and the maximizing ``u``.

    The generator is a concave quadratic in ``a = sigma^T u`` (plus a concave
    piecewise-linear drift under two rates), maximised at ``P_t(kappa G_eff)``
    or at the three-branch portfolio, where ``G_eff = -x f_x / (x^2 f_xx)``.
    A random feasible sweep guards the analytic maximizer.
    """
    problem = Problem(problem) if problem is not None else sol.problem
    if cset is None:
        cset = FullSpace(model.d)
    z = analytic_J(table, sol, t, x)
    d = f_and_derivatives(pref, table, sol, t, x, z, quad)
    g_eff = -d.f_x / (x * d.f_xx)
    u_star = _maximizer(model, cset, t, g_eff, problem)
    best = _generator(d, model, t, x, u_star, problem)
    rng = np.random.default_rng(seed)
    for u in _sweep(model, cset, t, u_star, problem, rng, n_samples):
        v = _generator(d, model, t, x, u, problem)
        if v > best + SWEEP_SLACK * (1.0 + abs(best)):
            raise InternalConsistencyError(
                f"random feasible control {u.tolist()!r} beats the analytic maximizer "
                f"({v!r} > {best!r}) at t={t!r}, x={x!r}"
            )
    return float(best), u_star


@dataclass
class HJBReport:
    points: list
    residual_at_candidate: np.ndarray
    max_residual: np.ndarray
    argmax_u: np.ndarray
    verdicts: list
    tol: float = HJB_TOL
    notes: list = field(default_factory=list)

    @property
    def verdict(self) -> str:
        return "Pass" if all(v == "Pass" for v in self.verdicts) else "Fail"


def hjb_report(pref: BetweennessPreference, table: GTable, sol: EquilibriumSolution, model: MarketModel,
               cset: ConvexSet | None, t_points, x_points, problem: Problem | str | None = None,
               tol: float = HJB_TOL, quad: QuadratureRule | None = None) -> HJBReport:
    """Residual at the candidate and maximal residual on a ``t x x`` grid."""
    problem = Problem(problem) if problem is not None else sol.problem
    if cset is None:
        cset = FullSpace(model.d)
    pts, rc, rm, us, verdicts = [], [], [], [], []
    infeasible = False
    for t in t_points:
        u_c = sol.u_at(float(t))
        # an infeasible candidate is not admissible, whatever its residual
        feasible = problem != Problem.CONSTRAINED or contains(cset, u_c, 1e-8)
        infeasible |= not feasible
        for x in x_points:
            t, x = float(t), float(x)
            r_c = hjb_residual(pref, table, sol, model, t, x, u_c, problem, quad)
            r_m, u_m = max_hjb_residual(pref, table, sol, model, cset, t, x, problem, quad)
            pts.append((t, x))
            rc.append(r_c)
            rm.append(r_m)
            us.append(u_m)
            verdicts.append("Pass" if feasible and abs(r_c) <= tol and r_m <= tol else "Fail")
    notes = ["a passing report refutes no deviation; it does not certify uniqueness"]
    if infeasible:
        notes.append("candidate leaves the constraint set at some checked time")
    return HJBReport(pts, np.array(rc), np.array(rm), np.array(us), verdicts, tol, notes)
