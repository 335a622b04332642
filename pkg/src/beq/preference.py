"""CRRA betweenness preferences and the lognormal functions H, G and their integrals.

A preference is described by a generator ``F`` on ``(0, inf)`` with ``F(1) = 0``,
``F' > 0`` and ``F'' < 0``.  The certainty equivalent ``J`` of a terminal wealth
``X`` solves ``E[F(X / J)] = 0``.  For a lognormal ``X = exp(sqrt(y) * xi)`` the
certainty equivalent is ``H(y)``, and ``G(y)`` is the induced risk tolerance.

Expectations over ``xi ~ N(0, 1)`` are taken with a fixed Gauss-Hermite rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator
from scipy.optimize import brentq

from .errors import (
    DegenerateCurvatureError,
    ExtrapolationError,
    InternalConsistencyError,
    NumericalDomainError,
    RootBracketError,
)

DEFAULT_QUAD_ORDER = 96
H_RESIDUAL_TOL = 1e-10
_MAX_DOUBLINGS = 60
NEWTON_MAX_ITER = 8


# ---------------------------------------------------------------------------
# preference families
# ---------------------------------------------------------------------------


class BetweennessPreference:
    """Base class.  Subclasses implement ``F``, ``dF`` and ``d2F`` on numpy arrays."""

    family = "abstract"
    growth_exponent: float = 1.0

    def F(self, x):
        raise NotImplementedError

    def dF(self, x):
        raise NotImplementedError

    def d2F(self, x):
        raise NotImplementedError

    def rra_lower_bound(self) -> float | None:
        """A constant ``c > 0`` with ``-x F''(x) / F'(x) >= c`` everywhere, if known."""
        return None

    def constant_G(self) -> float | None:
        """The value of G when it does not depend on y, else None."""
        return None

    def check_shape(self, n_samples: int = 201) -> None:
        """Spot-check ``F(1) = 0``, ``F' > 0`` and ``F'' < 0`` on ``[1e-3, 1e3]``."""
        f1 = float(self.F(np.array([1.0]))[0])
        if abs(f1) > 1e-12:
            raise ValueError(f"F(1) = {f1!r}, expected 0")
        xs = np.logspace(-3, 3, n_samples)
        d1 = self.dF(xs)
        d2 = self.d2F(xs)
        if not np.all(np.isfinite(d1)) or not np.all(np.isfinite(d2)):
            raise ValueError("F' or F'' is not finite on [1e-3, 1e3]")
        if np.any(d1 <= 0):
            raise ValueError(f"F' is not positive at x={xs[np.argmin(d1)]!r}")
        if np.any(d2 >= 0):
            raise ValueError(f"F'' is not negative at x={xs[np.argmax(d2)]!r}")


class WeightedUtility(BetweennessPreference):
    """``F(x) = x**(1 - rho + gamma) - x**gamma`` with ``-1 < gamma <= 0``, ``gamma <= rho < gamma + 1``."""

    family = "weighted"

    def __init__(self, rho: float, gamma: float):
        rho = float(rho)
        gamma = float(gamma)
        if not (-1.0 < gamma <= 0.0):
            raise ValueError(f"weighted utility requires -1 < gamma <= 0, got gamma={gamma!r}")
        if not (gamma <= rho < gamma + 1.0):
            raise ValueError(
                f"weighted utility requires gamma <= rho < gamma + 1, got rho={rho!r}, gamma={gamma!r}"
            )
        if rho - 2.0 * gamma <= 0.0:
            # rho = gamma = 0 gives F(x) = x - 1, which is not strictly concave
            raise ValueError("weighted utility with rho = gamma = 0 is linear (F'' = 0)")
        self.rho = rho
        self.gamma = gamma
        self.power = 1.0 - rho + gamma
        self.growth_exponent = max(self.power, -gamma, 1.0)

    def __repr__(self):
        return f"WeightedUtility(rho={self.rho!r}, gamma={self.gamma!r})"

    def F(self, x):
        x = np.asarray(x, dtype=float)
        return x**self.power - x**self.gamma

    def dF(self, x):
        x = np.asarray(x, dtype=float)
        p, g = self.power, self.gamma
        return p * x ** (p - 1.0) - g * x ** (g - 1.0)

    def d2F(self, x):
        x = np.asarray(x, dtype=float)
        p, g = self.power, self.gamma
        return p * (p - 1.0) * x ** (p - 2.0) - g * (g - 1.0) * x ** (g - 2.0)

    def rra_lower_bound(self):
        # relative risk aversion is a convex combination of 1 - p and 1 - gamma
        bounds = [1.0 - self.power]
        if self.gamma != 0.0:
            bounds.append(1.0 - self.gamma)
        c = min(bounds)
        return c if c > 0.0 else None

    def constant_G(self):
        return 1.0 / (self.rho - 2.0 * self.gamma)

    def closed_form_H(self, y):
        return np.exp(0.5 * (1.0 - self.rho + 2.0 * self.gamma) * np.asarray(y, dtype=float))


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finite probability measure over CRRA exponents, atoms given as ``(gamma, weight)``."""

    gammas: np.ndarray
    weights: np.ndarray

    def __init__(self, atoms: Sequence[tuple[float, float]]):
        atoms = list(atoms)
        if not atoms:
            raise ValueError("mixing measure needs at least one atom")
        g = np.array([float(a[0]) for a in atoms])
        w = np.array([float(a[1]) for a in atoms])
        if np.any(w <= 0):
            raise ValueError("atom weights must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"atom weights must sum to 1, got {w.sum()!r}")
        if np.any(np.diff(g) <= 0):
            raise ValueError("atom exponents must be strictly increasing")
        if np.any(g >= 1.0):
            raise ValueError("atom exponents must be < 1")
        object.__setattr__(self, "gammas", g)
        object.__setattr__(self, "weights", w)

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return list(zip(self.gammas.tolist(), self.weights.tolist()))


class MixedCRRA(BetweennessPreference):
    """Mixture of CRRA utilities ``F = sum_i w_i U_{gamma_i}`` over a discrete measure."""

    family = "mixed_crra"

    def __init__(self, measure: DiscreteMeasure | Sequence[tuple[float, float]]):
        if not isinstance(measure, DiscreteMeasure):
            measure = DiscreteMeasure(measure)
        self.measure = measure
        g = measure.gammas
        self._log = g == 0.0
        self._g_safe = np.where(self._log, 1.0, g)
        self.growth_exponent = max(1.0, float(np.max(np.abs(g))))

    def __repr__(self):
        return f"MixedCRRA({self.measure.atoms!r})"

    def F(self, x):
        x = np.asarray(x, dtype=float)
        xe = x[..., None]
        g = self.measure.gammas
        lx = np.log(xe)
        # expm1 keeps (x^g - 1) / g accurate for |g| near zero
        with np.errstate(over="ignore"):
            pw = np.where(self._log, lx, np.expm1(g * lx) / self._g_safe)
        return pw @ self.measure.weights

    def dF(self, x):
        x = np.asarray(x, dtype=float)
        return (x[..., None] ** (self.measure.gammas - 1.0)) @ self.measure.weights

    def d2F(self, x):
        x = np.asarray(x, dtype=float)
        g = self.measure.gammas
        return (x[..., None] ** (g - 2.0)) @ (self.measure.weights * (g - 1.0))

    def rra_lower_bound(self):
        return 1.0 - float(self.measure.gammas[-1])

    def constant_G(self):
        if len(self.measure.gammas) == 1:
            return 1.0 / (1.0 - float(self.measure.gammas[0]))
        return None

    def G_bounds(self) -> tuple[float, float]:
        g = self.measure.gammas
        return 1.0 / (1.0 - float(g[0])), 1.0 / (1.0 - float(g[-1]))


class CustomPreference(BetweennessPreference):
    """User-supplied generator.  ``growth_exponent`` bounds ``|F| + |F'| + |F''|`` by ``1 + x^k + x^-k``."""

    family = "custom"

    def __init__(
        self,
        F: Callable,
        dF: Callable,
        d2F: Callable,
        growth_exponent: float,
        rra_bound: float | None = None,
        name: str = "custom",
    ):
        if not growth_exponent > 0:
            raise ValueError("custom preference needs a positive polynomial-growth exponent")
        self._F, self._dF, self._d2F = F, dF, d2F
        self.growth_exponent = float(growth_exponent)
        self._rra = rra_bound
        self.family = name

    def F(self, x):
        return np.asarray(self._F(np.asarray(x, dtype=float)), dtype=float)

    def dF(self, x):
        return np.asarray(self._dF(np.asarray(x, dtype=float)), dtype=float)

    def d2F(self, x):
        return np.asarray(self._d2F(np.asarray(x, dtype=float)), dtype=float)

    def rra_lower_bound(self):
        return self._rra


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and probability weights for expectations over a standard normal."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def expect(self, values) -> float:
        return float(self.weights @ values)


def gauss_hermite(order: int = DEFAULT_QUAD_ORDER) -> QuadratureRule:
    """Gauss-Hermite rule rescaled to the N(0, 1) density."""
    if order < 2:
        raise ValueError("quadrature order must be >= 2")
    x, w = np.polynomial.hermite.hermgauss(order)
    nodes = np.sqrt(2.0) * x
    weights = w / w.sum()
    # hermgauss is symmetric up to rounding; enforce it exactly
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    return QuadratureRule(nodes=nodes, weights=weights, order=order)


_DEFAULT_QUAD: QuadratureRule | None = None


def default_quadrature() -> QuadratureRule:
    global _DEFAULT_QUAD
    if _DEFAULT_QUAD is None:
        _DEFAULT_QUAD = gauss_hermite(DEFAULT_QUAD_ORDER)
    return _DEFAULT_QUAD


def _checked(values, what: str, args: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    bad = ~np.isfinite(values)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise NumericalDomainError(
            f"{what} is not finite at quadrature node xi={nodes[k]!r} (argument {args[k]!r})"
        )
    return values


@dataclass(frozen=True)
class LognormalMoments:
    """Expectations over ``w = scale * exp(sqrt(var) * xi)``.

    ``EF = E[F(w)]``, ``E1 = E[F'(w) w]``, ``E2 = E[F''(w) w^2]``, ``E1xi = E[F'(w) w xi]``.
    """

    EF: float
    E1: float
    E2: float
    E1xi: float


def lognormal_moments(pref: BetweennessPreference, scale: float, var: float, quad: QuadratureRule) -> LognormalMoments:
    xi = quad.nodes
    w = scale * np.exp(np.sqrt(max(var, 0.0)) * xi)
    f = _checked(pref.F(w), "F", w, xi)
    d1 = _checked(pref.dF(w), "F'", w, xi) * w
    d2 = _checked(pref.d2F(w), "F''", w, xi) * w * w
    q = quad.weights
    return LognormalMoments(EF=float(q @ f), E1=float(q @ d1), E2=float(q @ d2), E1xi=float(q @ (d1 * xi)))


# ---------------------------------------------------------------------------
# H, G and the closed form for mixtures
# ---------------------------------------------------------------------------


def expected_F(pref: BetweennessPreference, y: float, z: float, quad: QuadratureRule | None = None) -> float:
    """Quadrature value of ``E[F(exp(sqrt(y) xi) / z)]``; strictly decreasing in ``z``."""
    if y < 0:
        raise ValueError(f"y must be >= 0, got {y!r}")
    if not z > 0:
        raise ValueError(f"z must be > 0, got {z!r}")
    quad = quad or default_quadrature()
    w = np.exp(np.sqrt(y) * quad.nodes) / z
    return quad.expect(_checked(pref.F(w), "F", w, quad.nodes))


def compute_H(pref: BetweennessPreference, y: float, quad: QuadratureRule | None = None,
              guess: float | None = None) -> float:
    """Solve ``E[F(exp(sqrt(y) xi) / H)] = 0`` for ``H > 0``.

    The root is bracketed in ``log z`` starting from ``[-6 sqrt(y), 6 sqrt(y)]``
    and widened by a factor of 2 in ``z`` per failure.  A ``guess`` (e.g. an
    interpolated value) is tried first with a narrow bracket around it.
    """
    if y < 0:
        raise ValueError(f"y must be >= 0, got {y!r}")
    if y == 0:
        return 1.0
    quad = quad or default_quadrature()
    s = np.sqrt(y)
    ew = np.exp(s * quad.nodes)

    def h(logz):
        w = ew * np.exp(-logz)
        return quad.expect(_checked(pref.F(w), "F", w, quad.nodes))

    lo, hi = -6.0 * s, 6.0 * s
    if guess is not None and guess > 0:
        g0 = float(np.log(guess))
        glo, ghi = g0 - 1e-6, g0 + 1e-6
        if h(glo) > 0 > h(ghi):
            lo, hi = glo, ghi
    h_lo, h_hi = h(lo), h(hi)
    n = 0
    while not (h_lo > 0 > h_hi):
        if n >= _MAX_DOUBLINGS:
            raise RootBracketError(
                f"could not bracket H({y!r}) after {_MAX_DOUBLINGS} doublings; "
                "F may violate monotonicity/concavity numerically"
            )
        if h_lo <= 0:
            lo -= np.log(2.0)
            h_lo = h(lo)
        if h_hi >= 0:
            hi += np.log(2.0)
            h_hi = h(hi)
        n += 1
    if h_lo == 0.0:
        return float(np.exp(lo))
    root = brentq(h, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    res = h(root)
    if abs(res) > H_RESIDUAL_TOL:
        raise InternalConsistencyError(f"H({y!r}) residual {res!r} exceeds {H_RESIDUAL_TOL}")
    return float(np.exp(root))


def compute_G(pref: BetweennessPreference, y: float, quad: QuadratureRule | None = None, H_y: float | None = None,
              guess: float | None = None) -> float:
    """Risk tolerance ``G(y) = -E[F'(w) w] / E[F''(w) w^2]`` with ``w = exp(sqrt(y) xi) / H(y)``."""
    quad = quad or default_quadrature()
    if H_y is None:
        H_y = compute_H(pref, y, quad, guess=guess)
    m = lognormal_moments(pref, 1.0 / H_y, y, quad)
    if abs(m.E2) < 1e-14:
        raise DegenerateCurvatureError(f"E[F''(w) w^2] = {m.E2!r} at y={y!r}")
    g = -m.E1 / m.E2
    if not g > 0:
        raise DegenerateCurvatureError(f"G({y!r}) = {g!r} is not positive")
    return g


def compute_G_mixed_closed(measure: DiscreteMeasure, y: float, H_y: float) -> float:
    """Closed-form G for a discrete CRRA mixture, as a ratio of finite sums over atoms."""
    g = measure.gammas
    # shift the exponents by their maximum; the ratio is unchanged
    expo = np.log(measure.weights) + (1.0 - g) * np.log(H_y) + 0.5 * g * g * y
    if not np.all(np.isfinite(expo)):
        raise NumericalDomainError(f"non-finite atom exponent at y={y!r}, H={H_y!r}")
    e = np.exp(expo - expo.max())
    return float(e.sum() / ((1.0 - g) * e).sum())


# ---------------------------------------------------------------------------
# tabulation
# ---------------------------------------------------------------------------


def simpson_refine(f: Callable[[np.ndarray], np.ndarray], a: float, b: float, n0: int = 2,
                   tol: float = 1e-9, max_halvings: int = 16) -> float:
    """Composite Simpson on ``[a, b]``, halving the spacing until successive values differ by < tol."""
    if b <= a:
        return 0.0
    n = max(2, n0 + (n0 % 2))
    prev = None
    for _ in range(max_halvings + 1):
        x = np.linspace(a, b, n + 1)
        v = f(x)
        s = (b - a) / (3.0 * n) * (v[0] + v[-1] + 4.0 * v[1:-1:2].sum() + 2.0 * v[2:-1:2].sum())
        if prev is not None and abs(s - prev) < tol:
            return float(s)
        prev = s
        n *= 2
    return float(prev)


@dataclass
class GTable:
    """H, G and the cumulative integral of ``1/G^2`` tabulated on ``[0, y_max]``.

    ``Phi_vals`` holds the cumulative integral of ``1/G`` (used for the drift of
    the unconstrained closed form).  Queries outside ``[0, y_max]`` raise
    :class:`ExtrapolationError`.
    """

    y_grid: np.ndarray
    H_vals: np.ndarray
    G_vals: np.ndarray
    Gcal_vals: np.ndarray
    Phi_vals: np.ndarray
    pref: BetweennessPreference
    quad: QuadratureRule
    _H: PchipInterpolator = field(init=False, repr=False)
    _G: PchipInterpolator = field(init=False, repr=False)
    _Gcal: CubicHermiteSpline = field(init=False, repr=False)
    _Phi: CubicHermiteSpline = field(init=False, repr=False)

    def __post_init__(self):
        y = self.y_grid
        self._H = PchipInterpolator(y, self.H_vals, extrapolate=False)
        self._G = PchipInterpolator(y, self.G_vals, extrapolate=False)
        self._Gcal = CubicHermiteSpline(y, self.Gcal_vals, 1.0 / self.G_vals**2, extrapolate=False)
        self._Phi = CubicHermiteSpline(y, self.Phi_vals, 1.0 / self.G_vals, extrapolate=False)

    @property
    def y_max(self) -> float:
        return float(self.y_grid[-1])

    def _check(self, y):
        arr = np.asarray(y, dtype=float)
        if np.any(arr < 0) or np.any(arr > self.y_max * (1 + 1e-14)) or np.any(np.isnan(arr)):
            bad = arr[(arr < 0) | (arr > self.y_max) | np.isnan(arr)]
            v = float(np.ravel(bad)[0]) if bad.size else float(np.ravel(arr)[0])
            raise ExtrapolationError(
                f"value {v!r} outside G-table range [0, {self.y_max!r}]; rebuild with larger y_max", value=v
            )
        return np.minimum(arr, self.y_max)

    def _eval(self, interp, y):
        if isinstance(y, float) and 0.0 <= y <= self.y_max:
            # scalar fast path: evaluate the piecewise cubic directly
            x = interp.x
            i = min(max(int(np.searchsorted(x, y, side="right")) - 1, 0), len(x) - 2)
            dx = y - x[i]
            c = interp.c[:, i]
            return float(((c[0] * dx + c[1]) * dx + c[2]) * dx + c[3])
        arr = self._check(y)
        out = interp(arr)
        return float(out) if np.ndim(out) == 0 else out

    def H(self, y):
        return self._eval(self._H, y)

    def G(self, y):
        return self._eval(self._G, y)

    def Gcal(self, y):
        return self._eval(self._Gcal, y)

    def Phi(self, y):
        return self._eval(self._Phi, y)

    def G_exact(self, y: float, guess: float | None = None) -> float:
        """G recomputed by quadrature (no interpolation); ``guess`` seeds the H root bracket."""
        self._check(y)
        return compute_G(self.pref, float(y), self.quad, guess=guess)

    def G_exact_many(self, ys) -> np.ndarray:
        """:meth:`G_exact` at many points at once.

        Newton steps on ``log H`` start from the interpolated H; any point that
        fails to converge falls back to the bracketed scalar solve.
        """
        ys = np.atleast_1d(self._check(ys)).astype(float)
        pref, xi, q = self.pref, self.quad.nodes, self.quad.weights
        s = np.sqrt(ys)[:, None] * xi[None, :]
        h = np.log(np.maximum(self._H(ys), 1e-300))

        def ev(fn, w):
            with np.errstate(all="ignore"):
                return np.asarray(fn(w.ravel()), dtype=float).reshape(w.shape)

        for _ in range(NEWTON_MAX_ITER):
            w = np.exp(s - h[:, None])
            phi = ev(pref.F, w) @ q
            e1 = (ev(pref.dF, w) * w) @ q
            # d/dh E[F(e^{s - h})] = -E[F'(w) w]
            step = np.where(e1 > 0, phi / e1, 0.0)
            h = h + step
            if np.all(np.abs(step) < 1e-15):
                break
        w = np.exp(s - h[:, None])
        res = ev(pref.F, w) @ q
        e1 = (ev(pref.dF, w) * w) @ q
        e2 = (ev(pref.d2F, w) * w * w) @ q
        with np.errstate(all="ignore"):
            g = -e1 / e2
        out = np.empty_like(ys)
        for k, y in enumerate(ys):
            ok = (np.isfinite(res[k]) and abs(res[k]) <= H_RESIDUAL_TOL and np.isfinite(g[k]) and g[k] > 0
                  and abs(e2[k]) >= 1e-14)
            out[k] = g[k] if ok else self.G_exact(float(y), guess=float(np.exp(h[k])) if np.isfinite(h[k]) else None)
        return out

    def Gcal_inv(self, v: float) -> float:
        """Inverse of the cumulative integral of ``1/G^2``."""
        top = float(self.Gcal_vals[-1])
        if v < 0 or v > top:
            raise ExtrapolationError(
                f"Gcal^-1({v!r}) outside table range [0, {top!r}]; rebuild with larger y_max", value=v
            )
        if v == 0:
            return 0.0
        k = int(np.searchsorted(self.Gcal_vals, v))
        k = min(max(k, 1), len(self.y_grid) - 1)
        a, b = self.y_grid[k - 1], self.y_grid[k]
        if v == self.Gcal_vals[k]:
            return float(b)
        return float(brentq(lambda s: float(self._Gcal(s)) - v, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps))


def build_G_table(pref: BetweennessPreference, y_max: float, n_nodes: int = 257,
                  quad: QuadratureRule | None = None, tol: float = 1e-9, max_halvings: int = 4) -> GTable:
    """Tabulate H and G on a uniform grid and accumulate their integrals by Simpson's rule."""
    if not y_max > 0:
        raise ValueError(f"y_max must be > 0, got {y_max!r}")
    if n_nodes < 16:
        raise ValueError(f"n_nodes must be >= 16, got {n_nodes!r}")
    quad = quad or default_quadrature()
    y = np.linspace(0.0, y_max, n_nodes)
    n_int = n_nodes - 1

    def evaluate(points):
        Hs = np.empty_like(points)
        Gs = np.empty_like(points)
        for i, p in enumerate(points):
            Hs[i] = compute_H(pref, float(p), quad)
            Gs[i] = compute_G(pref, float(p), quad, H_y=Hs[i])
        return Hs, Gs

    def cumulative(vals, m):
        # per-interval composite Simpson with m (even) sub-intervals
        h = (y_max / n_int) / m
        v = vals.reshape(-1)
        blocks = np.lib.stride_tricks.sliding_window_view(v, m + 1)[::m]
        coef = np.ones(m + 1)
        coef[1:-1:2] = 4.0
        coef[2:-1:2] = 2.0
        per = blocks @ coef * h / 3.0
        return np.concatenate([[0.0], np.cumsum(per)])

    m = 2
    fine = np.linspace(0.0, y_max, n_int * m + 1)
    H_fine, G_fine = evaluate(fine)
    Gcal = cumulative(1.0 / G_fine**2, m)
    for _ in range(max_halvings):
        m2 = 2 * m
        fine2 = np.linspace(0.0, y_max, n_int * m2 + 1)
        H2 = np.empty_like(fine2)
        G2 = np.empty_like(fine2)
        H2[::2], G2[::2] = H_fine, G_fine
        H2[1::2], G2[1::2] = evaluate(fine2[1::2])
        Gcal2 = cumulative(1.0 / G2**2, m2)
        done = abs(Gcal2[-1] - Gcal[-1]) < tol
        m, fine, H_fine, G_fine, Gcal = m2, fine2, H2, G2, Gcal2
        if done:
            break
    Phi = cumulative(1.0 / G_fine, m)
    H_vals = H_fine[::m].copy()
    G_vals = G_fine[::m].copy()
    if np.any(np.diff(Gcal) <= 0):
        raise InternalConsistencyError("cumulative integral of 1/G^2 is not strictly increasing")
    if np.any(H_vals <= 0) or np.any(G_vals <= 0):
        raise InternalConsistencyError("H and G must be positive on the table grid")
    c = pref.rra_lower_bound()
    if c is not None and np.any(G_vals > 1.0 / c + 1e-8):
        raise InternalConsistencyError(f"G exceeds the risk-aversion bound 1/c = {1.0 / c!r}")
    return GTable(y_grid=y, H_vals=H_vals, G_vals=G_vals, Gcal_vals=Gcal, Phi_vals=Phi, pref=pref, quad=quad)


def compute_Q(table: GTable, c2: float, c3: float, beta_norm2: float, x: float) -> float:
    """``int_0^x dy / (6 c3 G(y)^2 + 4 c2 |beta|^2)`` by refined composite Simpson."""
    if x > table.y_max:
        raise ExtrapolationError(f"Q({x!r}) beyond table range {table.y_max!r}", value=x)
    if x <= 0:
        return 0.0

    def integrand(y):
        den = 6.0 * c3 * table.G(y) ** 2 + 4.0 * c2 * beta_norm2
        with np.errstate(divide="ignore"):
            return 1.0 / den

    if 4.0 * c2 * beta_norm2 == 0.0 and c3 == 0.0:
        return float("inf")
    n0 = max(2, int(np.ceil(x / table.y_max * (len(table.y_grid) - 1))))
    return simpson_refine(integrand, 0.0, float(x), n0=n0)
