"""Monte Carlo simulation of terminal wealth and perturbation tests.

Paths are generated in fixed blocks of ``BLOCK`` paths; block ``k`` draws from
``Philox(key=(seed, k))`` so the samples do not depend on how blocks are
distributed over worker threads.  Several strategies can be simulated jointly
on the same Brownian paths (common random numbers).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from ..constraint import ConvexSet, FullSpace, contains
from ..equilibrium import EquilibriumSolution, Problem, wealth_drift
from ..errors import ConfigError, RootBracketError
from ..market import MarketModel
from ..preference import BetweennessPreference, GTable
from .hjb import A_at, B_at, analytic_J, f_and_derivatives, hjb_residual

BLOCK = 1024
MIN_REPORT_PATHS = 1000
Z95 = 1.96
SCHEMES = ("exact", "euler")


@dataclass(frozen=True)
class SimConfig:
    n_paths: int = 100_000
    seed: int = 0
    scheme: str = "exact"
    n_time_steps: int = 256
    threads: int | None = None

    def __post_init__(self):
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise ConfigError(f"must be a positive integer, got {self.n_paths!r}", key="verify.n_paths")
        if not (0 <= int(self.seed) < 2**64):
            raise ConfigError(f"must be an unsigned 64-bit integer, got {self.seed!r}", key="verify.seed")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"must be one of {SCHEMES}, got {self.scheme!r}", key="verify.scheme")
        if self.n_time_steps < 1:
            raise ConfigError(f"must be >= 1, got {self.n_time_steps!r}", key="verify.n_time_steps")

    def workers(self) -> int:
        if self.threads is not None:
            return int(self.threads)
        env = os.environ.get("BEQ_THREADS", "0").strip() or "0"
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"must be a non-negative integer, got {env!r}", key="BEQ_THREADS") from None
        if n < 0:
            raise ConfigError(f"must be a non-negative integer, got {env!r}", key="BEQ_THREADS")
        return n


# ---------------------------------------------------------------------------
# strategies
# ---------------------------------------------------------------------------


class Piecewise:
    """A state-independent strategy built from pieces that switch at given times.

    ``segments`` is a list of ``(start_time, piece)``; each piece applies until the
    next start.  A piece is a constant weight vector, an
    :class:`EquilibriumSolution` (its node strategy, linear in time) or a
    callable ``t -> u``.
    """

    def __init__(self, segments: Sequence[tuple[float, object]]):
        segs = sorted(((float(s), _canon(p)) for s, p in segments), key=lambda q: q[0])
        self.starts = [s for s, _ in segs]
        self.pieces = [p for _, p in segs]

    def piece_at(self, t: float):
        k = int(np.searchsorted(self.starts, t, side="right")) - 1
        return self.pieces[max(k, 0)]

    def __call__(self, t: float) -> np.ndarray:
        return _piece_u(self.piece_at(t), t)


def _canon(p):
    if isinstance(p, (EquilibriumSolution, Piecewise)) or callable(p):
        return p
    return np.atleast_1d(np.asarray(p, dtype=float))


def as_strategy(s) -> Piecewise:
    if isinstance(s, Piecewise):
        return s
    return Piecewise([(-np.inf, s)])


def perturbed(sol: EquilibriumSolution, t: float, eps: float, a) -> Piecewise:
    """``a`` on ``[t, t + eps)``, the candidate afterwards."""
    return Piecewise([(-np.inf, sol), (t, a), (t + eps, sol)])


def _piece_u(p, t):
    if isinstance(p, np.ndarray):
        return p
    if isinstance(p, EquilibriumSolution):
        return p.u_at(t)
    return np.atleast_1d(np.asarray(p(t), dtype=float))


def _piece_key(p, s0, s1):
    """Identity of a piece on ``[s0, s1]``; a candidate that is constant there counts as that constant."""
    if isinstance(p, EquilibriumSolution):
        g = p.t_grid
        idx = (g > s0) & (g < s1)
        vals = np.vstack([p.u_at(s0)[None, :], p.u_vals[idx], p.u_at(s1)[None, :]])
        if np.all(vals == vals[0]):
            return ("const", vals[0].tobytes()), vals[0].copy()
        return ("sol", id(p)), p
    if isinstance(p, np.ndarray):
        return ("const", p.tobytes()), p
    return ("fn", id(p)), p


# ---------------------------------------------------------------------------
# segment moments
# ---------------------------------------------------------------------------


def _segment_nodes(model, pieces, s0, s1):
    pts = [s0, s1]
    pts.extend(model.breakpoints())
    for p in pieces:
        if isinstance(p, EquilibriumSolution):
            pts.extend(p.t_grid)
    pts = np.unique(np.asarray(pts, dtype=float))
    pts = pts[(pts >= s0) & (pts <= s1)]
    if len(pts) < 2:
        pts = np.array([s0, s1])
    # callables get a modest fixed resolution
    if any(not isinstance(p, (np.ndarray, EquilibriumSolution)) for p in pieces):
        pts = np.unique(np.concatenate([pts, np.linspace(s0, s1, 65)]))
    return pts


def _segment_moments(model, pieces, s0, s1, problem):
    """Covariance of the stochastic integrals and the drift integrals of each piece over ``[s0, s1]``."""
    k = len(pieces)
    nodes = _segment_nodes(model, pieces, s0, s1)
    order = 5 if problem == Problem.CONSTRAINED else 8

    def exposures(s):
        st = model.sigma(s).T
        return np.array([st @ _piece_u(p, s) for p in pieces])

    cov = np.zeros((k, k))
    drift = np.zeros(k)
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    for lo, hi in zip(nodes[:-1], nodes[1:]):
        h = hi - lo
        for xi, wi in zip(x, w):
            s = lo + xi * h
            b = exposures(s)
            cov += (wi * h) * (b @ b.T)
            drift += (wi * h) * np.array([wealth_drift(model, s, _piece_u(p, s), problem) for p in pieces])
    # candidate pieces use their own A and B so that J of the candidate is reproduced exactly
    for j, p in enumerate(pieces):
        if isinstance(p, EquilibriumSolution):
            a0, a1 = A_at(p, s0), A_at(p, s1)
            cov[j, j] = a0 - a1
            drift[j] = (B_at(p, s0) + 0.5 * a0) - (B_at(p, s1) + 0.5 * a1)
    return cov, drift


def _sqrt_psd(cov):
    ev, V = np.linalg.eigh(0.5 * (cov + cov.T))
    return V * np.sqrt(np.clip(ev, 0.0, None))


@dataclass
class _ExactPlan:
    n_strat: int
    segments: list  # (L, drift, var, index of each strategy into the piece list)


def _exact_plan(model, strategies, t, T, problem):
    cuts = {t, T}
    for s in strategies:
        cuts.update(v for v in s.starts if t < v < T)
    cuts = sorted(cuts)
    segs = []
    for s0, s1 in zip(cuts[:-1], cuts[1:]):
        keys, pieces, index = {}, [], []
        for s in strategies:
            key, p = _piece_key(s.piece_at(0.5 * (s0 + s1)), s0, s1)
            if key not in keys:
                keys[key] = len(pieces)
                pieces.append(p)
            index.append(keys[key])
        cov, drift = _segment_moments(model, pieces, s0, s1, problem)
        segs.append((_sqrt_psd(cov), drift, np.diag(cov).copy(), np.array(index)))
    return _ExactPlan(len(strategies), segs)


def _run_exact(plan: _ExactPlan, x, n, rng):
    logx = np.full((plan.n_strat, n), np.log(x))
    for L, drift, var, index in plan.segments:
        xi = rng.standard_normal((n, L.shape[1]))
        g = xi @ L.T  # (n, pieces)
        inc = (drift - 0.5 * var)[None, :] + g
        logx += inc[:, index].T
    return logx


@dataclass
class _EulerPlan:
    n_strat: int
    dt: np.ndarray
    exposures: np.ndarray  # (steps, strategies, d)
    drifts: np.ndarray  # (steps, strategies)


def _euler_plan(model, strategies, t, T, n_steps, problem):
    cuts = set(np.linspace(t, T, n_steps + 1).tolist())
    for s in strategies:
        cuts.update(v for v in s.starts if t < v < T)
    grid = np.array(sorted(cuts))
    dt = np.diff(grid)
    mids = 0.5 * (grid[:-1] + grid[1:])
    d = model.d
    ex = np.zeros((len(mids), len(strategies), d))
    dr = np.zeros((len(mids), len(strategies)))
    for i, s in enumerate(mids):
        st = model.sigma(s).T
        for j, strat in enumerate(strategies):
            u = strat(s)
            ex[i, j] = st @ u
            dr[i, j] = wealth_drift(model, s, u, problem)
    return _EulerPlan(len(strategies), dt, ex, dr)


def _run_euler(plan: _EulerPlan, x, n, rng):
    d = plan.exposures.shape[2]
    logx = np.full((plan.n_strat, n), np.log(x))
    for i, h in enumerate(plan.dt):
        dW = rng.standard_normal((n, d)) * np.sqrt(h)
        b = plan.exposures[i]
        logx += ((plan.drifts[i] - 0.5 * np.sum(b * b, axis=1)) * h)[:, None] + b @ dW.T
    return logx


def _rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([seed, block], dtype=np.uint64)))


def simulate_joint(model: MarketModel, strategies: Sequence, t: float, x: float, cfg: SimConfig,
                   problem: Problem | str) -> np.ndarray:
    """Terminal wealth of several strategies on common Brownian paths; shape ``(n_strategies, n_paths)``."""
    problem = Problem(problem)
    if not (0.0 <= t <= model.T):
        raise ConfigError(f"start time {t!r} outside [0, {model.T!r}]", key="verify.t")
    if not x > 0:
        raise ConfigError(f"initial wealth must be positive, got {x!r}", key="verify.x")
    strategies = [as_strategy(s) for s in strategies]
    if cfg.scheme == "exact":
        plan = _exact_plan(model, strategies, t, model.T, problem)
        run = _run_exact
    else:
        plan = _euler_plan(model, strategies, t, model.T, cfg.n_time_steps, problem)
        run = _run_euler
    n_blocks = -(-cfg.n_paths // BLOCK)
    sizes = [min(BLOCK, cfg.n_paths - b * BLOCK) for b in range(n_blocks)]

    def job(b):
        return run(plan, x, sizes[b], _rng(int(cfg.seed), b))

    workers = cfg.workers()
    if workers > 0 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, range(n_blocks)))
    else:
        parts = [job(b) for b in range(n_blocks)]
    return np.exp(np.concatenate(parts, axis=1))


def simulate_terminal_wealth(model: MarketModel, strategy, t: float, x: float, cfg: SimConfig,
                             problem: Problem | str) -> np.ndarray:
    """Samples of ``X(T)`` for one state-independent strategy started from ``(t, x)``."""
    return simulate_joint(model, [strategy], t, x, cfg, problem)[0]


# ---------------------------------------------------------------------------
# Monte Carlo certainty equivalent
# ---------------------------------------------------------------------------


def _influence(pref, samples, z):
    w = samples / z
    f = pref.F(w)
    slope = float(np.mean(pref.dF(w) * w)) / z  # -(d/dz) mean F(X/z)
    return f / slope


def implicit_J_mc(pref: BetweennessPreference, samples, bracket_hint: tuple[float, float] | None = None,
                  min_samples: int = MIN_REPORT_PATHS) -> tuple[float, float]:
    """Root of ``mean F(X_i / z) = 0`` and the 95% delta-method half-width."""
    X = np.asarray(samples, dtype=float)
    if X.size < min_samples:
        raise ConfigError(f"need at least {min_samples} samples, got {X.size}", key="verify.n_paths")
    if np.any(~(X > 0)):
        raise RootBracketError("terminal wealth samples must be positive")
    lo_x, hi_x = float(X.min()), float(X.max())
    if lo_x == hi_x:
        return lo_x, 0.0

    def g(logz):
        return float(np.mean(pref.F(X * np.exp(-logz))))

    lo, hi = np.log(lo_x), np.log(hi_x)
    if bracket_hint is not None:
        a, b = np.log(bracket_hint[0]), np.log(bracket_hint[1])
        if g(a) > 0 > g(b):
            lo, hi = a, b
    g_lo, g_hi = g(lo), g(hi)
    if g_lo == 0.0:
        return float(np.exp(lo)), 0.0
    if g_hi == 0.0:
        return float(np.exp(hi)), 0.0
    if not (g_lo > 0 > g_hi):
        raise RootBracketError(f"mean F(X/z) does not change sign on [{np.exp(lo)!r}, {np.exp(hi)!r}]")
    root = brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    z = float(np.exp(root))
    psi = _influence(pref, X, z)
    ci = Z95 * float(np.std(psi, ddof=1)) / float(np.sqrt(X.size))
    return z, ci


# ---------------------------------------------------------------------------
# perturbation test
# ---------------------------------------------------------------------------


@dataclass
class PerturbationReport:
    t: float
    x: float
    alternatives: list
    epsilons: list
    slopes: np.ndarray  # (n_alt, n_eps)
    cis: np.ndarray
    predicted: np.ndarray  # (n_alt,)
    verdicts: list  # per alternative, per epsilon
    trend_ok: list
    agrees: np.ndarray
    J_analytic: float
    J_mc: float
    J_mc_ci: float
    notes: list = field(default_factory=list)

    @property
    def verdict(self) -> str:
        flat = [v for row in self.verdicts for v in row]
        if "Fail" in flat or not all(self.trend_ok):
            return "Fail"
        if "Inconclusive" in flat:
            return "Inconclusive"
        return "Pass"


PREDICTION_ZERO = 1e-9


def _slope_verdict(slope, ci, predicted):
    if slope > 3.0 * ci:
        return "Fail"
    # a prediction within rounding of zero is not "negative"
    if abs(slope) <= ci and predicted < -PREDICTION_ZERO:
        return "Inconclusive"
    return "Pass"


def perturbation_test(pref: BetweennessPreference, table: GTable, sol: EquilibriumSolution, model: MarketModel,
                      cset: ConvexSet | None, t: float, x: float, alternatives, eps_ladder, cfg: SimConfig,
                      problem: Problem | str | None = None) -> PerturbationReport:
    """Estimate ``(J(u_{t,eps,a}) - J(u)) / eps`` for constant deviations ``a``.

    The candidate and all deviations are simulated on common paths and the
    candidate's own Monte Carlo certainty equivalent is subtracted, so that the
    shared sampling noise cancels.  Each slope is compared with the first-order
    prediction ``A^a f / (-f_z)``.
    """
    problem = Problem(problem) if problem is not None else sol.problem
    if cset is None:
        cset = FullSpace(model.d)
    if cfg.n_paths < MIN_REPORT_PATHS:
        raise ConfigError(f"reports need at least {MIN_REPORT_PATHS} paths", key="verify.n_paths")
    eps = [float(e) for e in eps_ladder]
    if not eps or any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps[:-1], eps[1:])):
        raise ConfigError("must be a strictly decreasing list of positive numbers", key="verify.eps_ladder")
    if t + eps[0] > model.T:
        raise ConfigError(f"largest epsilon {eps[0]!r} runs past the horizon from t={t!r}", key="verify.eps_ladder")
    alts = [np.atleast_1d(np.asarray(a, dtype=float)) for a in alternatives]
    for i, a in enumerate(alts):
        if a.shape != (model.d,):
            raise ConfigError(f"alternative {i} has shape {a.shape}, expected ({model.d},)", key="verify.alternatives")
        if problem == Problem.CONSTRAINED and not contains(cset, a, 1e-9):
            raise ConfigError(f"alternative {i} = {a.tolist()!r} is not in the constraint set",
                              key="verify.alternatives")

    strategies = [sol] + [perturbed(sol, t, e, a) for a in alts for e in eps]
    X = simulate_joint(model, strategies, t, x, cfg, problem)
    J_an = analytic_J(table, sol, t, x)
    z0, ci0 = implicit_J_mc(pref, X[0])
    psi0 = _influence(pref, X[0], z0)
    n = X.shape[1]

    d = f_and_derivatives(pref, table, sol, t, x, J_an)
    predicted = np.array([hjb_residual(pref, table, sol, model, t, x, a, problem) / (-d.f_z) for a in alts])

    slopes = np.zeros((len(alts), len(eps)))
    cis = np.zeros_like(slopes)
    verdicts = []
    for i in range(len(alts)):
        row = []
        for k, e in enumerate(eps):
            Xi = X[1 + i * len(eps) + k]
            if np.array_equal(Xi, X[0]):
                zi, psi = z0, psi0
            else:
                zi, _ = implicit_J_mc(pref, Xi)
                psi = _influence(pref, Xi, zi)
            slopes[i, k] = (zi - z0) / e
            cis[i, k] = Z95 * float(np.std(psi - psi0, ddof=1)) / (float(np.sqrt(n)) * e)
            row.append(_slope_verdict(slopes[i, k], cis[i, k], predicted[i]))
        verdicts.append(row)
    trend = []
    for i in range(len(alts)):
        ok = all(
            slopes[i, k + 1] <= slopes[i, k] + 3.0 * np.hypot(cis[i, k], cis[i, k + 1])
            for k in range(len(eps) - 1)
        )
        trend.append(bool(ok))
    agrees = np.abs(slopes - predicted[:, None]) <= 3.0 * cis + 1e-12
    notes = ["the test can refute the equilibrium property, not certify uniqueness"]
    return PerturbationReport(t, x, alts, eps, slopes, cis, predicted, verdicts, trend, agrees,
                              J_an, z0, ci0, notes)
