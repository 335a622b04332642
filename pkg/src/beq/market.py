"""Deterministic Black-Scholes market with optional borrowing rate.

Coefficients are either constants or piecewise-linear in time between
user-supplied nodes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateMarketError, SingularSigmaError

MIN_CERT_GRID = 512


class Coefficient:
    """A time-dependent array that is constant or piecewise linear between nodes."""

    def __init__(self, value=None, nodes: Sequence[tuple[float, object]] | None = None, shape=None):
        if (value is None) == (nodes is None):
            raise ValueError("give exactly one of value or nodes")
        if nodes is None:
            v = np.asarray(value, dtype=float)
            if shape is not None:
                v = v.reshape(shape)
            self.times = None
            self.values = v[None, ...]
            self.shape = v.shape
        else:
            nodes = sorted(nodes, key=lambda p: float(p[0]))
            times = np.array([float(p[0]) for p in nodes])
            vals = [np.asarray(p[1], dtype=float) for p in nodes]
            if shape is not None:
                vals = [v.reshape(shape) for v in vals]
            if np.any(np.diff(times) <= 0):
                raise ValueError("node times must be strictly increasing")
            self.times = times
            self.values = np.stack(vals)
            self.shape = self.values.shape[1:]

    @property
    def is_constant(self) -> bool:
        return self.times is None or bool(np.all(self.values == self.values[0]))

    def __call__(self, t: float) -> np.ndarray:
        if self.times is None:
            return self.values[0]
        t = float(t)
        memo = self.__dict__.setdefault("_memo", {})
        v = memo.get(t)
        if v is None:
            if len(memo) > 100_000:
                memo.clear()
            v = self._interp(t)
            v.flags.writeable = False
            memo[t] = v
        return v

    def _interp(self, t: float) -> np.ndarray:
        times = self.times
        k = int(np.searchsorted(times, t, side="right"))
        if k <= 0:
            return self.values[0]
        if k >= len(times):
            return self.values[-1]
        w = (t - times[k - 1]) / (times[k] - times[k - 1])
        return (1.0 - w) * self.values[k - 1] + w * self.values[k]

    def breakpoints(self) -> np.ndarray:
        return np.empty(0) if self.times is None else self.times


@dataclass(frozen=True)
class EllipticityCertificate:
    c1: float
    c2: float
    c3: float
    t_grid: np.ndarray

    @property
    def spacing(self) -> float:
        return float(np.max(np.diff(self.t_grid)))


class MarketModel:
    """``d`` risky assets with drift ``mu(t)``, volatility ``sigma(t)`` (d x d), saving rate ``r(t)``, borrowing rate ``R(t)``."""

    def __init__(self, T: float, mu: Coefficient, sigma: Coefficient,
                 r: Coefficient | None = None, R: Coefficient | None = None, check_grid: int = MIN_CERT_GRID):
        self.T = float(T)
        if not self.T > 0:
            raise ValueError(f"horizon T must be positive, got {T!r}")
        self.mu = mu
        self.sigma = sigma
        self.d = int(mu.shape[0]) if mu.shape else 1
        if mu.shape != (self.d,):
            raise ValueError(f"mu must have shape ({self.d},), got {mu.shape}")
        if sigma.shape != (self.d, self.d):
            raise ValueError(f"sigma must have shape ({self.d}, {self.d}), got {sigma.shape}")
        self.r = r if r is not None else Coefficient(0.0)
        self.R = R if R is not None else self.r
        for name, c in (("mu", mu), ("sigma", sigma), ("r", self.r), ("R", self.R)):
            if c.times is not None and (c.times[0] > 0.0 or c.times[-1] < self.T):
                raise ValueError(f"{name} nodes must cover [0, T]")
        self._cache: dict = {}
        grid = self.sample_grid(check_grid)
        gap = np.array([float(self.R(t)) - float(self.r(t)) for t in grid])
        if np.any(gap < 0):
            t_bad = grid[int(np.argmin(gap))]
            raise ValueError(f"borrowing rate R is below saving rate r at t={float(t_bad)!r}")

    @classmethod
    def constant(cls, T: float, mu, sigma, r: float = 0.0, R: float | None = None) -> "MarketModel":
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        d = mu.shape[0]
        sigma = np.asarray(sigma, dtype=float).reshape(d, d)
        return cls(T, Coefficient(mu), Coefficient(sigma), Coefficient(float(r)),
                   Coefficient(float(r if R is None else R)))

    def breakpoints(self) -> np.ndarray:
        pts = np.concatenate([c.breakpoints() for c in (self.mu, self.sigma, self.r, self.R)] + [[0.0, self.T]])
        pts = np.unique(pts)
        return pts[(pts >= 0) & (pts <= self.T)]

    def sample_grid(self, n: int) -> np.ndarray:
        return np.unique(np.concatenate([np.linspace(0.0, self.T, n + 1), self.breakpoints()]))

    @property
    def has_zero_rate(self) -> bool:
        return bool(np.all(self.r.values == 0.0))

    @property
    def is_constant(self) -> bool:
        if not hasattr(self, "_is_constant"):
            self._is_constant = all(c.is_constant for c in (self.mu, self.sigma, self.r, self.R))
        return self._is_constant

    def _cached(self, key, fn):
        # the model is immutable, so per-time results can be memoised
        try:
            return self._cache[key]
        except KeyError:
            if len(self._cache) > 100_000:
                self._cache.clear()
            v = fn()
            self._cache[key] = v
            return v

    def _solve(self, t: float, rhs: np.ndarray) -> np.ndarray:
        s = self.sigma(t)
        try:
            k = np.linalg.solve(s, rhs)
        except np.linalg.LinAlgError:
            raise SingularSigmaError(t) from None
        if not np.all(np.isfinite(k)) or np.linalg.cond(s) > 1e14:
            raise SingularSigmaError(t)
        return k


def kappa(model: MarketModel, t: float) -> np.ndarray:
    """Market price of risk ``sigma(t)^-1 mu(t)`` (LU solve with partial pivoting)."""
    t = float(t)
    key = ("k", 0.0 if model.is_constant else t)
    return model._cached(key, lambda: model._solve(t, model.mu(t)))


def kappa12(model: MarketModel, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Prices of risk in excess of the saving rate and of the borrowing rate."""
    t = float(t)

    def compute():
        mu = model.mu(t)
        one = np.ones(model.d)
        r = float(model.r(t))
        R = float(model.R(t))
        k1 = model._solve(t, mu - r * one)
        k2 = k1 if R == r else model._solve(t, mu - R * one)
        return k1, k2

    return model._cached(("k12", 0.0 if model.is_constant else t), compute)


def certify_ellipticity(model: MarketModel, grid_n: int = MIN_CERT_GRID) -> EllipticityCertificate:
    """Sample ``sigma sigma^T`` on a dense grid to bound its spectrum, plus ``max |kappa|^2``."""
    if grid_n < MIN_CERT_GRID:
        raise ValueError(f"grid_n must be >= {MIN_CERT_GRID}")
    grid = model.sample_grid(grid_n)
    lo, hi, c3 = np.inf, 0.0, 0.0
    for t in grid:
        s = model.sigma(t)
        ev = np.linalg.eigvalsh(s @ s.T)
        lo = min(lo, float(ev[0]))
        hi = max(hi, float(ev[-1]))
        if lo <= 1e-12:
            raise DegenerateMarketError(f"sigma sigma^T has eigenvalue {float(ev[0])!r} at t={float(t)!r}")
        k = kappa(model, t)
        c3 = max(c3, float(k @ k))
    return EllipticityCertificate(c1=lo, c2=hi, c3=c3, t_grid=grid)
