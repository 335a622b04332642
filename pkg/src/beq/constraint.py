"""Closed convex portfolio constraint sets and Euclidean projections.

``project_native`` projects onto the set ``U`` itself.  ``project_sigma_image``
projects onto the linear image ``sigma^T U``.  Exact finite algorithms are used
where available: closed forms (full space, half-space, diagonal sigma with a
box), least-distance programming through non-negative least squares for any
polyhedral set, and a one-dimensional secular equation for a ball.  Everything
else falls back to projected gradient descent in u-space, where membership is
easy to test.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import brentq, nnls

from .errors import ProjectionConvergenceError

DYKSTRA_TOL = 1e-10
DYKSTRA_MAX_SWEEPS = 10_000
PGD_TOL = 1e-10
PGD_MAX_ITER = 20_000


class ConvexSet:
    family = "abstract"
    d: int

    def distance(self, u: np.ndarray) -> float:
        raise NotImplementedError

    def project(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def witness(self) -> np.ndarray:
        """A point of the set; a stored ``_witness`` (user-supplied) takes precedence."""
        w = self.__dict__.get("_witness")
        return w.copy() if w is not None else self._default_witness()

    def _default_witness(self) -> np.ndarray:
        raise NotImplementedError

    def set_witness(self, w) -> None:
        w = np.atleast_1d(np.asarray(w, dtype=float))
        if w.shape != (self.d,) or self.distance(w) > 1e-9:
            raise ValueError("witness is not in the constraint set")
        self._witness = w

    def contains(self, u, tol: float = 0.0) -> bool:
        return contains(self, u, tol)


class FullSpace(ConvexSet):
    family = "full"

    def __init__(self, d: int):
        self.d = int(d)

    def distance(self, u):
        return 0.0

    def project(self, x):
        return np.array(x, dtype=float)

    def _default_witness(self):
        return np.zeros(self.d)


class NonnegOrthant(ConvexSet):
    """No short-selling: every weight non-negative."""

    family = "nonneg"

    def __init__(self, d: int):
        self.d = int(d)

    def distance(self, u):
        return float(np.linalg.norm(np.minimum(u, 0.0)))

    def project(self, x):
        return np.maximum(np.asarray(x, dtype=float), 0.0)

    def _default_witness(self):
        return np.zeros(self.d)


class Box(ConvexSet):
    family = "box"

    def __init__(self, lo, hi):
        self.lo = np.atleast_1d(np.asarray(lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if self.lo.shape != self.hi.shape:
            raise ValueError("box bounds must have equal shapes")
        if np.any(self.lo > self.hi):
            raise ValueError("box requires lo <= hi componentwise")
        self.d = self.lo.shape[0]

    def distance(self, u):
        u = np.asarray(u, dtype=float)
        return float(np.linalg.norm(u - np.clip(u, self.lo, self.hi)))

    def project(self, x):
        return np.clip(np.asarray(x, dtype=float), self.lo, self.hi)

    def _default_witness(self):
        return 0.5 * (self.lo + self.hi)


class Ball(ConvexSet):
    family = "ball"

    def __init__(self, center, radius: float):
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.radius = float(radius)
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")
        self.d = self.center.shape[0]

    def distance(self, u):
        return max(float(np.linalg.norm(np.asarray(u, dtype=float) - self.center)) - self.radius, 0.0)

    def project(self, x):
        x = np.asarray(x, dtype=float)
        v = x - self.center
        n = float(np.linalg.norm(v))
        if n <= self.radius:
            return x.copy()
        return self.center + v * (self.radius / n)

    def _default_witness(self):
        return self.center.copy()


class Halfspace(ConvexSet):
    """``{u : normal . u <= offset}``; ``normal = 1, offset = 1`` forbids borrowing."""

    family = "halfspace"

    def __init__(self, normal, offset: float):
        self.normal = np.atleast_1d(np.asarray(normal, dtype=float))
        self.offset = float(offset)
        nn = float(self.normal @ self.normal)
        if nn == 0:
            raise ValueError("halfspace normal must be nonzero")
        self._nn = nn
        self.d = self.normal.shape[0]

    def distance(self, u):
        excess = float(self.normal @ np.asarray(u, dtype=float)) - self.offset
        return max(excess, 0.0) / np.sqrt(self._nn)

    def project(self, x):
        x = np.asarray(x, dtype=float)
        excess = float(self.normal @ x) - self.offset
        if excess <= 0:
            return x.copy()
        return x - (excess / self._nn) * self.normal

    def _default_witness(self):
        return (min(self.offset, 0.0) / self._nn) * self.normal


def inequalities(cset: ConvexSet):
    """``(C, b)`` with ``U = {u : C u <= b}`` for polyhedral sets, else None."""
    if isinstance(cset, FullSpace):
        return np.zeros((0, cset.d)), np.zeros(0)
    if isinstance(cset, NonnegOrthant):
        return -np.eye(cset.d), np.zeros(cset.d)
    if isinstance(cset, Box):
        eye = np.eye(cset.d)
        up = np.isfinite(cset.hi)
        dn = np.isfinite(cset.lo)
        return np.vstack([eye[up], -eye[dn]]), np.concatenate([cset.hi[up], -cset.lo[dn]])
    if isinstance(cset, Halfspace):
        return cset.normal[None, :].copy(), np.array([cset.offset])
    if isinstance(cset, Intersection):
        parts = [inequalities(m) for m in cset.members]
        if any(p is None for p in parts):
            return None
        return np.vstack([p[0] for p in parts]), np.concatenate([p[1] for p in parts])
    return None


class Intersection(ConvexSet):
    """Intersection of primitive sets, projected by Dykstra's alternating projections.

    A feasible witness is mandatory; it is checked against every member.
    """

    family = "intersection"

    def __init__(self, members: list[ConvexSet], witness, tol: float = 1e-9):
        if not members:
            raise ValueError("intersection needs at least one member")
        self.members = list(members)
        self.d = self.members[0].d
        if any(m.d != self.d for m in self.members):
            raise ValueError("intersection members have different dimensions")
        self._witness = np.atleast_1d(np.asarray(witness, dtype=float))
        if self._witness.shape != (self.d,):
            raise ValueError("witness has the wrong dimension")
        if not all(m.distance(self._witness) <= tol for m in self.members):
            raise ValueError("witness is not in every member of the intersection")

    def distance(self, u):
        # exact distance needs a projection; the max member distance is a lower bound
        p = self.project(u)
        return float(np.linalg.norm(np.asarray(u, dtype=float) - p))

    def project(self, x):
        return dykstra(self.members, x)


def dykstra(members: list[ConvexSet], x, tol: float = DYKSTRA_TOL, max_sweeps: int = DYKSTRA_MAX_SWEEPS) -> np.ndarray:
    x0 = np.asarray(x, dtype=float)
    y = x0.copy()
    incr = [np.zeros_like(x0) for _ in members]
    for _ in range(max_sweeps):
        prev = y.copy()
        moved = 0.0
        for i, m in enumerate(members):
            z = y + incr[i]
            y = m.project(z)
            new = z - y
            # the iterate can stall for a sweep while the corrections still move
            moved = max(moved, float(np.linalg.norm(new - incr[i])))
            incr[i] = new
        gap = max(m.distance(y) for m in members)
        if float(np.linalg.norm(y - prev)) < tol and moved < tol and gap < tol:
            return y
    raise ProjectionConvergenceError(
        f"Dykstra did not converge in {max_sweeps} sweeps (feasibility gap {gap!r})", best=y, gap=gap
    )


def contains(cset: ConvexSet, u, tol: float = 0.0) -> bool:
    """True iff ``u`` lies within Euclidean distance ``tol`` of the set."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if isinstance(cset, Intersection):
        return all(contains(m, u, tol) for m in cset.members)
    return cset.distance(u) <= tol


def project_native(cset: ConvexSet, x) -> np.ndarray:
    """Euclidean projection onto the set itself."""
    return cset.project(np.atleast_1d(np.asarray(x, dtype=float)))


def _is_diagonal(m: np.ndarray) -> bool:
    return bool(np.all(m == np.diag(np.diag(m))))


def project_sigma_image(cset: ConvexSet, sigma_t, x, u0=None, method: str = "auto") -> np.ndarray:
    """Projection of ``x`` onto ``{sigma_t^T u : u in U}``.

    ``method="pgd"`` forces projected gradient descent (warm-started at ``u0``).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    sigma_t = np.atleast_2d(np.asarray(sigma_t, dtype=float))
    z, _ = _project_image(cset, sigma_t, x, u0, want_u=False, method=method)
    return z


def project_sigma_image_u(cset: ConvexSet, sigma_t, x, u0=None, method: str = "auto") -> tuple[np.ndarray, np.ndarray]:
    """Like :func:`project_sigma_image` but also returns the preimage ``u`` in U."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    sigma_t = np.atleast_2d(np.asarray(sigma_t, dtype=float))
    return _project_image(cset, sigma_t, x, u0, method=method)


def _project_image(cset, sigma, x, u0, want_u=True, method="auto"):
    st = sigma.T
    if method == "pgd":
        return _pgd(cset, sigma, x, u0)
    if isinstance(cset, FullSpace):
        return x.copy(), (np.linalg.solve(st, x) if want_u else None)
    if isinstance(cset, Halfspace):
        # n.u <= b  <=>  (sigma^-1 n).z <= b  for z = sigma^T u
        img = Halfspace(np.linalg.solve(sigma, cset.normal), cset.offset)
        z = img.project(x)
        return z, (np.linalg.solve(st, z) if want_u else None)
    if isinstance(cset, (Box, NonnegOrthant)) and _is_diagonal(sigma):
        s = np.diag(sigma)
        if isinstance(cset, NonnegOrthant):
            lo, hi = np.zeros(cset.d), np.full(cset.d, np.inf)
        else:
            lo, hi = cset.lo, cset.hi
        with np.errstate(invalid="ignore"):
            a, b = s * lo, s * hi
        zlo = np.where(s > 0, a, b)
        zhi = np.where(s > 0, b, a)
        z = np.clip(x, np.nan_to_num(zlo, nan=-np.inf), np.nan_to_num(zhi, nan=np.inf))
        return z, z / s
    if isinstance(cset, Ball):
        return _project_ellipsoid(cset, sigma, x)
    ineq = _cached_inequalities(cset)
    if ineq is not None:
        return _project_polyhedron(cset, ineq[0], ineq[1], sigma, x, want_u)
    return _pgd(cset, sigma, x, u0)


_NOT_POLY = object()


def _cached_inequalities(cset):
    c = cset.__dict__.get("_ineq")
    if c is None:
        c = inequalities(cset)
        cset.__dict__["_ineq"] = _NOT_POLY if c is None else c
        return c
    return None if c is _NOT_POLY else c


def _image_rows(cset, C, sigma):
    cache = cset.__dict__.setdefault("_img", {})
    key = sigma.tobytes()
    v = cache.get(key)
    if v is None:
        if len(cache) > 50_000:
            cache.clear()
        D = np.linalg.solve(sigma, C.T).T
        nrm = np.linalg.norm(D, axis=1)
        v = {"D": D, "nrm": nrm}
        cache[key] = v
    return v


def _try_active_set(img, b, x, active):
    """Equality-constrained projection on ``active`` rows, accepted only if it satisfies KKT."""
    D = img["D"]
    key = active.tobytes()
    fac = img.get(key)
    if fac is None:
        Da = D[active]
        try:
            M = np.linalg.inv(Da @ Da.T)
        except np.linalg.LinAlgError:
            return None
        fac = (Da, M, Da.T @ M)
        img[key] = fac
    Da, M, P = fac
    resid = Da @ x - b[active]
    lam = M @ resid
    z = x - P @ resid
    tol = 1e-12 * (1.0 + float(np.max(np.abs(b))))
    if lam.min() >= -1e-14 and (D @ z - b).max() <= tol:
        return z
    return None


def _project_polyhedron(cset, C, b, sigma, x, want_u=True):
    """Projection onto ``{sigma^T u : C u <= b}`` as a least-distance program.

    With ``z = sigma^T u`` the set is ``{z : D z <= b}``, ``D = C sigma^-T``.
    Writing ``z = x + w`` gives ``min |w|`` s.t. ``-D w >= D x - b``, which is
    solved exactly by one non-negative least-squares problem.  The active set
    of the previous call is tried first (checked against the KKT conditions),
    which makes sequences of nearby projections cheap.
    """
    st = sigma.T
    img = _image_rows(cset, C, sigma)
    D, nrm = img["D"], img["nrm"]
    h = D @ x - b
    if h.max() <= 0:
        return x.copy(), (np.linalg.solve(st, x) if want_u else None)
    hint = cset.__dict__.get("_active")
    z = _try_active_set(img, b, x, hint) if hint is not None else None
    if z is None:
        # rows are normalised so that the NNLS tolerances are relative
        G = -D / nrm[:, None]
        hn = h / nrm
        E = np.vstack([G.T, hn[None, :]])
        f = np.zeros(E.shape[0])
        f[-1] = 1.0
        lam, _ = nnls(E, f, maxiter=50 * E.shape[1])
        r = E @ lam - f
        if abs(r[-1]) < 1e-14:
            raise ProjectionConvergenceError("polyhedral constraint set appears to be empty", best=None,
                                             gap=float("inf"))
        z = x - r[:-1] / r[-1]
        active = np.flatnonzero(lam > 0)
        # polish on the identified active set (same point, tighter feasibility)
        polished = _try_active_set(img, b, x, active) if len(active) <= D.shape[1] else None
        if polished is not None:
            z = polished
            cset.__dict__["_active"] = active
    return z, (np.linalg.solve(st, z) if want_u else None)


def _project_ellipsoid(ball: Ball, sigma, x):
    """Projection onto ``sigma^T (c + r B)``: find ``lam >= 0`` with ``|u(lam) - c| = r``.

    ``u(lam)`` solves ``(sigma sigma^T + lam I) u = sigma x + lam c``; its distance
    to the centre is strictly decreasing in ``lam``.
    """
    st = sigma.T
    c, rad = ball.center, ball.radius
    u_free = np.linalg.solve(st, x)
    if float(np.linalg.norm(u_free - c)) <= rad:
        return x.copy(), u_free
    ev, V = np.linalg.eigh(sigma @ st)
    # shift to the centre: minimise |sigma^T v - y|^2 over |v| <= r with y = x - sigma^T c
    y = x - st @ c
    q = V.T @ (sigma @ y)

    def excess(lam):
        return float(np.sqrt(np.sum((q / (ev + lam)) ** 2))) - rad

    hi = 1.0
    while excess(hi) > 0:
        hi *= 2.0
    lam = brentq(excess, 0.0, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=500)
    v = V @ (q / (ev + lam))
    v *= rad / float(np.linalg.norm(v))
    u = c + v
    return st @ u, u


def _pgd(cset, sigma, x, u0):
    st = sigma.T
    L = float(np.linalg.eigvalsh(sigma @ st)[-1])
    step = 1.0 / L
    if u0 is None:
        u = cset.project(np.linalg.solve(st, x))
    else:
        u = cset.project(np.asarray(u0, dtype=float))
    for _ in range(PGD_MAX_ITER):
        grad = sigma @ (st @ u - x)
        u_new = cset.project(u - step * grad)
        if float(np.linalg.norm(u_new - u)) < PGD_TOL:
            return st @ u_new, u_new
        u = u_new
    gap = float(np.linalg.norm(u - cset.project(u - step * sigma @ (st @ u - x)))) * L
    raise ProjectionConvergenceError(
        f"projected gradient did not converge in {PGD_MAX_ITER} iterations (optimality gap {gap!r})",
        best=st @ u, gap=gap,
    )
