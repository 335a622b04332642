"""Independent brute-force oracles for the test suite.

``grid_image_projection`` minimises ``|sigma^T u - x|`` over a d = 2 set by
evaluating every point of a 1e-3 lattice on the set's boundary, plus the
unconstrained minimiser when it is feasible.  For a strictly convex objective
over a closed convex set the minimiser is either that free point or lies on the
boundary, so this covers the whole set without a 2-d lattice.
"""

import numpy as np

from beq.constraint import Ball, Box, FullSpace, Halfspace, Intersection, NonnegOrthant

H = 1e-3


def _segment(p, q, h=H):
    n = max(int(np.ceil(np.linalg.norm(q - p) / h)), 1)
    s = np.linspace(0.0, 1.0, n + 1)[:, None]
    return p + s * (q - p)


def _inside(cset, pts, tol=1e-12):
    if isinstance(cset, FullSpace):
        return np.ones(len(pts), bool)
    if isinstance(cset, NonnegOrthant):
        return np.all(pts >= -tol, axis=1)
    if isinstance(cset, Box):
        return np.all((pts >= cset.lo - tol) & (pts <= cset.hi + tol), axis=1)
    if isinstance(cset, Ball):
        return np.linalg.norm(pts - cset.center, axis=1) <= cset.radius + tol
    if isinstance(cset, Halfspace):
        return pts @ cset.normal <= cset.offset + tol
    if isinstance(cset, Intersection):
        return np.all([_inside(m, pts, tol) for m in cset.members], axis=0)
    raise TypeError(cset)


def _boundary(cset, L):
    if isinstance(cset, FullSpace):
        return np.zeros((0, 2))
    if isinstance(cset, NonnegOrthant):
        o = np.zeros(2)
        return np.vstack([_segment(o, np.array([L, 0.0])), _segment(o, np.array([0.0, L]))])
    if isinstance(cset, Box):
        (a, b), (c, d) = cset.lo, cset.hi
        corners = [np.array(v) for v in ((a, b), (c, b), (c, d), (a, d))]
        return np.vstack([_segment(corners[i], corners[(i + 1) % 4]) for i in range(4)])
    if isinstance(cset, Ball):
        n = int(np.ceil(2 * np.pi * cset.radius / H))
        th = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
        return cset.center + cset.radius * np.column_stack([np.cos(th), np.sin(th)])
    if isinstance(cset, Halfspace):
        nrm = cset.normal / np.linalg.norm(cset.normal)
        p0 = nrm * cset.offset / np.linalg.norm(cset.normal)
        tan = np.array([-nrm[1], nrm[0]])
        return _segment(p0 - L * tan, p0 + L * tan)
    if isinstance(cset, Intersection):
        pts = np.vstack([_boundary(m, L) for m in cset.members])
        return pts[_inside(cset, pts, 1e-9)]
    raise TypeError(cset)


def grid_image_projection(cset, sigma, x):
    """Brute-force ``argmin_{z in sigma^T U} |x - z|`` for d = 2."""
    sigma = np.asarray(sigma, float)
    x = np.asarray(x, float)
    st = sigma.T
    free = np.linalg.solve(st, x)
    if _inside(cset, free[None, :], 1e-12)[0]:
        return x.copy()
    # any minimiser is no farther from x than the image of a feasible point
    w = cset.witness()
    smin = float(np.linalg.svd(sigma, compute_uv=False)[-1])
    L = (np.linalg.norm(x) + np.linalg.norm(st @ w - x)) / smin + np.linalg.norm(w) + 1.0
    pts = _boundary(cset, L)
    img = pts @ sigma  # rows are sigma^T u
    k = int(np.argmin(np.sum((img - x) ** 2, axis=1)))
    return img[k]


def random_instance(family, rng):
    """A random d = 2 set of the given family (always nonempty)."""
    if family == "full":
        return FullSpace(2)
    if family == "nonneg":
        return NonnegOrthant(2)
    if family == "box":
        return Box(rng.uniform(-1.0, 0.0, 2), rng.uniform(0.2, 1.5, 2))
    if family == "ball":
        return Ball(rng.uniform(-0.5, 0.5, 2), rng.uniform(0.3, 1.5))
    if family == "halfspace":
        n = rng.standard_normal(2)
        return Halfspace(n / np.linalg.norm(n), rng.uniform(-0.5, 1.0))
    if family == "box_halfspace":
        box = Box([0.0, 0.0], [1.0, 1.0])
        n = rng.standard_normal(2)
        w = rng.uniform(0.0, 1.0, 2)
        hs = Halfspace(n, float(n @ w) + rng.uniform(0.0, 0.5))
        return Intersection([box, hs], w)
    raise ValueError(family)


FAMILIES = ("full", "nonneg", "box", "ball", "halfspace", "box_halfspace")
