"""Quadrature: simplex rules and singular triangle-pair rules.

Triangle/tet rules are collapsed (Duffy) tensor Gauss products: positive
weights, exact to any requested degree. Pair rules for the Galerkin double
integrals handle the four adjacency cases (coincident / shared edge / shared
vertex / separated) by decomposing the 4D parameter domain into subregions in
which a radial Duffy transform removes the distance singularity. All rules are
returned in barycentric coordinates with weights normalized so that the
physical integral is  sum_q w_q k(x_q, y_q) * (2 area_x) * (2 area_y).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

COINCIDENT = 3  # shared vertices
EDGE = 2
VERTEX = 1
SEPARATED = 0


@lru_cache(maxsize=None)
def gauss01(n):
    """n-point Gauss-Legendre on [0,1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def tri_rule(degree):
    """Barycentric points/weights exact for polynomials up to `degree` on a
    triangle; weights sum to 1 (multiply by the physical area)."""
    if not 1 <= degree <= 30:
        raise ValueError("degree out of supported range")
    nu = -(-(degree + 2) // 2)
    nv = -(-(degree + 1) // 2)
    xu, wu = gauss01(nu)
    xv, wv = gauss01(nv)
    U, V = np.meshgrid(xu, xv, indexing="ij")
    WU, WV = np.meshgrid(wu, wv, indexing="ij")
    x = U.ravel()
    y = (V * (1.0 - U)).ravel()
    w = (WU * WV * (1.0 - U)).ravel()
    lam = np.stack([1.0 - x - y, x, y], axis=1)
    return lam, 2.0 * w      # ref area 1/2 -> weights sum to 1


@lru_cache(maxsize=None)
def tet_rule(degree):
    """Barycentric points/weights exact to `degree` on a tet; weights sum to 1."""
    if not 1 <= degree <= 30:
        raise ValueError("degree out of supported range")
    nu = -(-(degree + 3) // 2)
    nv = -(-(degree + 2) // 2)
    nw = -(-(degree + 1) // 2)
    xu, wu = gauss01(nu)
    xv, wv = gauss01(nv)
    xw, ww = gauss01(nw)
    U, V, W = np.meshgrid(xu, xv, xw, indexing="ij")
    WU, WV, WW = np.meshgrid(wu, wv, ww, indexing="ij")
    x = U
    y = V * (1.0 - U)
    z = W * (1.0 - U) * (1.0 - V)
    w = WU * WV * WW * (1.0 - U) ** 2 * (1.0 - V)
    lam = np.stack([(1.0 - x - y - z).ravel(), x.ravel(), y.ravel(), z.ravel()], axis=1)
    return lam, 6.0 * w.ravel()   # ref volume 1/6 -> weights sum to 1


def _bary(u1, u2):
    # path coordinates (u1,u2), 0<=u2<=u1<=1 -> barycentric of (A,B,C)
    return np.stack([1.0 - u1, u1 - u2, u2], axis=-1)


def _tensor(ns):
    xs, ws = zip(*(gauss01(n) for n in ns))
    G = np.stack(np.meshgrid(*xs, indexing="ij"), axis=-1).reshape(-1, len(ns))
    W = np.stack(np.meshgrid(*ws, indexing="ij"), axis=-1).reshape(-1, len(ns)).prod(axis=1)
    return G, W


@lru_cache(maxsize=None)
def coincident_rule(n):
    """Rule for the double integral over T x T (same triangle).

    The product simplex splits into the 6 interleavings of the path coordinates
    (3 assignments x argument swap); in each, the difference variables are
    pulled radial so the O(1/r) singularity on the diagonal is cancelled. The
    axes the kernel direction depends on get extra points (the direction factor
    has complex zeros near the interval, so those axes converge slower than the
    radial/translation axes, which see only polynomials).
    """
    na = 2 * n + 4
    bx, by, wt = [], [], []

    # region 1: ordering u1>=u2>=u1'>=u2'; differences all radial (corner type)
    G, W = _tensor((n, na, na, n))
    s, p, q, t = G[:, 0], G[:, 1], G[:, 2], G[:, 3]
    d1 = s * p
    d2 = s * (1.0 - p) * q
    d3 = s * (1.0 - p) * (1.0 - q)
    w4 = (1.0 - s) * t
    w1, w2, w3 = d1 + d2 + d3 + w4, d2 + d3 + w4, d3 + w4
    u = np.stack([w1, w2], axis=1)
    v = np.stack([w3, w4], axis=1)
    wgt = W * s ** 2 * (1.0 - p) * (1.0 - s)
    for a, b in ((u, v), (v, u)):
        bx.append(_bary(a[:, 0], a[:, 1]))
        by.append(_bary(b[:, 0], b[:, 1]))
        wt.append(wgt)

    # regions 2, 3: only two difference variables are singular (edge type);
    # the direction depends on p alone
    G, W = _tensor((n, na, n, n))
    s, p, q, t = G[:, 0], G[:, 1], G[:, 2], G[:, 3]
    da = s * p
    db = s * (1.0 - p)
    dmid = (1.0 - s) * q
    w4 = (1.0 - s) * (1.0 - q) * t
    wgt = W * s * (1.0 - s) ** 2 * (1.0 - q)
    w3v = db + w4
    w2v = dmid + w3v
    w1v = da + w2v
    for u, v in (
        # u=(w1,w3), u'=(w2,w4): singular differences d1 = w1-w2, d3 = w3-w4
        (np.stack([w1v, w3v], axis=1), np.stack([w2v, w4], axis=1)),
        (np.stack([w2v, w4], axis=1), np.stack([w1v, w3v], axis=1)),
        # u=(w1,w4), u'=(w2,w3): same difference variables
        (np.stack([w1v, w4], axis=1), np.stack([w2v, w3v], axis=1)),
        (np.stack([w2v, w3v], axis=1), np.stack([w1v, w4], axis=1)),
    ):
        bx.append(_bary(u[:, 0], u[:, 1]))
        by.append(_bary(v[:, 0], v[:, 1]))
        wt.append(wgt)

    return np.concatenate(bx), np.concatenate(by), np.concatenate(wt)


@lru_cache(maxsize=None)
def edge_rule(n):
    """Rule for triangles sharing an edge; both reordered to (A, B, C) and
    (A, B, C') with the shared edge A-B. Returns barycentric coordinates in
    that ordering."""
    G, W = _tensor((n, n + 4, n + 4, n))
    s, q2, q3, t = G[:, 0], G[:, 1], G[:, 2], G[:, 3]
    bx, by, wt = [], [], []
    # with a = u2, b = u2', c = u1 - u1' (branch c >= 0; the c <= 0 branch is
    # the argument swap), x - y = c (B-A) + a (C-B) - b (C'-B)
    for sub in ("a_max", "bc_max"):
        if sub == "a_max":
            a = s
            b = s * q2 * q3
            c = s * q2 * (1.0 - q3)
            jac = s ** 2 * q2
        else:
            b = s * q3
            c = s * (1.0 - q3)
            a = s * q2
            jac = s ** 2
        lower = np.maximum(a, b + c)
        u1 = lower + t * (1.0 - lower)
        jac = jac * (1.0 - lower)
        u = np.stack([u1, a], axis=1)
        v = np.stack([u1 - c, b], axis=1)
        wgt = W * jac
        for xx, yy in ((u, v), (v, u)):
            bx.append(_bary(xx[:, 0], xx[:, 1]))
            by.append(_bary(yy[:, 0], yy[:, 1]))
            wt.append(wgt)
    return np.concatenate(bx), np.concatenate(by), np.concatenate(wt)


@lru_cache(maxsize=None)
def vertex_rule(n):
    """Rule for triangles sharing exactly one vertex; both reordered so the
    shared vertex comes first."""
    G, W = _tensor((n, n, n, n))
    xi, e1, e2, e3 = G[:, 0], G[:, 1], G[:, 2], G[:, 3]
    u = np.stack([xi, xi * e1], axis=1)
    v = np.stack([xi * e2, xi * e2 * e3], axis=1)
    wgt = W * xi ** 3 * e2
    bx = np.concatenate([_bary(u[:, 0], u[:, 1]), _bary(v[:, 0], v[:, 1])])
    by = np.concatenate([_bary(v[:, 0], v[:, 1]), _bary(u[:, 0], u[:, 1])])
    return bx, by, np.concatenate([wgt, wgt])


@lru_cache(maxsize=None)
def separated_rule(n_side):
    """Tensor rule for non-touching pairs: n_side^2 points per triangle via the
    collapsed square-to-triangle map."""
    x, w = gauss01(n_side)
    U, V = np.meshgrid(x, x, indexing="ij")
    WU, WV = np.meshgrid(w, w, indexing="ij")
    u1 = U.ravel()
    u2 = (V * U).ravel()
    wq = (WU * WV * U).ravel()      # Duffy jacobian u1; ref measure 1/2 each
    lam = _bary(u1, u2)
    k = len(wq)
    bx = np.repeat(lam, k, axis=0)
    by = np.tile(lam, (k, 1))
    wt = np.repeat(wq, k) * np.tile(wq, k)
    return bx, by, wt


def pair_rule(case, order):
    if case == COINCIDENT:
        return coincident_rule(order)
    if case == EDGE:
        return edge_rule(order)
    if case == VERTEX:
        return vertex_rule(order)
    return separated_rule(order)


def classify_pair(tri_x, tri_y):
    """Adjacency case plus vertex permutations bringing each triangle into the
    canonical order the singular rules expect. Returns (case, perm_x, perm_y)."""
    shared = [v for v in tri_x if v in set(tri_y)]
    k = len(shared)
    if k == 0:
        return SEPARATED, (0, 1, 2), (0, 1, 2)
    if k == 3:
        # coincident: rules use identical path coordinates on both copies
        return COINCIDENT, (0, 1, 2), (0, 1, 2)
    if k == 1:
        a = shared[0]
        ix = tri_x.index(a) if isinstance(tri_x, (list, tuple)) else int(np.where(tri_x == a)[0][0])
        iy = int(np.where(np.asarray(tri_y) == a)[0][0])
        px = (ix, (ix + 1) % 3, (ix + 2) % 3)
        py = (iy, (iy + 1) % 3, (iy + 2) % 3)
        return VERTEX, px, py
    # shared edge: order both as (A, B, free)
    a, b = shared
    tx = list(tri_x)
    ty = list(tri_y)
    px = (tx.index(a), tx.index(b), 3 - tx.index(a) - tx.index(b))
    py = (ty.index(a), ty.index(b), 3 - ty.index(a) - ty.index(b))
    return EDGE, px, py
