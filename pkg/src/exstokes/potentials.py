"""Hydrodynamic layer potentials and boundary operators on a closed surface.

Kernels (viscosity mu = 1/2 throughout):
  E(r)   = (1/4pi) (I/rho + r r^T/rho^3)            single-layer velocity
  Q(r)   = (1/4pi) r/rho^3                          single-layer pressure
  K(r,n) = (3/4pi) (r.n) r r^T / rho^5              double-layer velocity
  P(r,n) = (1/4pi) (-n/rho^3 + 3 (r.n) r/rho^5)     double-layer pressure
with r = x - y and n the normal at the integration point y.

Galerkin matrices are assembled over all triangle pairs with the singular
pair rules from the quadrature module. The hypersingular operator W (negative
traction of the double layer) is never integrated directly: with the
tangential Guenter derivative M_ab = n_a d_b - n_b d_a, its kernel N satisfies
the exact identity

  N_jl = (1/8pi) sum_a  Mx_ja My_la [1/rho]
       - (1/4pi) sum_ab Mx_ja My_lb [r_a r_b/rho^3]
       + (1/16pi) d_jl sum_ab Mx_ab My_ab [1/rho]
       - (1/8pi) My_lj [(r.nx)/rho^3]
       + (1/8pi) Mx_jl [(r.ny)/rho^3],

and M integrates by parts without boundary terms on a closed surface, so both
M's move onto the P1 densities. For P1 densities on flat facets the moved
densities are constants per facet and only weakly singular kernels remain.
"""

from __future__ import annotations

import numpy as np
from numba import njit
from scipy import sparse

from . import quadrature as qd

MU = 0.5
_C4 = 1.0 / (4.0 * np.pi)
_C8 = 1.0 / (8.0 * np.pi)
_C16 = 1.0 / (16.0 * np.pi)


# ------------------------------------------------------------------ kernels
# plain numpy reference implementations (also used for potential evaluation)

def stokeslet(r):
    """E(r): (..., 3, 3)."""
    r = np.asarray(r, dtype=float)
    rho = np.linalg.norm(r, axis=-1)
    eye = np.eye(3)
    return _C4 * (eye / rho[..., None, None]
                  + r[..., :, None] * r[..., None, :] / rho[..., None, None] ** 3)


def stokeslet_pressure(r):
    """Q(r): (..., 3)."""
    r = np.asarray(r, dtype=float)
    rho = np.linalg.norm(r, axis=-1)
    return _C4 * r / rho[..., None] ** 3


def stresslet(r, n):
    """K(r, n): (..., 3, 3); r = x - y, n = normal at y."""
    r = np.asarray(r, dtype=float)
    rho = np.linalg.norm(r, axis=-1)
    rn = (r * n).sum(axis=-1)
    return (3.0 * _C4) * (rn / rho**5)[..., None, None] \
        * r[..., :, None] * r[..., None, :]


def double_layer_pressure(r, n):
    """P(r, n): (..., 3)."""
    r = np.asarray(r, dtype=float)
    rho = np.linalg.norm(r, axis=-1)
    rn = (r * n).sum(axis=-1)
    return _C4 * (-np.asarray(n) / rho[..., None] ** 3
                  + 3.0 * rn[..., None] * r / rho[..., None] ** 5)


def stokeslet_stress(r):
    """Stress tensor of the Stokeslet field with unit force e_l:
    sigma_jk^(l)(r) = -(3/4pi) r_j r_k r_l / rho^5, returned as (..., 3, 3, 3)
    indexed [j, k, l]."""
    r = np.asarray(r, dtype=float)
    rho = np.linalg.norm(r, axis=-1)
    outer = r[..., :, None, None] * r[..., None, :, None] * r[..., None, None, :]
    return -(3.0 * _C4) * outer / rho[..., None, None, None] ** 5


# ------------------------------------------------------- coarse/fine linking

class SurfaceLink:
    """Maps a fine surface's facets into the facets of a coarser (nested)
    triangulation of the same surface; identity when coarse is the surface
    itself. Carries everything the pair-assembly loops need about the trial
    space: parent facet ids, barycentric transfer matrices, P1 gradients,
    and global vertex numbering."""

    def __init__(self, fine, coarse=None):
        self.fine = fine
        self.coarse = coarse if coarse is not None else fine
        nf = fine.num_tris
        nc = self.coarse.num_tris
        if nf % nc != 0 or (nf // nc) not in (1, 4, 16, 64):
            raise ValueError("surfaces are not nested refinements")
        step = nf // nc
        self.cid = np.arange(nf) // step
        # barycentric transfer: lam_coarse(point) = Abar @ lam_fine(point)
        cv = self.coarse.vertices[self.coarse.tris]      # (nc, 3, 3)
        fv = fine.vertices[fine.tris]                    # (nf, 3, 3)
        self.Abar = np.empty((nf, 3, 3))
        for f in range(nf):
            C = cv[self.cid[f]]
            # solve [C^T; 1] lam = [p; 1] for each fine vertex p (plane coords)
            e1 = C[1] - C[0]
            e2 = C[2] - C[0]
            G = np.array([[e1 @ e1, e1 @ e2], [e1 @ e2, e2 @ e2]])
            for v in range(3):
                rhs = np.array([e1 @ (fv[f, v] - C[0]), e2 @ (fv[f, v] - C[0])])
                ab = np.linalg.solve(G, rhs)
                self.Abar[f, :, v] = (1.0 - ab.sum(), ab[0], ab[1])
            if np.linalg.norm(self.Abar[f] @ np.array([1/3, 1/3, 1/3])
                              @ cv[self.cid[f]] - fv[f].mean(axis=0)) > 1e-10:
                raise ValueError("fine facet does not nest in its parent")
        # P1 gradients on coarse facets (tangential, constant per facet)
        self.grads = np.empty((nc, 3, 3))
        for c in range(nc):
            p = cv[c]
            n = np.cross(p[1] - p[0], p[2] - p[0])
            a2 = np.linalg.norm(n)
            n = n / a2
            for w in range(3):
                e = p[(w + 2) % 3] - p[(w + 1) % 3]
                self.grads[c, w] = np.cross(n, e) / a2
        self.ctri = self.coarse.tris.astype(np.int64)
        self.num_vertices = self.coarse.vertices.shape[0]


def identity_link(surf):
    return SurfaceLink(surf, surf)


# ------------------------------------------------------------ assembly (numba)

@njit(cache=True)
def _classify3(gx, gy, px, py):
    n = 0
    for i in range(3):
        for j in range(3):
            if gx[i] == gy[j]:
                if n < 3:
                    px[n] = i
                    py[n] = j
                n += 1
    if n >= 3:
        px[0], px[1], px[2] = 0, 1, 2
        py[0], py[1], py[2] = 0, 1, 2
        return 3
    if n == 0:
        px[0], px[1], px[2] = 0, 1, 2
        py[0], py[1], py[2] = 0, 1, 2
        return 0
    if n == 1:
        i0, j0 = px[0], py[0]
        px[0], px[1], px[2] = i0, (i0 + 1) % 3, (i0 + 2) % 3
        py[0], py[1], py[2] = j0, (j0 + 1) % 3, (j0 + 2) % 3
        return 1
    # shared edge: canonical order (A, B, free) on both, A/B matched by gid
    px[2] = 3 - px[0] - px[1]
    py[2] = 3 - py[0] - py[1]
    return 2


@njit(cache=True)
def _V_loop(pts, gids, areas, cents, diams, rules_bx, rules_by, rules_w,
            rules_off, near_factor, out):
    nt = pts.shape[0]
    px = np.empty(3, np.int64)
    py = np.empty(3, np.int64)
    M0 = np.empty((3, 3))
    M2 = np.empty((3, 3, 3, 3))
    X = np.empty(3)
    Y = np.empty(3)
    for tx in range(nt):
        for ty in range(nt):
            case = _classify3(gids[tx], gids[ty], px, py)
            if case == 0:
                d2 = 0.0
                for a in range(3):
                    d2 += (cents[tx, a] - cents[ty, a]) ** 2
                thr = near_factor * max(diams[tx], diams[ty])
                rid = 0 if d2 > thr * thr else 4
            else:
                rid = case
            lo = rules_off[rid]
            hi = rules_off[rid + 1]
            M0[:, :] = 0.0
            M2[:, :, :, :] = 0.0
            for q in range(lo, hi):
                wq = rules_w[q]
                for a in range(3):
                    xa = 0.0
                    ya = 0.0
                    for m in range(3):
                        xa += rules_bx[q, m] * pts[tx, px[m], a]
                        ya += rules_by[q, m] * pts[ty, py[m], a]
                    X[a] = xa
                    Y[a] = ya
                r0 = X[0] - Y[0]
                r1 = X[1] - Y[1]
                r2 = X[2] - Y[2]
                rho = np.sqrt(r0 * r0 + r1 * r1 + r2 * r2)
                c0 = wq / rho
                cr = wq / (rho * rho * rho)
                for m in range(3):
                    u = px[m]
                    bm = rules_bx[q, m]
                    for n in range(3):
                        v = py[n]
                        s = bm * rules_by[q, n]
                        M0[u, v] += s * c0
                        sc = s * cr
                        M2[u, v, 0, 0] += sc * r0 * r0
                        M2[u, v, 0, 1] += sc * r0 * r1
                        M2[u, v, 0, 2] += sc * r0 * r2
                        M2[u, v, 1, 1] += sc * r1 * r1
                        M2[u, v, 1, 2] += sc * r1 * r2
                        M2[u, v, 2, 2] += sc * r2 * r2
            fac = 4.0 * areas[tx] * areas[ty] * _C4
            for u in range(3):
                for v in range(3):
                    M2[u, v, 1, 0] = M2[u, v, 0, 1]
                    M2[u, v, 2, 0] = M2[u, v, 0, 2]
                    M2[u, v, 2, 1] = M2[u, v, 1, 2]
                    for i in range(3):
                        for j in range(3):
                            val = M2[u, v, i, j]
                            if i == j:
                                val += M0[u, v]
                            out[tx * 9 + u * 3 + i, ty * 9 + v * 3 + j] += fac * val


@njit(cache=True)
def _K_loop(pts, gids, areas, cents, diams, normals,
            cid, Abar, ctri, rules_bx, rules_by, rules_w, rules_off,
            near_factor, out):
    nt = pts.shape[0]
    px = np.empty(3, np.int64)
    py = np.empty(3, np.int64)
    X = np.empty(3)
    Y = np.empty(3)
    Ab2 = np.empty((3, 3))
    M = np.empty((3, 3, 3, 3))   # [u, w, i, l]
    for tx in range(nt):
        for ty in range(nt):
            case = _classify3(gids[tx], gids[ty], px, py)
            if case == 0:
                d2 = 0.0
                for a in range(3):
                    d2 += (cents[tx, a] - cents[ty, a]) ** 2
                thr = near_factor * max(diams[tx], diams[ty])
                rid = 0 if d2 > thr * thr else 4
            else:
                rid = case
            lo = rules_off[rid]
            hi = rules_off[rid + 1]
            cy = cid[ty]
            for w in range(3):
                for n in range(3):
                    Ab2[w, n] = Abar[ty, w, py[n]]
            M[:, :, :, :] = 0.0
            ny0 = normals[ty, 0]
            ny1 = normals[ty, 1]
            ny2 = normals[ty, 2]
            for q in range(lo, hi):
                wq = rules_w[q]
                for a in range(3):
                    xa = 0.0
                    ya = 0.0
                    for m in range(3):
                        xa += rules_bx[q, m] * pts[tx, px[m], a]
                        ya += rules_by[q, m] * pts[ty, py[m], a]
                    X[a] = xa
                    Y[a] = ya
                r0 = X[0] - Y[0]
                r1 = X[1] - Y[1]
                r2 = X[2] - Y[2]
                rho2 = r0 * r0 + r1 * r1 + r2 * r2
                rho = np.sqrt(rho2)
                rn = r0 * ny0 + r1 * ny1 + r2 * ny2
                coef = wq * rn / (rho2 * rho2 * rho)
                if coef == 0.0:
                    continue
                lc0 = Ab2[0, 0] * rules_by[q, 0] + Ab2[0, 1] * rules_by[q, 1] + Ab2[0, 2] * rules_by[q, 2]
                lc1 = Ab2[1, 0] * rules_by[q, 0] + Ab2[1, 1] * rules_by[q, 1] + Ab2[1, 2] * rules_by[q, 2]
                lc2 = Ab2[2, 0] * rules_by[q, 0] + Ab2[2, 1] * rules_by[q, 1] + Ab2[2, 2] * rules_by[q, 2]
                for m in range(3):
                    u = px[m]
                    bm = rules_bx[q, m] * coef
                    for w in range(3):
                        lw = lc0 if w == 0 else (lc1 if w == 1 else lc2)
                        s = bm * lw
                        M[u, w, 0, 0] += s * r0 * r0
                        M[u, w, 0, 1] += s * r0 * r1
                        M[u, w, 0, 2] += s * r0 * r2
                        M[u, w, 1, 1] += s * r1 * r1
                        M[u, w, 1, 2] += s * r1 * r2
                        M[u, w, 2, 2] += s * r2 * r2
            fac = 4.0 * areas[tx] * areas[ty] * 3.0 * _C4
            for u in range(3):
                for w in range(3):
                    M[u, w, 1, 0] = M[u, w, 0, 1]
                    M[u, w, 2, 0] = M[u, w, 0, 2]
                    M[u, w, 2, 1] = M[u, w, 1, 2]
                    col = ctri[cy, w]
                    for i in range(3):
                        row = tx * 9 + u * 3 + i
                        for l in range(3):
                            out[row, 3 * col + l] += fac * M[u, w, i, l]


@njit(cache=True)
def _W_loop(pts, gids, areas, cents, diams, normals,
            cid, Abar, ctri, grads, rules_bx, rules_by, rules_w, rules_off,
            near_factor, out):
    nt = pts.shape[0]
    px = np.empty(3, np.int64)
    py = np.empty(3, np.int64)
    X = np.empty(3)
    Y = np.empty(3)
    I4f = np.empty(3)
    I5f = np.empty(3)
    Irr = np.empty((3, 3))
    Iv4 = np.empty(3)
    Iw5 = np.empty(3)
    Gx = np.empty((3, 3, 3))   # [vertex, component, a]
    Gy = np.empty((3, 3, 3))
    for tx in range(nt):
        cX = cid[tx]
        nx = normals[tx]
        for v in range(3):
            g = grads[cX, v]
            for c in range(3):
                for a in range(3):
                    Gx[v, c, a] = nx[c] * g[a] - nx[a] * g[c]
        for ty in range(nt):
            case = _classify3(gids[tx], gids[ty], px, py)
            if case == 0:
                d2 = 0.0
                for a in range(3):
                    d2 += (cents[tx, a] - cents[ty, a]) ** 2
                thr = near_factor * max(diams[tx], diams[ty])
                rid = 0 if d2 > thr * thr else 4
            else:
                rid = case
            lo = rules_off[rid]
            hi = rules_off[rid + 1]
            cY = cid[ty]
            ny = normals[ty]
            for w in range(3):
                g = grads[cY, w]
                for d in range(3):
                    for a in range(3):
                        Gy[w, d, a] = ny[d] * g[a] - ny[a] * g[d]
            I0 = 0.0
            Irr[:, :] = 0.0
            I4f[:] = 0.0
            I5f[:] = 0.0
            for q in range(lo, hi):
                wq = rules_w[q]
                for a in range(3):
                    xa = 0.0
                    ya = 0.0
                    for m in range(3):
                        xa += rules_bx[q, m] * pts[tx, px[m], a]
                        ya += rules_by[q, m] * pts[ty, py[m], a]
                    X[a] = xa
                    Y[a] = ya
                r0 = X[0] - Y[0]
                r1 = X[1] - Y[1]
                r2 = X[2] - Y[2]
                rho2 = r0 * r0 + r1 * r1 + r2 * r2
                rho = np.sqrt(rho2)
                c0 = wq / rho
                c3 = wq / (rho2 * rho)
                I0 += c0
                Irr[0, 0] += c3 * r0 * r0
                Irr[0, 1] += c3 * r0 * r1
                Irr[0, 2] += c3 * r0 * r2
                Irr[1, 1] += c3 * r1 * r1
                Irr[1, 2] += c3 * r1 * r2
                Irr[2, 2] += c3 * r2 * r2
                rnx = r0 * nx[0] + r1 * nx[1] + r2 * nx[2]
                rny = r0 * ny[0] + r1 * ny[1] + r2 * ny[2]
                cx3 = c3 * rnx
                cy3 = c3 * rny
                for m in range(3):
                    I4f[px[m]] += rules_bx[q, m] * cx3
                    I5f[py[m]] += rules_by[q, m] * cy3
            Irr[1, 0] = Irr[0, 1]
            Irr[2, 0] = Irr[0, 2]
            Irr[2, 1] = Irr[1, 2]
            for w in range(3):
                Iv4[w] = Abar[tx, w, 0] * I4f[0] + Abar[tx, w, 1] * I4f[1] + Abar[tx, w, 2] * I4f[2]
                Iw5[w] = Abar[ty, w, 0] * I5f[0] + Abar[ty, w, 1] * I5f[1] + Abar[ty, w, 2] * I5f[2]
            fac = 4.0 * areas[tx] * areas[ty]
            gx = grads[cX]
            gy = grads[cY]
            nxny = nx[0] * ny[0] + nx[1] * ny[1] + nx[2] * ny[2]
            nxgy0 = nx[0] * gy[0, 0] + nx[1] * gy[0, 1] + nx[2] * gy[0, 2]
            nxgy1 = nx[0] * gy[1, 0] + nx[1] * gy[1, 1] + nx[2] * gy[1, 2]
            nxgy2 = nx[0] * gy[2, 0] + nx[1] * gy[2, 1] + nx[2] * gy[2, 2]
            for v in range(3):
                rowv = ctri[cX, v]
                gxv = gx[v]
                for w in range(3):
                    colw = ctri[cY, w]
                    gyw = gy[w]
                    gg = gxv[0] * gyw[0] + gxv[1] * gyw[1] + gxv[2] * gyw[2]
                    nygx = ny[0] * gxv[0] + ny[1] * gxv[1] + ny[2] * gxv[2]
                    nxgy = nxgy0 if w == 0 else (nxgy1 if w == 1 else nxgy2)
                    # sum_ab Mx_ab My_ab = 2 [(nx.ny)(gx.gy) - (nx.gy)(ny.gx)]
                    mm = 2.0 * (nxny * gg - nxgy * nygx)
                    for c in range(3):
                        for d in range(3):
                            t1 = 0.0
                            t2 = 0.0
                            for a in range(3):
                                gxa = Gx[v, c, a]
                                t1 += gxa * Gy[w, d, a]
                                acc = 0.0
                                for b in range(3):
                                    acc += Gy[w, d, b] * Irr[a, b]
                                t2 += gxa * acc
                            val = _C8 * t1 * I0 - _C4 * t2
                            if c == d:
                                val += _C16 * mm * I0
                            val += _C8 * Gy[w, d, c] * Iv4[v]
                            val -= _C8 * Gx[v, c, d] * Iw5[w]
                            out[3 * rowv + c, 3 * colw + d] += fac * val


def _pack_rules(sing_order, reg_order, near_order):
    """Concatenate the per-case rules into flat arrays with offsets indexed by
    rule id: 0 separated-far, 1 vertex, 2 edge, 3 coincident, 4 separated-near."""
    parts = [qd.separated_rule(reg_order), qd.vertex_rule(sing_order),
             qd.edge_rule(sing_order), qd.coincident_rule(sing_order),
             qd.separated_rule(near_order)]
    off = np.zeros(6, dtype=np.int64)
    for i, (bx, by, w) in enumerate(parts):
        off[i + 1] = off[i] + len(w)
    bx = np.concatenate([p[0] for p in parts]).astype(np.float64)
    by = np.concatenate([p[1] for p in parts]).astype(np.float64)
    w = np.concatenate([p[2] for p in parts]).astype(np.float64)
    return bx, by, w, off


def _surface_arrays(surf):
    pts = surf.vertices[surf.tris].astype(np.float64)
    gids = surf.volume_vertex_ids[surf.tris].astype(np.int64)
    cents = pts.mean(axis=1)
    return pts, gids, surf.areas, cents, surf.tri_diameters()


def assemble_V(surf, sing_order=6, reg_order=2, near_order=4, near_factor=2.0):
    """Galerkin single-layer matrix on the discontinuous per-facet P1 space;
    dof = 9*facet + 3*vertex + component. Dense, symmetric."""
    pts, gids, areas, cents, diams = _surface_arrays(surf)
    bx, by, w, off = _pack_rules(sing_order, reg_order, near_order)
    out = np.zeros((9 * surf.num_tris, 9 * surf.num_tris))
    _V_loop(pts, gids, areas, cents, diams, bx, by, w, off, near_factor, out)
    return out


def assemble_K(surf, link=None, sing_order=6, reg_order=2, near_order=4,
               near_factor=2.0):
    """Galerkin double-layer pairing <psi, K phi>: rows = per-facet P1 densities
    on `surf`, columns = continuous P1 on the (possibly coarser) trial surface
    described by `link`."""
    link = link or identity_link(surf)
    pts, gids, areas, cents, diams = _surface_arrays(surf)
    bx, by, w, off = _pack_rules(sing_order, reg_order, near_order)
    out = np.zeros((9 * surf.num_tris, 3 * link.num_vertices))
    _K_loop(pts, gids, areas, cents, diams, surf.normals,
            link.cid.astype(np.int64), link.Abar, link.ctri,
            bx, by, w, off, near_factor, out)
    return out


def assemble_W(surf, link=None, sing_order=6, reg_order=2, near_order=4,
               near_factor=2.0):
    """Galerkin hypersingular matrix on the continuous P1 space of the trial
    surface in `link`, assembled by the Guenter-regularized identity so only
    weakly singular kernels are integrated. Dense, symmetric, PSD with a
    6-dimensional rigid-motion kernel."""
    link = link or identity_link(surf)
    pts, gids, areas, cents, diams = _surface_arrays(surf)
    bx, by, w, off = _pack_rules(sing_order, reg_order, near_order)
    out = np.zeros((3 * link.num_vertices, 3 * link.num_vertices))
    _W_loop(pts, gids, areas, cents, diams, surf.normals,
            link.cid.astype(np.int64), link.Abar, link.ctri, link.grads,
            bx, by, w, off, near_factor, out)
    return out


def trace_mass(surf, link=None):
    """<psi, phi> pairing of per-facet P1 densities (rows) against continuous
    P1 (columns, possibly on a coarser nested surface). Exact."""
    link = link or identity_link(surf)
    rows, cols, vals = [], [], []
    for f in range(surf.num_tris):
        A = surf.areas[f]
        Ab = link.Abar[f]
        c = link.cid[f]
        for u in range(3):
            for w in range(3):
                m = A / 12.0 * (Ab[w].sum() + Ab[w, u])
                for i in range(3):
                    rows.append(9 * f + 3 * u + i)
                    cols.append(3 * link.ctri[c, w] + i)
                    vals.append(m)
    return sparse.coo_matrix(
        (vals, (rows, cols)),
        shape=(9 * surf.num_tris, 3 * link.num_vertices)).tocsr()


# ------------------------------------------------------- potential evaluation

def _eval_on_tri(kernel, tri, corner_vals, normal, pts, order):
    lam, w = qd.tri_rule(order)
    y = lam @ tri                       # (nq, 3)
    vals = lam @ corner_vals            # (nq, 3) density at quadrature points
    area = 0.5 * np.linalg.norm(np.cross(tri[1] - tri[0], tri[2] - tri[0]))
    r = pts[:, None, :] - y[None, :, :]           # (np, nq, 3)
    ker = kernel(r, normal)                       # (np, nq, 3, 3) or (np, nq, 3)
    if ker.ndim == 4:
        contrib = np.einsum("pqij,qj,q->pi", ker, vals, w)
    else:
        contrib = np.einsum("pqi,qi,q->p", ker, vals, w)
    return area * contrib


def _eval_recursive(kernel, tri, corner_vals, normal, pts, order, depth, out, idx):
    if len(idx) == 0:
        return
    diam = max(np.linalg.norm(tri[1] - tri[0]), np.linalg.norm(tri[2] - tri[1]),
               np.linalg.norm(tri[0] - tri[2]))
    cen = tri.mean(axis=0)
    dist = np.linalg.norm(pts[idx] - cen, axis=1)
    near = dist < 1.0 * diam
    far_idx = idx[~near]
    if len(far_idx):
        out[far_idx] += _eval_on_tri(kernel, tri, corner_vals, normal,
                                     pts[far_idx], order)
    near_idx = idx[near]
    if len(near_idx) == 0:
        return
    if depth == 0:
        out[near_idx] += _eval_on_tri(kernel, tri, corner_vals, normal,
                                      pts[near_idx], order)
        return
    m01 = 0.5 * (tri[0] + tri[1])
    m02 = 0.5 * (tri[0] + tri[2])
    m12 = 0.5 * (tri[1] + tri[2])
    v01 = 0.5 * (corner_vals[0] + corner_vals[1])
    v02 = 0.5 * (corner_vals[0] + corner_vals[2])
    v12 = 0.5 * (corner_vals[1] + corner_vals[2])
    kids = (
        (np.array([tri[0], m01, m02]), np.array([corner_vals[0], v01, v02])),
        (np.array([m01, tri[1], m12]), np.array([v01, corner_vals[1], v12])),
        (np.array([m02, m12, tri[2]]), np.array([v02, v12, corner_vals[2]])),
        (np.array([m01, m12, m02]), np.array([v01, v12, v02])),
    )
    for kt, kv in kids:
        _eval_recursive(kernel, kt, kv, normal, pts, order, depth - 1,
                        out, near_idx)


def _eval_potential(kernel, surf, facet_vals, pts, order=6, depth=4, scalar=False):
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    out = np.zeros(len(pts)) if scalar else np.zeros((len(pts), 3))
    tri_pts = surf.vertices[surf.tris]
    idx = np.arange(len(pts))
    for f in range(surf.num_tris):
        _eval_recursive(kernel, tri_pts[f], facet_vals[f], surf.normals[f],
                        pts, order, depth, out, idx)
    return out


def eval_single_layer(surf, facet_vals, pts, order=6, depth=4):
    """(S rho)(x) for a per-facet P1 density given as (nt, 3 corners, 3)."""
    return _eval_potential(lambda r, n: stokeslet(r), surf, facet_vals, pts,
                           order, depth)


def eval_double_layer(surf, vertex_vals, pts, order=6, depth=4):
    """(D psi)(x) for a continuous P1 density given by vertex values (nv, 3)."""
    facet_vals = vertex_vals[surf.tris]
    return _eval_potential(stresslet, surf, facet_vals, pts, order, depth)


def eval_single_layer_pressure(surf, facet_vals, pts, order=6, depth=4):
    return _eval_potential(lambda r, n: stokeslet_pressure(r), surf, facet_vals,
                           pts, order, depth, scalar=True)


def eval_double_layer_pressure(surf, vertex_vals, pts, order=6, depth=4):
    facet_vals = vertex_vals[surf.tris]
    return _eval_potential(double_layer_pressure, surf, facet_vals, pts,
                           order, depth, scalar=True)
