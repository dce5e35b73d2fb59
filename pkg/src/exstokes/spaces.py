"""Discrete spaces for the dual-mixed stress-velocity-vorticity method.

Stress: each of the 3 rows is an H(div) field, piecewise full (P1)^3 per tet,
with 3 facet moments per facet against the facet P1 basis (12 dofs per row per
tet; moments are taken against a fixed global facet normal so the normal trace
is continuous). Velocity and vorticity are piecewise constant (3 dofs per tet
each; vorticity uses the cross-product basis of skew matrices).

Global stress dof numbering: 9*facet + 3*moment + row, where moments are
ordered by the facet's sorted global vertex ids. The homogeneous variant drops
the dofs of all facets on the inner boundary (zero normal trace there).
"""

from __future__ import annotations

import numpy as np
from scipy import sparse

from . import quadrature as qd
from .geometry import GAMMA0

_TET_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])


class StressSpace:
    def __init__(self, mesh, homogeneous_gamma0=False):
        self.mesh = mesh
        self.homogeneous_gamma0 = homogeneous_gamma0
        v = mesh.vertices
        tets = mesh.tets
        nt = len(tets)

        # global facet table: key = sorted vertex triple; the facet's global
        # normal is the outward normal of its first (lowest flat-index) tet
        faces = tets[:, _TET_FACES]                   # (nt, 4, 3) outward-oriented
        keys = np.sort(faces.reshape(-1, 3), axis=1)
        uniq, first, inv = np.unique(keys, axis=0, return_index=True,
                                     return_inverse=True)
        self.facets = uniq                            # (nf, 3) sorted gids
        self.num_facets = len(uniq)
        self.tet_facets = inv.reshape(nt, 4)

        fpts = v[faces]                               # (nt, 4, 3 corners, 3)
        out_cr = np.cross(fpts[:, :, 1] - fpts[:, :, 0],
                          fpts[:, :, 2] - fpts[:, :, 0]).reshape(nt * 4, 3)
        owner_cr = out_cr[first]
        nrm = np.linalg.norm(owner_cr, axis=1)
        self.facet_areas = 0.5 * nrm
        self.facet_normals = owner_cr / nrm[:, None]
        self.tet_signs = np.where(
            np.einsum("tfa,tfa->tf", out_cr.reshape(nt, 4, 3),
                      self.facet_normals[self.tet_facets]) > 0, 1.0, -1.0)

        # constrained facets (zero normal trace) in the homogeneous variant
        self.constrained = np.zeros(self.num_facets, dtype=bool)
        if homogeneous_gamma0:
            bset = {tuple(np.sort(bf)) for bf, tag in
                    zip(mesh.boundary_facets, mesh.boundary_tags) if tag == GAMMA0}
            for f in range(self.num_facets):
                if tuple(self.facets[f]) in bset:
                    self.constrained[f] = True
        self.facet_dof = np.full(self.num_facets, -1, dtype=np.int64)
        free = np.flatnonzero(~self.constrained)
        self.facet_dof[free] = np.arange(len(free))
        self.ndof = 9 * len(free)

        # local vertex index (0..3) of each facet corner, sorted-gid order
        fgids = self.facets[self.tet_facets]          # (nt, 4, 3)
        self.tet_face_verts = (fgids[:, :, :, None] ==
                               tets[:, None, None, :]).argmax(axis=3)

        # moment -> nodal transform per tet: for one row field, the 12 moments
        # (4 faces x 3 facet vertices, against the global facet normal)
        # determine the (P1)^3 nodal coefficients (4 vertices x 3 comps);
        # moment of a P1 field: sum_kv (beta(corner kv).n) * A(1+delta)/12
        Af = self.facet_areas[self.tet_facets]        # (nt, 4)
        nF = self.facet_normals[self.tet_facets]      # (nt, 4, 3)
        M = np.zeros((nt, 12, 12))
        tix = np.arange(nt)
        for lf in range(4):
            for mv in range(3):
                for kv in range(3):
                    w = Af[:, lf] / 12.0 * (1 + (kv == mv))
                    col0 = 3 * self.tet_face_verts[:, lf, kv]
                    for i in range(3):
                        M[tix, 3 * lf + mv, col0 + i] = w * nF[:, lf, i]
        self.moment_to_nodal = np.linalg.inv(M)       # (nt, nodal, moment)

        # P1 gradients and volumes per tet
        a = v[tets[:, 1]] - v[tets[:, 0]]
        b = v[tets[:, 2]] - v[tets[:, 0]]
        c = v[tets[:, 3]] - v[tets[:, 0]]
        self.tet_volumes = np.einsum("ij,ij->i", np.cross(a, b), c) / 6.0
        Jinv = np.linalg.inv(np.stack([a, b, c], axis=2))
        g = np.empty((nt, 4, 3))
        g[:, 1] = Jinv[:, 0]
        g[:, 2] = Jinv[:, 1]
        g[:, 3] = Jinv[:, 2]
        g[:, 0] = -(g[:, 1] + g[:, 2] + g[:, 3])
        self.tet_grads = g

    # ---- dof bookkeeping -------------------------------------------------
    def all_local_dofs(self):
        """Global dof of each (tet, face, moment, row) slot, -1 if constrained."""
        fd = self.facet_dof[self.tet_facets]          # (nt, 4)
        base = 9 * fd[:, :, None, None] + 3 * np.arange(3)[None, None, :, None] \
            + np.arange(3)[None, None, None, :]
        return np.where(fd[:, :, None, None] < 0, -1, base)

    # ---- representation --------------------------------------------------
    def _local_coeffs(self, coeffs):
        """Local moment coefficients per (tet, row): (nt, 3, 12 = 3*lf + m)."""
        dofs = self.all_local_dofs()
        vals = np.where(dofs >= 0, coeffs[np.maximum(dofs, 0)], 0.0)
        return vals.transpose(0, 3, 1, 2).reshape(len(vals), 3, 12)

    def nodal_values(self, coeffs):
        """Per-tet nodal representation: (nt, 3 rows, 4 vertices, 3 comps)."""
        loc = self._local_coeffs(coeffs)
        nod = np.einsum("tmn,trn->trm", self.moment_to_nodal, loc)
        return nod.reshape(len(loc), 3, 4, 3)

    def interpolate(self, tensor_field, degree=6):
        """Facet-moment interpolation of a 3x3 tensor field (callable on (n,3)
        points). Constrained facets are skipped."""
        lam, w = qd.tri_rule(degree)
        v = self.mesh.vertices
        out = np.zeros(self.ndof)
        for f in range(self.num_facets):
            fd = self.facet_dof[f]
            if fd < 0:
                continue
            pts = lam @ v[self.facets[f]]
            sig = np.asarray(tensor_field(pts))       # (nq, 3, 3)
            tn = np.einsum("qij,j->qi", sig, self.facet_normals[f])
            mom = self.facet_areas[f] * np.einsum("q,qm,qi->mi", w, lam, tn)
            out[9 * fd: 9 * fd + 9] = mom.reshape(-1)
        return out

    def identity_coefficients(self):
        """Coefficients representing the constant identity tensor (full space
        only; its normal trace on the inner boundary does not vanish)."""
        if self.homogeneous_gamma0:
            raise ValueError("identity tensor is not in the homogeneous space")
        out = np.zeros(self.ndof)
        for f in range(self.num_facets):
            fd = self.facet_dof[f]
            mom = self.facet_areas[f] / 3.0 * self.facet_normals[f]
            for m in range(3):
                out[9 * fd + 3 * m: 9 * fd + 3 * m + 3] = mom
        return out

    def trace_integral_vector(self):
        """Vector c with c @ coeffs = integral of tr(sigma) over the annulus."""
        nt = len(self.mesh.tets)
        # row-i moment slot n contributes V/4 * sum_k B[3k+i, n] to int tr
        Bk = self.moment_to_nodal.reshape(nt, 4, 3, 12).sum(axis=1)
        wi = self.tet_volumes[:, None, None] / 4.0 * Bk          # (nt, i, n)
        dofs = self.all_local_dofs().transpose(0, 3, 1, 2).reshape(nt, 3, 12)
        c = np.zeros(self.ndof)
        mask = dofs >= 0
        np.add.at(c, dofs[mask], wi[mask])
        return c


class VelocitySpace:
    """Piecewise constant vectors; dof = 3*tet + comp."""

    def __init__(self, mesh):
        self.mesh = mesh
        self.ndof = 3 * len(mesh.tets)

    def interpolate(self, field):
        cents = self.mesh.vertices[self.mesh.tets].mean(axis=1)
        return np.asarray(field(cents)).reshape(-1)


SKEW_BASIS = np.array([
    [[0.0, 0, 0], [0, 0, -1], [0, 1, 0]],
    [[0.0, 0, 1], [0, 0, 0], [-1, 0, 0]],
    [[0.0, -1, 0], [1, 0, 0], [0, 0, 0]],
])  # S_k w = e_k x w


class VorticitySpace:
    """Piecewise constant skew matrices chi = sum_k c_k S_k; dof = 3*tet + k."""

    def __init__(self, mesh):
        self.mesh = mesh
        self.ndof = 3 * len(mesh.tets)

    def matrices(self, coeffs):
        return np.einsum("tk,kij->tij", coeffs.reshape(-1, 3), SKEW_BASIS)


def normal_trace_map(space, surf):
    """Sparse map from stress coefficients to the per-facet P1 density
    gamma_nu(sigma) on `surf` (dof = 9*surface_facet + 3*corner + comp),
    taken w.r.t. the surface normal. Constrained facets map to zero."""
    key2facet = {tuple(f): i for i, f in enumerate(space.facets)}
    rows, cols, vals = [], [], []
    for sf in range(surf.num_tris):
        gids = surf.volume_vertex_ids[surf.tris[sf]]
        f = key2facet[tuple(np.sort(gids))]
        fd = space.facet_dof[f]
        if fd < 0:
            continue
        A = space.facet_areas[f]
        sgn = 1.0 if surf.normals[sf] @ space.facet_normals[f] > 0 else -1.0
        # corner values from moments: c = (12/A)(d - sum(d)/4), permuted from
        # sorted-gid moment order to the surface corner order
        sorted_gids = np.sort(gids)
        for corner in range(3):
            mc = int(np.searchsorted(sorted_gids, gids[corner]))
            for m in range(3):
                coef = sgn * (12.0 / A) * ((1.0 if m == mc else 0.0) - 0.25)
                for i in range(3):
                    rows.append(9 * sf + 3 * corner + i)
                    cols.append(9 * fd + 3 * m + i)
                    vals.append(coef)
    return sparse.coo_matrix((vals, (rows, cols)),
                             shape=(9 * surf.num_tris, space.ndof)).tocsr()


def rm_vertex_fields(surf):
    """The 6 rigid motions as P1 vertex coefficient vectors (3nv,)."""
    v = surf.vertices
    out = []
    for k in range(3):
        z = np.zeros((len(v), 3))
        z[:, k] = 1.0
        out.append(z.reshape(-1))
    for k in range(3):
        e = np.zeros(3)
        e[k] = 1.0
        out.append(np.cross(e, v).reshape(-1))
    return out


def rm_constraint_rows(surf):
    """Rows R with (R phi)_k = <phi, z_k>_Gamma for the 6 rigid motions z_k;
    exact for P1 phi (rigid motions are affine)."""
    lam, w = qd.tri_rule(3)
    nv = surf.vertices.shape[0]
    R = np.zeros((6, 3 * nv))
    tri = surf.tris
    for k, z in enumerate(rm_vertex_fields(surf)):
        zv = z.reshape(nv, 3)
        for f in range(surf.num_tris):
            zq = lam @ zv[tri[f]]                     # (nq, 3)
            for c in range(3):
                contrib = (surf.areas[f] * w * lam[:, c])[:, None] * zq
                R[k, 3 * tri[f, c]: 3 * tri[f, c] + 3] += contrib.sum(axis=0)
    return R


def moment_field(surf):
    """m(x) = x - centroid(Gamma) as a per-facet P1 density coefficient vector
    (the constraint field whose complement makes the single-layer operator
    positive definite)."""
    cen = surf.centroid()
    out = np.zeros(9 * surf.num_tris)
    for f in range(surf.num_tris):
        for u in range(3):
            out[9 * f + 3 * u: 9 * f + 3 * u + 3] = \
                surf.vertices[surf.tris[f, u]] - cen
    return out


def facet_p1_mass(surf):
    """Block-diagonal mass matrix of the per-facet P1 density space."""
    rows, cols, vals = [], [], []
    for f in range(surf.num_tris):
        A = surf.areas[f]
        for u in range(3):
            for v in range(3):
                blk = A / 12.0 * (1 + (u == v))
                for i in range(3):
                    rows.append(9 * f + 3 * u + i)
                    cols.append(9 * f + 3 * v + i)
                    vals.append(blk)
    n = 9 * surf.num_tris
    return sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
