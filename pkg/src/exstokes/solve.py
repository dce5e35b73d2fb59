"""Direct solution of the coupled block systems and post-processing.

The systems mix a large sparse volume part with dense boundary-operator
blocks whose rows/columns all live on the outer surface. We therefore solve
by a bordered Schur complement:

  border   = [sigma dofs on Gamma facets, phi, (lambda), rm rows, pins]
  interior = [remaining sigma, u, chi]

The interior block is purely sparse and is factored once with SuperLU; the
dense Schur complement of the border is then formed column-chunk by
column-chunk and factored with LAPACK. Because the normal-trace map
restricted to the Gamma facets is block diagonal and invertible, the border
stress unknowns are changed to the facet traction density, which lets the
dense operators (V, K, W) drop into the Schur matrix without any products.

For the kinds with constrained inner traces the interior volume block has a
six-dimensional rigid-motion kernel; the velocity and vorticity unknowns of
one tetrahedron are moved into the border ("pins") to make it invertible.
All unknowns are still solved exactly; nothing is eliminated from the model.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.linalg import lu_factor, lu_solve
from scipy.sparse.linalg import splu

from . import potentials as pot
from . import quadrature as qd
from .geometry import GAMMA0
from .spaces import SKEW_BASIS, rm_vertex_fields

SCHUR_CHUNK_BYTES = 3.0e8      # working set per column chunk of the Schur build
SVOL_CACHE_LIMIT = 9000        # cache the volume Schur only below this border size


@dataclass
class SolveReport:
    residual: float
    rm_residual: float
    pivot_growth: float
    wall_time: float
    border_size: int
    refinement_steps: int
    pinned_tet: object = None
    method: str = "bordered-schur-direct"

    def as_dict(self):
        return dict(residual=self.residual, rm_residual=self.rm_residual,
                    pivot_growth=self.pivot_growth, wall_time=self.wall_time,
                    border_size=self.border_size,
                    refinement_steps=self.refinement_steps,
                    pinned_tet=self.pinned_tet, method=self.method)


@dataclass
class SolutionBundle:
    kind: str
    layout: list
    x: np.ndarray
    meta: dict = field(default_factory=dict)

    def block(self, name):
        off = 0
        for n, s in self.layout:
            if n == name:
                return self.x[off:off + s]
            off += s
        raise KeyError(name)

    @property
    def sigma(self):
        return self.block("sigma")

    @property
    def phi(self):
        return self.block("phi").reshape(-1, 3)

    @property
    def u(self):
        return self.block("u").reshape(-1, 3)

    @property
    def chi(self):
        return self.block("chi").reshape(-1, 3)

    @property
    def lam(self):
        return self.block("lam").reshape(-1, 3)


# ------------------------------------------------------------ border plumbing

def _facet_block_inverse(N, sigb):
    """Inverse of the Gamma-restricted normal-trace map, as a sparse matrix
    mapping facet density values to border stress coordinates. The map is
    block diagonal: the trace on a facet involves only that facet's moments."""
    nrows = N.shape[0]
    nt = nrows // 9
    Ncsr = N.tocsr()
    rows, cols, vals = [], [], []
    for f in range(nt):
        gcols = np.unique(Ncsr.indices[Ncsr.indptr[9 * f]:Ncsr.indptr[9 * f + 9]])
        blk = Ncsr[9 * f:9 * f + 9, gcols].toarray()
        binv = np.linalg.inv(blk)
        bpos = np.searchsorted(sigb, gcols)
        r, c = np.meshgrid(bpos, np.arange(9 * f, 9 * f + 9), indexing="ij")
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(binv.ravel())
    return sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nrows, nrows)).tocsr()


def _sparse_skeleton(system):
    """The full system matrix without the dense boundary operators (V, K, W);
    those enter the Schur matrix directly after the density change of basis."""
    names = [n for n, _ in system.layout]
    if system.kind == "JN_NeumannHomog":
        Asp = -(system.N.T @ system.Mtr)
    else:
        Asp = -0.5 * (system.N.T @ system.Mtr)
    blocks = {
        ("sigma", "sigma"): system.Adev, ("sigma", "phi"): Asp,
        ("sigma", "u"): system.D.T, ("sigma", "chi"): system.S.T,
        ("phi", "sigma"): 0.5 * (system.Mtr.T @ system.N),
        ("phi", "rm"): sparse.csr_matrix(system.R.T),
        ("u", "sigma"): system.D, ("chi", "sigma"): system.S,
        ("rm", "phi"): sparse.csr_matrix(system.R),
    }
    if system.T0 is not None:
        blocks[("sigma", "lam")] = system.T0.T
        blocks[("lam", "sigma")] = system.T0
    grid = [[blocks.get((r, c)) for c in names] for r in names]
    return sparse.bmat(grid, format="csr")


def _pin_candidates(system):
    """Tets whose velocity/vorticity dofs may be moved into the border to make
    the interior factorization nonsingular (needed for the kinds whose volume
    block has the rigid-motion kernel)."""
    if system.kind in ("JN_NeumannHomog", "CH_NeumannHomog"):
        nt = len(system.meta["mesh"].tets)
        return [0, nt // 2, None]
    return [None]


def _border_indices(system, pin_tet):
    sl = system.block_slices()
    sigb = np.unique(system.N.indices)
    parts = [sigb, np.arange(sl["phi"].start, sl["phi"].stop)]
    if "lam" in sl:
        parts.append(np.arange(sl["lam"].start, sl["lam"].stop))
    parts.append(np.arange(sl["rm"].start, sl["rm"].stop))
    if pin_tet is not None:
        parts.append(sl["u"].start + 3 * pin_tet + np.arange(3))
        parts.append(sl["chi"].start + 3 * pin_tet + np.arange(3))
    ib = np.concatenate(parts)
    ii = np.setdiff1d(np.arange(system.size), ib, assume_unique=False)
    return ib, ii, sigb


class _Factorization:
    """Interior SuperLU factor plus dense LU of the border Schur complement."""

    def __init__(self, system, cache=None, release_dense=False):
        cache = cache if cache is not None else {}
        last_err = None
        for pin in _pin_candidates(system):
            try:
                self._build(system, pin, cache, release_dense)
                return
            except RuntimeError as err:   # singular interior factor
                last_err = err
        raise RuntimeError(f"interior factorization failed: {last_err}")

    def _build(self, system, pin, cache, release_dense):
        self.system = system
        self.pin_tet = pin
        ib, ii, sigb = _border_indices(system, pin)
        self.ib, self.ii = ib, ii
        nbs = len(sigb)
        self.nbs = nbs
        nb = len(ib)
        self.Nbinv = _facet_block_inverse(system.N, sigb)

        Gs = _sparse_skeleton(system)
        Gb = Gs[ib, :].tocsc()
        A_bi = Gb[:, ii].tocsr()
        A_bb = Gb[:, ib]
        Gi = Gs[ii, :].tocsc()
        A_ii = Gi[:, ii]
        A_ib = Gi[:, ib]
        del Gs, Gb, Gi

        # change the border stress unknowns/equations to the facet density
        T = sparse.block_diag([self.Nbinv, sparse.eye(nb - nbs)], format="csr")
        self.T = T
        A_bi = (T.T @ A_bi).tocsr()
        A_ib = (A_ib @ T).tocsc()
        A_bb = (T.T @ A_bb @ T).tocsr()
        self.A_bi, self.A_ib = A_bi, A_ib

        level = system.meta.get("level")
        key = ("lu_ii", level, system.kind in ("JN_NeumannHomog",
                                               "CH_NeumannHomog"),
               "lam" in dict(system.layout), pin)
        if key in cache:
            self.lu_ii = cache[key]
        else:
            self.lu_ii = splu(A_ii.tocsc())
            cache[key] = self.lu_ii

        skey = ("svol", level, system.kind,
                system.meta.get("trace_ratio"), pin)
        svol = cache.get(skey)
        if svol is not None:
            S = svol.copy()
        else:
            S = A_bb.toarray()
            chunk = max(1, int(SCHUR_CHUNK_BYTES / (8 * len(ii))))
            for c0 in range(0, nb, chunk):
                c1 = min(nb, c0 + chunk)
                X = self.lu_ii.solve(A_ib[:, c0:c1].toarray())
                S[:, c0:c1] -= A_bi @ X
            if nb <= SVOL_CACHE_LIMIT:
                cache[skey] = S.copy()

        # drop the dense boundary operators straight into the Schur matrix
        npjump = 3 * system.meta["phi_surf"].vertices.shape[0]
        tsl, psl = slice(0, nbs), slice(nbs, nbs + npjump)
        if system.V is not None:
            S[tsl, tsl] += system.V
            if release_dense:
                system.V = None
            S[tsl, psl] -= system.K
        S[psl, tsl] += system.K.T
        S[psl, psl] += system.W

        scale = np.abs(S).max()
        self.lu_b = lu_factor(S, overwrite_a=True)
        self.pivot_growth = float(np.abs(self.lu_b[0]).max() / scale)

    def solve(self, rhs):
        rb = self.T.T @ rhs[self.ib]
        ri = rhs[self.ii]
        y = self.lu_ii.solve(ri)
        xb = lu_solve(self.lu_b, rb - self.A_bi @ y)
        xi = self.lu_ii.solve(ri - self.A_ib @ xb)
        x = np.zeros(self.system.size)
        x[self.ii] = xi
        x[self.ib] = self.T @ xb
        return x


def solve_direct(system, cache=None, release_dense=False, refine_tol=1e-11,
                 max_refine=2):
    """Factor and solve the block system; returns (SolutionBundle, SolveReport).

    `cache` may be shared across systems on the same hierarchy to reuse the
    interior factorization (it only depends on level and stress-space variant)
    and, for small systems, the sparse part of the Schur complement.
    `release_dense` lets the factorization absorb the single-layer block to
    cut peak memory on large meshes (the system keeps V = None afterwards).
    """
    t0 = time.perf_counter()
    rhs = system.rhs
    sl = system.block_slices()

    if not np.any(rhs):
        x = np.zeros(system.size)
        bundle = SolutionBundle(system.kind, system.layout, x,
                                meta=dict(system=system))
        rep = SolveReport(residual=0.0, rm_residual=0.0, pivot_growth=0.0,
                          wall_time=time.perf_counter() - t0, border_size=0,
                          refinement_steps=0)
        return bundle, rep

    fact = system.meta.get("_factorization")
    if fact is None:
        fact = _Factorization(system, cache=cache, release_dense=release_dense)
        system.meta["_factorization"] = fact

    x = fact.solve(rhs)
    bnorm = np.linalg.norm(rhs)
    steps = 0
    res = np.linalg.norm(system.matvec(x) - rhs) / bnorm
    while res > refine_tol and steps < max_refine:
        x += fact.solve(rhs - system.matvec(x))
        steps += 1
        res = np.linalg.norm(system.matvec(x) - rhs) / bnorm

    phi = x[sl["phi"]]
    rm_res = float(np.linalg.norm(system.R @ phi)
                   / max(np.linalg.norm(phi), 1e-300))
    bundle = SolutionBundle(system.kind, system.layout, x,
                            meta=dict(system=system))
    rep = SolveReport(residual=float(res), rm_residual=rm_res,
                      pivot_growth=fact.pivot_growth,
                      wall_time=time.perf_counter() - t0,
                      border_size=len(fact.ib), refinement_steps=steps,
                      pinned_tet=fact.pin_tet)
    return bundle, rep


# ------------------------------------------------------------ post-processing

def recover_pressure(system, bundle):
    """Per-tet pressure p = -tr(sigma)/3 (cell average of the linear trace)."""
    space = system.meta["space"]
    nod = space.nodal_values(bundle.sigma)          # (nt, row, vertex, comp)
    tr = np.einsum("tiai->ta", nod)
    return -tr.mean(axis=1) / 3.0


def traction_density(system, bundle):
    """Normal-trace density of the stress on the outer surface, (nt, 3, 3)."""
    return (system.N @ bundle.sigma).reshape(-1, 3, 3)


def eval_exterior(system, bundle, pts):
    """Velocity and pressure of the exterior field at the given points via the
    representation u = -S(traction) + D(phi). Points must lie outside the
    enclosing cube and at least 0.1 local meshsizes away from the surface."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    gamma = system.meta["gamma"]
    b = np.abs(gamma.vertices).max()
    inf_norm = np.abs(pts).max(axis=1)
    if np.any(inf_norm <= b):
        raise ValueError("evaluation points must lie outside the outer surface")
    h = gamma.tri_diameters().max()
    dist = np.linalg.norm(np.maximum(np.abs(pts) - b, 0.0), axis=1)
    if np.any(dist < 0.1 * h):
        raise ValueError("evaluation points closer than 0.1 h to the surface")
    t = traction_density(system, bundle)
    phi = bundle.phi
    phi_surf = system.meta["phi_surf"]
    vel = -pot.eval_single_layer(gamma, t, pts) \
        + pot.eval_double_layer(phi_surf, phi, pts)
    press = -pot.eval_single_layer_pressure(gamma, t, pts) \
        + pot.eval_double_layer_pressure(phi_surf, phi, pts)
    return vel, press


def _vertex_p1_mass(surf):
    nv = surf.vertices.shape[0]
    rows, cols, vals = [], [], []
    for f in range(surf.num_tris):
        tri = surf.tris[f]
        for a in range(3):
            for bq in range(3):
                m = surf.areas[f] / 12.0 * (1.0 + (a == bq))
                for i in range(3):
                    rows.append(3 * tri[a] + i)
                    cols.append(3 * tri[bq] + i)
                    vals.append(m)
    return sparse.coo_matrix((vals, (rows, cols)), shape=(3 * nv, 3 * nv)).tocsr()


def energy_errors(system, bundle, exact, degree=4):
    """Error norms of all solution components against a smooth exact solution.

    `exact` provides velocity(pts), pressure(pts), velocity_gradient(pts),
    stress(pts) and optionally force(pts) (defaults to zero). Volume fields
    are measured in L2; the trace unknown in the hypersingular energy plus
    L2(Gamma); the multiplier in L2 of the coarse inner surface.
    """
    mesh = system.meta["mesh"]
    space = system.meta["space"]
    nod = space.nodal_values(bundle.sigma)
    lam, w = qd.tet_rule(degree)
    vx = mesh.vertices[mesh.tets]
    pts = np.einsum("qa,tak->tqk", lam, vx)          # (nt, q, 3)
    nt = len(mesh.tets)
    flat = pts.reshape(-1, 3)
    sig_ex = np.asarray(exact.stress(flat)).reshape(nt, -1, 3, 3)
    u_ex = np.asarray(exact.velocity(flat)).reshape(nt, -1, 3)
    g_ex = np.asarray(exact.velocity_gradient(flat)).reshape(nt, -1, 3, 3)
    chi_ex = 0.5 * (g_ex - g_ex.transpose(0, 1, 3, 2))
    vols = space.tet_volumes

    sig_h = np.einsum("qa,tiaj->tqij", lam, nod)
    err = sig_h - sig_ex
    sigma_l2 = np.sqrt(np.einsum("t,q,tqij,tqij->", vols, w, err, err))

    # div(sigma_h) is constant per tet; the exact divergence is -force
    div_h = np.einsum("tiak,tak->ti", nod, space.tet_grads)
    f_ex = (np.asarray(exact.force(flat)).reshape(nt, -1, 3)
            if hasattr(exact, "force") else np.zeros((nt, len(w), 3)))
    derr = div_h[:, None, :] + f_ex
    div_l2 = np.sqrt(np.einsum("t,q,tqi,tqi->", vols, w, derr, derr))

    uerr = bundle.u[:, None, :] - u_ex
    u_l2 = np.sqrt(np.einsum("t,q,tqi,tqi->", vols, w, uerr, uerr))
    chi_mat = np.einsum("tk,kij->tij", bundle.chi, SKEW_BASIS)
    cerr = chi_mat[:, None, :, :] - chi_ex
    chi_l2 = np.sqrt(np.einsum("t,q,tqij,tqij->", vols, w, cerr, cerr))

    phi_surf = system.meta["phi_surf"]
    e_phi = bundle.phi.reshape(-1) \
        - np.asarray(exact.velocity(phi_surf.vertices)).reshape(-1)
    Mv = _vertex_p1_mass(phi_surf)
    # the trace density is determined only modulo rigid motions (the
    # multiplier rows fix an arbitrary gauge), so compare in the quotient:
    # remove the L2(Gamma)-orthogonal rigid component of the error
    Z = np.stack(rm_vertex_fields(phi_surf))
    G = Z @ (Mv @ Z.T)
    e_phi = e_phi - Z.T @ np.linalg.solve(G, Z @ (Mv @ e_phi))
    phi_energy = float(np.sqrt(max(e_phi @ (system.W @ e_phi), 0.0))
                       + np.sqrt(e_phi @ (Mv @ e_phi)))

    out = dict(sigma_l2=float(sigma_l2), div_l2=float(div_l2),
               u_l2=float(u_l2), chi_l2=float(chi_l2),
               phi_energy=phi_energy)
    if any(n == "lam" for n, _ in system.layout):
        lam_surf = system.meta["lam_surf"]
        e_lam = bundle.lam.reshape(-1) \
            - np.asarray(exact.velocity(lam_surf.vertices)).reshape(-1)
        Ml = _vertex_p1_mass(lam_surf)
        out["lam_l2"] = float(np.sqrt(e_lam @ (Ml @ e_lam)))
    out["total"] = float(np.sqrt(sum(v * v for v in out.values())))
    return out


# ----------------------------------------------------------------- exporters

def export_vtk(path, system, bundle):
    """Legacy ASCII VTK file with cell velocity, pressure, and vorticity."""
    mesh = system.meta["mesh"]
    p = recover_pressure(system, bundle)
    u = bundle.u
    chi = bundle.chi
    nt = len(mesh.tets)
    nv = len(mesh.vertices)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write("exterior Stokes coupled solution\nASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {nv} double\n")
        for v in mesh.vertices:
            fh.write(f"{v[0]:.16e} {v[1]:.16e} {v[2]:.16e}\n")
        fh.write(f"CELLS {nt} {5 * nt}\n")
        for t in mesh.tets:
            fh.write("4 " + " ".join(str(int(i)) for i in t) + "\n")
        fh.write(f"CELL_TYPES {nt}\n")
        fh.write("\n".join(["10"] * nt) + "\n")
        fh.write(f"CELL_DATA {nt}\n")
        fh.write("VECTORS velocity double\n")
        for row in u:
            fh.write(f"{row[0]:.16e} {row[1]:.16e} {row[2]:.16e}\n")
        fh.write("SCALARS pressure double 1\nLOOKUP_TABLE default\n")
        for val in p:
            fh.write(f"{val:.16e}\n")
        fh.write("VECTORS vorticity double\n")
        for row in chi:
            fh.write(f"{row[0]:.16e} {row[1]:.16e} {row[2]:.16e}\n")


def export_exterior_csv(path, pts, vel, press):
    """CSV table of exterior samples: point, velocity, pressure."""
    header = "x,y,z,ux,uy,uz,p"
    data = np.column_stack([pts, vel, press])
    np.savetxt(path, data, delimiter=",", header=header, comments="",
               fmt="%.16e")
