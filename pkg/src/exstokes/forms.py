"""Block assembly of the coupled interior/boundary formulations.

Four formulation kinds are supported, all sharing the dual-mixed volume blocks
(deviatoric mass, divergence, skew pairing) and differing in the boundary
coupling and in which datum enters the right-hand side:

  JN_NeumannHomog   traction-free inner boundary; single boundary integral
                    equation; the boundary unknown phi lives on a once-
                    coarsened partition of the outer surface (two-mesh rule)
  CH_Dirichlet      velocity datum on the inner boundary; both boundary
                    integral equations (adds the single-layer stress coupling)
  CH_Neumann        traction datum on the inner boundary imposed weakly via a
                    multiplier on a once-coarsened inner-surface partition
  CH_NeumannHomog   traction-free inner boundary, stress space with zero
                    inner normal trace, no multiplier

Unknown layout: [sigma, phi, u, chi, (lambda), 6 rigid-motion multipliers].
The rigid-motion rows pin phi to the zero-mean trace subspace.

Matrix convention: entry (row, col) = form(trial = col basis, test = row
basis). The off-diagonal boundary couplings of the CH kinds are exact negative
transposes of each other, so their symmetric part is block diagonal; the JN
system has no such structure. Observed symmetry is recorded in the manifest.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from . import potentials as pot
from . import spaces as sps
from .geometry import GAMMA, GAMMA0
from .spaces import SKEW_BASIS

KINDS = ("JN_NeumannHomog", "CH_Dirichlet", "CH_Neumann", "CH_NeumannHomog")
DOMAIN_VOLUME = 7.0          # |Omega^-| for the a=0.5, b=1 annulus


@dataclass
class QuadratureOptions:
    sing_order: int = 6
    reg_order: int = 2
    near_order: int = 4
    near_factor: float = 2.0
    volume_degree: int = 4   # cell averaging of callable volume data

    def boundary_kwargs(self):
        return dict(sing_order=self.sing_order, reg_order=self.reg_order,
                    near_order=self.near_order, near_factor=self.near_factor)


@dataclass
class ProblemData:
    f: object = None         # (nt,3) per-tet force or callable(pts)->(n,3)
    gD: object = None        # (nv0,3) vertex values on Gamma0 or callable(pts)
    gN: object = None        # (nt0,3,3) corner densities or callable(pts, n)
    viscosity: float = 0.5


# ------------------------------------------------------------- volume blocks

def assemble_dev_mass(space):
    """Global matrix of int dev(sigma):dev(tau); symmetric PSD, kernel holds
    the interpolant of c*I."""
    nt = len(space.mesh.tets)
    B4 = space.moment_to_nodal.reshape(nt, 4, 3, 12)      # (t, vertex a, comp j, n)
    Mab = (np.ones((4, 4)) + np.eye(4)) / 20.0
    vol = space.tet_volumes
    # int sigma:tau, rows coupled only through the trace term
    G1 = np.einsum("tajn,ab,tbjm->tnm", B4, Mab, B4) * vol[:, None, None]
    G2 = np.einsum("tain,ab,tbjm->tinjm", B4, Mab, B4) * vol[:, None, None, None, None]
    L = np.einsum("ij,tnm->tinjm", np.eye(3), G1) - G2 / 3.0
    dofs = space.all_local_dofs().transpose(0, 3, 1, 2).reshape(nt, 3, 12)
    rows = np.broadcast_to(dofs[:, :, :, None, None], L.shape)
    cols = np.broadcast_to(dofs[:, None, None, :, :], L.shape)
    keep = (rows >= 0) & (cols >= 0)
    A = sparse.coo_matrix((L[keep], (rows[keep], cols[keep])),
                          shape=(space.ndof, space.ndof)).tocsr()
    A.sum_duplicates()
    return A


def assemble_mass(space):
    """Global matrix of int sigma : tau (full tensor L2 mass, SPD)."""
    nt = len(space.mesh.tets)
    B4 = space.moment_to_nodal.reshape(nt, 4, 3, 12)
    Mab = (np.ones((4, 4)) + np.eye(4)) / 20.0
    G1 = np.einsum("tajn,ab,tbjm->tnm", B4, Mab, B4) \
        * space.tet_volumes[:, None, None]
    L = np.einsum("ij,tnm->tinjm", np.eye(3), G1)
    dofs = space.all_local_dofs().transpose(0, 3, 1, 2).reshape(nt, 3, 12)
    rows = np.broadcast_to(dofs[:, :, :, None, None], L.shape)
    cols = np.broadcast_to(dofs[:, None, None, :, :], L.shape)
    keep = (rows >= 0) & (cols >= 0)
    A = sparse.coo_matrix((L[keep], (rows[keep], cols[keep])),
                          shape=(space.ndof, space.ndof)).tocsr()
    A.sum_duplicates()
    return A


def assemble_div_block(space, vel):
    """D[(t,c), sigma-dof] = int e_c . div(sigma) over tet t (exact)."""
    nt = len(space.mesh.tets)
    B4 = space.moment_to_nodal.reshape(nt, 4, 3, 12)
    dvec = np.einsum("tajn,taj->tn", B4, space.tet_grads) \
        * space.tet_volumes[:, None]                      # (nt, 12)
    dofs = space.all_local_dofs().transpose(0, 3, 1, 2).reshape(nt, 3, 12)
    rows = (3 * np.arange(nt)[:, None, None]
            + np.arange(3)[None, :, None]) * np.ones((1, 1, 12), dtype=int)
    vals = np.broadcast_to(dvec[:, None, :], dofs.shape)
    keep = dofs >= 0
    return sparse.coo_matrix((vals[keep], (rows[keep], dofs[keep])),
                             shape=(vel.ndof, space.ndof)).tocsr()


def assemble_skew_block(space, vort):
    """S[(t,k), sigma-dof] = int S_k : sigma over tet t (exact)."""
    nt = len(space.mesh.tets)
    B4 = space.moment_to_nodal.reshape(nt, 4, 3, 12)
    F = B4.sum(axis=1) * (space.tet_volumes[:, None, None] / 4.0)   # (t, j, n)
    vals = np.einsum("kij,tjn->tkin", SKEW_BASIS, F)                # (t,k,i,n)
    dofs = space.all_local_dofs().transpose(0, 3, 1, 2).reshape(nt, 3, 12)
    rows = np.broadcast_to(
        (3 * np.arange(nt)[:, None, None, None]
         + np.arange(3)[None, :, None, None]), vals.shape)
    cols = np.broadcast_to(dofs[:, None, :, :], vals.shape)
    keep = cols >= 0
    return sparse.coo_matrix((vals[keep], (rows[keep], cols[keep])),
                             shape=(vort.ndof, space.ndof)).tocsr()


def assemble_gamma0_trace_block(space, surf0, link):
    """T0[xi-dof, sigma-dof] = <gamma_nu(sigma), xi>_Gamma0 with xi in the P1
    space of the coarse partition described by `link` (exact pairing)."""
    N0 = sps.normal_trace_map(space, surf0)
    M0 = pot.trace_mass(surf0, link=link)
    return (M0.T @ N0).tocsr()


# ---------------------------------------------------------------- the system

@dataclass
class BlockSystem:
    kind: str
    layout: list                 # [(name, size), ...] in unknown order
    Adev: sparse.csr_matrix
    D: sparse.csr_matrix
    S: sparse.csr_matrix
    N: sparse.csr_matrix         # stress -> Gamma facet density
    Mtr: sparse.csr_matrix       # facet density x phi-space pairing on Gamma
    R: np.ndarray                # 6 rigid-motion rows on phi
    W: np.ndarray                # dense, phi x phi
    K: np.ndarray                # dense, Gamma-density x phi
    V: np.ndarray = None         # dense, Gamma-density^2 (CH kinds only)
    T0: sparse.csr_matrix = None           # CH_Neumann only
    rhs: np.ndarray = None
    data_scale: float = 1.0
    meta: dict = field(default_factory=dict)

    # -- layout helpers
    def block_slices(self):
        out, off = {}, 0
        for name, size in self.layout:
            out[name] = slice(off, off + size)
            off += size
        return out

    @property
    def size(self):
        return sum(s for _, s in self.layout)

    def matvec(self, x):
        sl = self.block_slices()
        sig, phi = x[sl["sigma"]], x[sl["phi"]]
        u, chi, mu = x[sl["u"]], x[sl["chi"]], x[sl["rm"]]
        lam = x[sl["lam"]] if "lam" in sl else None
        y = np.zeros_like(x)
        t = self.N @ sig
        half = 0.5 * (self.Mtr @ phi) + self.K @ phi
        # tau rows
        r = self.Adev @ sig + self.D.T @ u + self.S.T @ chi
        if self.kind == "JN_NeumannHomog":
            r += self.N.T @ (-(self.Mtr @ phi))
        else:
            r += self.N.T @ (self.V @ t - half)
        if self.T0 is not None:
            r += self.T0.T @ lam
        y[sl["sigma"]] = r
        # psi rows
        y[sl["phi"]] = 0.5 * (self.Mtr.T @ t) + self.K.T @ t \
            + self.W @ phi + self.R.T @ mu
        # v / eta / xi / rm rows
        y[sl["u"]] = self.D @ sig
        y[sl["chi"]] = self.S @ sig
        if self.T0 is not None:
            y[sl["lam"]] = self.T0 @ sig
        y[sl["rm"]] = self.R @ phi
        return y

    def full_matrix(self):
        """One sparse matrix over the whole layout (small/medium systems; the
        dense boundary blocks are embedded as-is)."""
        names = [n for n, _ in self.layout]
        csr = sparse.csr_matrix
        Asig = self.Adev
        if self.V is not None:
            Asig = Asig + self.N.T @ csr(self.V) @ self.N
        half = csr(0.5 * self.Mtr.toarray() + self.K)
        if self.kind == "JN_NeumannHomog":
            Asp = -(self.N.T @ self.Mtr)
        else:
            Asp = -(self.N.T @ half)
        blocks = {
            ("sigma", "sigma"): Asig, ("sigma", "phi"): Asp,
            ("sigma", "u"): self.D.T, ("sigma", "chi"): self.S.T,
            ("phi", "sigma"): half.T @ self.N, ("phi", "phi"): csr(self.W),
            ("phi", "rm"): csr(self.R.T),
            ("u", "sigma"): self.D, ("chi", "sigma"): self.S,
            ("rm", "phi"): csr(self.R),
        }
        if self.T0 is not None:
            blocks[("sigma", "lam")] = self.T0.T
            blocks[("lam", "sigma")] = self.T0
        grid = [[blocks.get((r, c)) for c in names] for r in names]
        return sparse.bmat(grid, format="csr")

    def manifest(self):
        """Block names, dimensions, nonzeros, and observed symmetry flags."""
        def nnz(M):
            if M is None:
                return 0
            return int(M.nnz) if sparse.issparse(M) else int(np.count_nonzero(M))
        blocks = {
            "dev_mass": dict(shape=list(self.Adev.shape), nnz=nnz(self.Adev)),
            "div": dict(shape=list(self.D.shape), nnz=nnz(self.D)),
            "skew": dict(shape=list(self.S.shape), nnz=nnz(self.S)),
            "normal_trace": dict(shape=list(self.N.shape), nnz=nnz(self.N)),
            "trace_mass": dict(shape=list(self.Mtr.shape), nnz=nnz(self.Mtr)),
            "hypersingular": dict(shape=list(self.W.shape), nnz=nnz(self.W)),
            "double_layer": dict(shape=list(self.K.shape), nnz=nnz(self.K)),
            "rm_rows": dict(shape=list(self.R.shape), nnz=nnz(self.R)),
        }
        if self.V is not None:
            blocks["single_layer"] = dict(shape=list(self.V.shape), nnz=nnz(self.V))
        if self.T0 is not None:
            blocks["gamma0_trace"] = dict(shape=list(self.T0.shape), nnz=nnz(self.T0))
        wsym = float(np.abs(self.W - self.W.T).max() / max(np.abs(self.W).max(), 1e-300))
        sym = dict(W_relative_asymmetry=wsym,
                   # the CH off-diagonal couplings are negative transposes of
                   # each other by construction (positive-definite sign
                   # choice), so only the diagonal blocks carry symmetry
                   offdiagonal_coupling="antisymmetric"
                   if self.kind != "JN_NeumannHomog" else "one-sided")
        if self.V is not None:
            sym["V_relative_asymmetry"] = float(
                np.abs(self.V - self.V.T).max() / np.abs(self.V).max())
        return dict(kind=self.kind,
                    layout=[[n, int(s)] for n, s in self.layout],
                    unknowns=int(self.size),
                    data_scale=self.data_scale,
                    blocks=blocks, symmetry=sym)


# ------------------------------------------------------------- data handling

def _cell_average_force(mesh, f, degree):
    from . import quadrature as qd
    if f is None:
        return np.zeros((len(mesh.tets), 3))
    if callable(f):
        lam, w = qd.tet_rule(degree)
        pts = np.einsum("qm,tmk->tqk", lam, mesh.vertices[mesh.tets])
        vals = np.stack([np.asarray(f(pts[t])) for t in range(len(mesh.tets))])
        return np.einsum("q,tqk->tk", w, vals)
    return np.asarray(f, dtype=float).reshape(len(mesh.tets), 3)


def _vertex_data(surf, g):
    if callable(g):
        return np.asarray(g(surf.vertices), dtype=float)
    return np.asarray(g, dtype=float).reshape(surf.vertices.shape[0], 3)


def _facet_density_data(surf, g):
    if callable(g):
        out = np.empty((surf.num_tris, 3, 3))
        for f in range(surf.num_tris):
            out[f] = g(surf.vertices[surf.tris[f]], surf.normals[f])
        return out
    return np.asarray(g, dtype=float).reshape(surf.num_tris, 3, 3)


# --------------------------------------------------------------- build_system

def build_system(kind, hier, level, data, quad=None, trace_ratio=2):
    """Assemble the coupled block system of the given kind on `hier.mesh(level)`.

    The two-mesh kinds (JN phi-space, CH_Neumann multiplier) use the once-
    coarsened partition at level-1 under the default mesh-ratio policy
    (trace_ratio=2) and therefore require level >= 1 there; trace_ratio=1
    places those fields on the same partition (supported for reporting and
    for the coarsest level, where no coarser partition exists).
    """
    if kind not in KINDS:
        raise ValueError(f"unknown formulation kind: {kind}")
    if trace_ratio not in (1, 2):
        raise ValueError("trace_ratio must be 1 or 2")
    quad = quad or QuadratureOptions()
    mesh = hier.mesh(level)
    gamma = hier.surface(GAMMA, level)
    gamma0 = hier.surface(GAMMA0, level)
    homog = kind in ("JN_NeumannHomog", "CH_NeumannHomog")
    space = sps.StressSpace(mesh, homogeneous_gamma0=homog)
    vel = sps.VelocitySpace(mesh)
    vort = sps.VorticitySpace(mesh)

    # boundary-unknown partition: JN defaults to the coarser trace mesh
    if kind == "JN_NeumannHomog" and trace_ratio == 2:
        if level < 1:
            raise ValueError("mesh-ratio policy requires level >= 1 (the "
                             "boundary unknown lives on the coarser surface)")
        phi_surf = hier.surface(GAMMA, level - 1)
        link = pot.SurfaceLink(gamma, phi_surf)
    else:
        phi_surf = gamma
        link = None
    if kind == "CH_Neumann" and trace_ratio == 2 and level < 1:
        raise ValueError("the traction multiplier requires level >= 1 "
                         "(once-coarsened inner-surface partition)")
    if kind == "CH_Dirichlet" and data.gD is None:
        raise ValueError("CH_Dirichlet requires the gD datum")
    if kind == "CH_Neumann" and data.gN is None:
        raise ValueError("CH_Neumann requires the gN datum")

    # rescale data to the mu = 1/2 convention
    scale = 1.0 / (2.0 * data.viscosity)

    Adev = assemble_dev_mass(space)
    D = assemble_div_block(space, vel)
    S = assemble_skew_block(space, vort)
    N = sps.normal_trace_map(space, gamma)
    bk = quad.boundary_kwargs()
    W = pot.assemble_W(gamma, link=link, **bk)
    K = pot.assemble_K(gamma, link=link, **bk)
    Mtr = pot.trace_mass(gamma, link=link)
    V = None if kind == "JN_NeumannHomog" else pot.assemble_V(gamma, **bk)
    R = sps.rm_constraint_rows(phi_surf)

    T0 = None
    nlam = 0
    if kind == "CH_Neumann":
        if trace_ratio == 2:
            lam_surf = hier.surface(GAMMA0, level - 1)
            link0 = pot.SurfaceLink(gamma0, lam_surf)
        else:
            lam_surf = gamma0
            link0 = None
        T0 = assemble_gamma0_trace_block(space, gamma0, link0)
        nlam = T0.shape[0]

    layout = [("sigma", space.ndof), ("phi", 3 * phi_surf.vertices.shape[0]),
              ("u", vel.ndof), ("chi", vort.ndof)]
    if T0 is not None:
        layout.append(("lam", nlam))
    layout.append(("rm", 6))

    sys = BlockSystem(kind=kind, layout=layout, Adev=Adev, D=D, S=S, N=N,
                      Mtr=Mtr, R=R, W=W, K=K, V=V, T0=T0, data_scale=scale)
    sys.meta = dict(mesh=mesh, hier=hier, level=level, space=space, vel=vel,
                    vort=vort, gamma=gamma, gamma0=gamma0, phi_surf=phi_surf,
                    link=link, quad=quad, trace_ratio=trace_ratio,
                    lam_surf=lam_surf if kind == "CH_Neumann" else None)

    # right-hand side
    rhs = np.zeros(sys.size)
    sl = sys.block_slices()
    fvals = _cell_average_force(mesh, data.f, quad.volume_degree) * scale
    rhs[sl["u"]] = -(space.tet_volumes[:, None] * fvals).reshape(-1)
    if kind == "CH_Dirichlet":
        gD = _vertex_data(gamma0, data.gD)          # velocity datum: no scale
        N0 = sps.normal_trace_map(space, gamma0)
        M0 = pot.trace_mass(gamma0)
        rhs[sl["sigma"]] += -(N0.T @ (M0 @ gD.reshape(-1)))
    if kind == "CH_Neumann":
        gN = _facet_density_data(gamma0, data.gN).reshape(-1) * scale
        M0c = pot.trace_mass(gamma0, link=link0)
        rhs[sl["lam"]] = M0c.T @ gN
    sys.rhs = rhs
    return sys


# ---------------------------------------------------------------- T-transform

def tilde_psi(surf):
    """Normalized trace-space element with positive pairing against the
    normal: P1 interpolant of the vertex-averaged facet normals, minus its
    rigid-motion projection."""
    nv = surf.vertices.shape[0]
    acc = np.zeros((nv, 3))
    cnt = np.zeros(nv)
    for f in range(surf.num_tris):
        for c in surf.tris[f]:
            acc[c] += surf.normals[f]
            cnt[c] += 1
    psi = (acc / cnt[:, None]).reshape(-1)
    # remove the L2(Gamma) rigid-motion component
    zs = np.stack(sps.rm_vertex_fields(surf), axis=1)   # (3nv, 6)
    R = sps.rm_constraint_rows(surf)
    G = R @ zs
    psi = psi - zs @ np.linalg.solve(G, R @ psi)
    return psi


def t_transform(system, deltas=None):
    """Shear map T(sigma, phi) = (sigma, phi + delta c(sigma) psi~) for the
    velocity-datum formulation; delta is the first scan value making the
    symmetric part of A o T positive definite on the discrete B-kernel.

    Returns (delta, T_matrix_factors, report); raises if no delta works.
    """
    if system.kind != "CH_Dirichlet":
        raise ValueError("the shear transform applies to the velocity-datum kind")
    if deltas is None:
        deltas = [2.0 ** (-p) for p in range(10, -1, -1)]
    sl = system.block_slices()
    space = system.meta["space"]
    psi = tilde_psi(system.meta["phi_surf"])
    cvec = space.trace_integral_vector() / (3.0 * DOMAIN_VOLUME)

    # discrete B-kernel basis over (sigma, phi): B acts on sigma only, so the
    # kernel is (null(B_sigma) x phi-space with the rigid-motion rows)
    A = system.full_matrix().toarray()
    x_sl = [sl["sigma"], sl["phi"]]
    nx = sum(s.stop - s.start for s in x_sl)
    B = np.vstack([A[sl["u"], : nx], A[sl["chi"], : nx], A[sl["rm"], : nx]])
    if "lam" in sl:
        B = np.vstack([B, A[sl["lam"], : nx]])
    _, sv, Vt = np.linalg.svd(B, full_matrices=True)
    rank = int((sv > 1e-10 * sv[0]).sum())
    Z = Vt[rank:].T                                  # kernel basis columns
    Axx = A[: nx, : nx]
    ns = space.ndof
    cfull = np.concatenate([cvec, np.zeros(nx - ns)])
    report = {"scanned": [], "delta": None}
    for d in deltas:
        # quadratic form a(x, Tx) = x^t (T^t A) x with the shear on the test
        TA = Axx + d * np.outer(cfull, psi @ Axx[ns:, :])
        Sy = Z.T @ (0.5 * (TA + TA.T)) @ Z
        emin = float(np.linalg.eigvalsh(Sy)[0])
        report["scanned"].append((d, emin))
        if emin > 0:
            report["delta"] = d
            return d, (cvec, psi), report
    raise RuntimeError(f"no positive delta in scan range: {report['scanned']}")
