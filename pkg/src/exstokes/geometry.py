"""Tetrahedral annulus meshes, uniform refinement, surface extraction, MSH I/O.

The computational domain is a cube annulus: an inner cube (the cavity, boundary
Gamma0) removed from an outer cube (exterior boundary Gamma). Tets come from a
Kuhn/Freudenthal split of an axis-aligned box grid, which is conforming across
cells and self-similar under midpoint refinement, so the mesh size h halves
exactly per level.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# boundary tags (also the MSH physical tags)
GAMMA0 = 1  # inner boundary, between the cavity and the annulus
GAMMA = 2   # outer boundary, between the annulus and the exterior


@dataclass
class TetMesh:
    vertices: np.ndarray          # (nv, 3) float64
    tets: np.ndarray              # (nt, 4) int64, positively oriented
    boundary_facets: np.ndarray   # (nb, 3) int64, oriented outward w.r.t. the annulus
    boundary_tags: np.ndarray     # (nb,) int64

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_tets(self):
        return self.tets.shape[0]

    def tet_volumes(self):
        v = self.vertices
        t = self.tets
        a = v[t[:, 1]] - v[t[:, 0]]
        b = v[t[:, 2]] - v[t[:, 0]]
        c = v[t[:, 3]] - v[t[:, 0]]
        return np.einsum("ij,ij->i", np.cross(a, b), c) / 6.0

    def volume(self):
        return float(self.tet_volumes().sum())


@dataclass
class SurfaceMesh:
    """Oriented triangulated closed surface.

    Normals follow the transmission convention: on Gamma they point out of the
    annulus (into the exterior), on Gamma0 they point out of the cavity (into
    the annulus). For the centered cube annulus both point away from the origin.
    """

    vertices: np.ndarray       # (nv, 3) compacted
    tris: np.ndarray           # (nt, 3) oriented: cross(v1-v0, v2-v0) ~ normal
    tag: int
    volume_vertex_ids: np.ndarray  # (nv,) indices into the parent TetMesh
    volume_facet_ids: np.ndarray   # (nt,) indices into mesh.boundary_facets
    normals: np.ndarray = field(init=False)
    areas: np.ndarray = field(init=False)

    def __post_init__(self):
        v = self.vertices
        t = self.tris
        cr = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        nrm = np.linalg.norm(cr, axis=1)
        self.areas = 0.5 * nrm
        self.normals = cr / nrm[:, None]

    @property
    def num_tris(self):
        return self.tris.shape[0]

    def area(self):
        return float(self.areas.sum())

    def centroid(self):
        # area-weighted surface centroid
        mids = self.vertices[self.tris].mean(axis=1)
        return (self.areas[:, None] * mids).sum(axis=0) / self.areas.sum()

    def tri_diameters(self):
        v = self.vertices[self.tris]
        e = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 1], v[:, 0] - v[:, 2]])
        return np.linalg.norm(e, axis=2).max(axis=0)


def _axis_breakpoints(a, b, level):
    n = 2 ** level
    left = np.linspace(-b, -a, n + 1)
    mid = np.linspace(-a, a, n + 1)
    right = np.linspace(a, b, n + 1)
    return np.concatenate([left, mid[1:], right[1:]])

# Kuhn split of the unit cell: 6 path tets, one per axis permutation.
_KUHN_PATHS = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]


def build_cube_annulus(a=0.5, b=1.0, level=0):
    """Structured tet mesh of [-b,b]^3 minus the open inner cube [-a,a]^3.

    Level 0 has 3 grid intervals per axis (the middle one is the cavity), so
    Gamma0 carries 12 triangles; each level halves h exactly.
    """
    if not (0.0 < a < b):
        raise ValueError("need 0 < a < b")
    if level < 0:
        raise ValueError("level must be >= 0")
    pts = _axis_breakpoints(a, b, level)
    n = len(pts) - 1                      # cells per axis
    nin = 2 ** level                      # cavity cells per axis
    lo, hi = (n - nin) // 2, (n + nin) // 2

    nv1 = n + 1
    X, Y, Z = np.meshgrid(pts, pts, pts, indexing="ij")
    vertices = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    def vid(i, j, k):
        return (i * nv1 + j) * nv1 + k

    I, J, K = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    inside = ((I >= lo) & (I < hi) & (J >= lo) & (J < hi) & (K >= lo) & (K < hi))
    ci, cj, ck = I[~inside], J[~inside], K[~inside]

    tets = []
    for perm in _KUHN_PATHS:
        steps = np.zeros((4, 3), dtype=np.int64)
        for s, axis in enumerate(perm):
            steps[s + 1] = steps[s]
            steps[s + 1, axis] += 1
        corners = [vid(ci + d[0], cj + d[1], ck + d[2]) for d in steps]
        tets.append(np.stack(corners, axis=1))
    tets = np.concatenate(tets, axis=0)

    # normalize orientation (positive volume)
    vol6 = np.einsum("ij,ij->i",
                     np.cross(vertices[tets[:, 1]] - vertices[tets[:, 0]],
                              vertices[tets[:, 2]] - vertices[tets[:, 0]]),
                     vertices[tets[:, 3]] - vertices[tets[:, 0]])
    flip = vol6 < 0
    tets[flip, 2], tets[flip, 3] = tets[flip, 3].copy(), tets[flip, 2].copy()

    bf, bt = _boundary_facets_from_tets(vertices, tets)
    tags = _tag_facets_cube_annulus(vertices, bf, a, b)
    return TetMesh(vertices, tets, bf, tags)


# local facets of a tet, oriented outward for a positively oriented tet
_TET_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])


def _boundary_facets_from_tets(vertices, tets):
    faces = tets[:, _TET_FACES].reshape(-1, 3)        # (4*nt, 3) outward oriented
    key = np.sort(faces, axis=1)
    uniq, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    rows = np.where(counts[inv] == 1)[0]
    return faces[rows], rows


def _tag_facets_cube_annulus(vertices, facets, a, b):
    pts = vertices[facets]
    tags = np.empty(len(facets), dtype=np.int64)
    # a facet lies on a coordinate plane; outer if that plane is |coord| = b
    outer = np.zeros(len(facets), dtype=bool)
    inner = np.zeros(len(facets), dtype=bool)
    for axis in range(3):
        const = np.abs(pts[:, 0, axis] - pts[:, 1, axis]) < 1e-12
        const &= np.abs(pts[:, 0, axis] - pts[:, 2, axis]) < 1e-12
        val = np.abs(pts[:, 0, axis])
        outer |= const & (np.abs(val - b) < 1e-12)
        inner |= const & (np.abs(val - a) < 1e-12)
    if not (outer | inner).all():
        raise ValueError("untaggable boundary facet (not on |x_i| = a or b)")
    tags[outer] = GAMMA
    tags[inner] = GAMMA0
    return tags


def _edge_midpoint_ids(vertices, pairs):
    """Unique-ify edge midpoints; returns (new vertex array, midpoint id per pair)."""
    key = np.sort(pairs, axis=1)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    mids = 0.5 * (vertices[uniq[:, 0]] + vertices[uniq[:, 1]])
    base = len(vertices)
    return np.vstack([vertices, mids]), base + inv


def refine_uniform(mesh: TetMesh) -> TetMesh:
    """Red refinement: every tet into 8 children (corner tets + octahedron split
    along its shortest diagonal), every boundary facet into 4 children that
    partition it. h halves exactly on the structured annulus."""
    t = mesh.tets
    nt = len(t)
    # the 6 edges of a tet, fixed order
    epairs = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])
    all_edges = t[:, epairs].reshape(-1, 2)
    verts, mid = _edge_midpoint_ids(mesh.vertices, all_edges)
    m = mid.reshape(nt, 6)     # m01,m02,m03,m12,m13,m23
    m01, m02, m03, m12, m13, m23 = (m[:, i] for i in range(6))

    corner = [
        np.stack([t[:, 0], m01, m02, m03], axis=1),
        np.stack([t[:, 1], m01, m12, m13], axis=1),
        np.stack([t[:, 2], m02, m12, m23], axis=1),
        np.stack([t[:, 3], m03, m13, m23], axis=1),
    ]

    def d2(i, j):
        d = verts[i] - verts[j]
        return np.einsum("ij,ij->i", d, d)

    diag = np.stack([d2(m01, m23), d2(m02, m13), d2(m03, m12)], axis=1)
    choice = np.argmin(diag, axis=1)
    # equatorial cycles around each diagonal
    cycles = {0: (m02, m03, m13, m12), 1: (m01, m03, m23, m12), 2: (m01, m02, m23, m13)}
    diags = {0: (m01, m23), 1: (m02, m13), 2: (m03, m12)}
    octa = [np.empty((nt, 4), dtype=np.int64) for _ in range(4)]
    for c in range(3):
        sel = choice == c
        da, db = diags[c]
        cyc = cycles[c]
        for k in range(4):
            q = np.stack([da, db, cyc[k], cyc[(k + 1) % 4]], axis=1)
            octa[k][sel] = q[sel]

    children = np.stack(corner + octa, axis=1).reshape(-1, 4)
    vol6 = np.einsum("ij,ij->i",
                     np.cross(verts[children[:, 1]] - verts[children[:, 0]],
                              verts[children[:, 2]] - verts[children[:, 0]]),
                     verts[children[:, 3]] - verts[children[:, 0]])
    flip = vol6 < 0
    children[flip, 2], children[flip, 3] = children[flip, 3].copy(), children[flip, 2].copy()

    # boundary facets: 4 children each, grouped by parent (contract used by
    # surface hierarchies: child k of facet f sits at index 4 f + k)
    bf = mesh.boundary_facets
    fpairs = np.array([[0, 1], [0, 2], [1, 2]])
    fedges = bf[:, fpairs].reshape(-1, 2)
    # reuse the same midpoint ids: all boundary edges are tet edges
    key = np.sort(fedges, axis=1)
    tkey = np.sort(all_edges, axis=1)
    uniq, inv = np.unique(tkey, axis=0, return_inverse=True)
    lookup = {(int(u[0]), int(u[1])): len(mesh.vertices) + k for k, u in enumerate(uniq)}
    fm = np.array([lookup[(int(e[0]), int(e[1]))] for e in key]).reshape(-1, 3)
    i, j, k = bf[:, 0], bf[:, 1], bf[:, 2]
    mij, mik, mjk = fm[:, 0], fm[:, 1], fm[:, 2]
    fchildren = np.stack([
        np.stack([i, mij, mik], axis=1),
        np.stack([mij, j, mjk], axis=1),
        np.stack([mik, mjk, k], axis=1),
        np.stack([mij, mjk, mik], axis=1),
    ], axis=1).reshape(-1, 3)
    ftags = np.repeat(mesh.boundary_tags, 4)
    return TetMesh(verts, children, fchildren, ftags)


def mesh_diameter(mesh: TetMesh) -> float:
    """Max circumscribed (circumsphere) diameter over tets."""
    v = mesh.vertices[mesh.tets]
    a = v[:, 1] - v[:, 0]
    b = v[:, 2] - v[:, 0]
    c = v[:, 3] - v[:, 0]
    A = np.stack([a, b, c], axis=1)
    rhs = 0.5 * np.stack([np.einsum("ij,ij->i", a, a),
                          np.einsum("ij,ij->i", b, b),
                          np.einsum("ij,ij->i", c, c)], axis=1)
    ctr = np.linalg.solve(A, rhs[:, :, None])[:, :, 0]
    return float(2.0 * np.linalg.norm(ctr, axis=1).max())


def extract_surface(mesh: TetMesh, tag: int) -> SurfaceMesh:
    """Extract the tagged boundary as an oriented SurfaceMesh.

    Boundary facets are stored oriented outward w.r.t. the annulus; Gamma keeps
    that orientation, Gamma0 is flipped so its normal leaves the cavity.
    """
    sel = np.where(mesh.boundary_tags == tag)[0]
    if len(sel) == 0:
        raise ValueError(f"no boundary facets with tag {tag}")
    tris = mesh.boundary_facets[sel].copy()
    if tag == GAMMA0:
        tris = tris[:, [0, 2, 1]]
    used = np.unique(tris)
    remap = np.full(mesh.num_vertices, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return SurfaceMesh(mesh.vertices[used], remap[tris], tag, used, sel)


class MeshHierarchy:
    """Nested mesh levels via uniform refinement, with surface extraction.

    Level l+1 is refine_uniform of level l; surface triangle c at level l+1 is
    a child of triangle c // 4 at level l.
    """

    def __init__(self, base: TetMesh, num_levels: int):
        if num_levels < 1:
            raise ValueError("need at least one level")
        self.meshes = [base]
        for _ in range(num_levels - 1):
            self.meshes.append(refine_uniform(self.meshes[-1]))
        self._surfaces = {}

    def __len__(self):
        return len(self.meshes)

    def mesh(self, level):
        return self.meshes[level]

    def surface(self, tag, level):
        k = (tag, level)
        if k not in self._surfaces:
            self._surfaces[k] = extract_surface(self.meshes[level], tag)
        return self._surfaces[k]

    def diameters(self):
        return [mesh_diameter(m) for m in self.meshes]


# ---------------------------------------------------------------------------
# MSH v2 ASCII subset: nodes, tets (type 4), tagged boundary triangles (type 2)

def write_msh(mesh: TetMesh, path):
    lines = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat"]
    lines += ["$PhysicalNames", "2",
              f'2 {GAMMA0} "GammaInner"', f'2 {GAMMA} "GammaOuter"',
              "$EndPhysicalNames"]
    lines.append("$Nodes")
    lines.append(str(mesh.num_vertices))
    for i, p in enumerate(mesh.vertices, start=1):
        lines.append(f"{i} {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}")
    lines.append("$EndNodes")
    lines.append("$Elements")
    nb = len(mesh.boundary_facets)
    lines.append(str(nb + mesh.num_tets))
    eid = 1
    for f, tg in zip(mesh.boundary_facets, mesh.boundary_tags):
        lines.append(f"{eid} 2 2 {tg} {tg} {f[0]+1} {f[1]+1} {f[2]+1}")
        eid += 1
    for t in mesh.tets:
        lines.append(f"{eid} 4 2 0 0 {t[0]+1} {t[1]+1} {t[2]+1} {t[3]+1}")
        eid += 1
    lines.append("$EndElements")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_msh(path) -> TetMesh:
    with open(path) as fh:
        tokens = fh.read().split("\n")
    it = iter(tokens)
    nodes = {}
    tets = []
    tris = []
    tri_tags = []
    for line in it:
        s = line.strip()
        if s == "$MeshFormat":
            ver = next(it).split()
            if not ver[0].startswith("2"):
                raise ValueError(f"unsupported MSH version {ver[0]}")
        elif s == "$Nodes":
            n = int(next(it))
            for _ in range(n):
                parts = next(it).split()
                nodes[int(parts[0])] = [float(parts[1]), float(parts[2]), float(parts[3])]
        elif s == "$Elements":
            n = int(next(it))
            for _ in range(n):
                parts = [int(p) for p in next(it).split()]
                etype, ntags = parts[1], parts[2]
                tags = parts[3:3 + ntags]
                conn = parts[3 + ntags:]
                if etype == 2:
                    tris.append(conn)
                    tri_tags.append(tags[0] if tags else 0)
                elif etype == 4:
                    tets.append(conn)
                else:
                    raise ValueError(f"unsupported element type {etype}")
    if not tets:
        raise ValueError("no tetrahedra in file")
    ids = sorted(nodes)
    remap = {nid: i for i, nid in enumerate(ids)}
    vertices = np.array([nodes[nid] for nid in ids])
    tets = np.array([[remap[v] for v in t] for t in tets], dtype=np.int64)
    vol6 = np.einsum("ij,ij->i",
                     np.cross(vertices[tets[:, 1]] - vertices[tets[:, 0]],
                              vertices[tets[:, 2]] - vertices[tets[:, 0]]),
                     vertices[tets[:, 3]] - vertices[tets[:, 0]])
    flip = vol6 < 0
    tets[flip, 2], tets[flip, 3] = tets[flip, 3].copy(), tets[flip, 2].copy()

    bf, _ = _boundary_facets_from_tets(vertices, tets)
    bkey = {tuple(sorted(f)): i for i, f in enumerate(bf)}
    tags = np.zeros(len(bf), dtype=np.int64)
    for conn, tg in zip(tris, tri_tags):
        k = tuple(sorted(remap[v] for v in conn))
        if k not in bkey:
            raise ValueError("tagged triangle is not a boundary facet")
        tags[bkey[k]] = tg
    if (tags == 0).any():
        raise ValueError("untagged boundary facets present")
    return TetMesh(vertices, tets, bf, tags)
