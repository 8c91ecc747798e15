"""Tetrahedral mesh container, adjacency, and sparse differential operators.

The mesh is the volumetric domain every solve runs on. Vertices carry tags
(skin, bone_surface, open_boundary), tets carry an optional bone marker.
All operators are first-order FEM on the piecewise-linear interpolant:
gradient, lumped per-tet mass, isotropic and tensor-weighted stiffness.
"""

import json

import numpy as np
from scipy import sparse

from .errors import ParseError, StructuralError

_FACE_LOCAL = ((1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1))  # face i opposite vertex i

# Barycentric containment tolerance: face-straddling points must land in
# exactly one tet deterministically (lowest tet id wins on ties).
CONTAINMENT_EPS = 1e-9


def _mask(n, ids):
    m = np.zeros(n, dtype=bool)
    ids = np.asarray(list(ids), dtype=np.int64)
    if ids.size:
        if ids.min() < 0 or ids.max() >= n:
            raise StructuralError("tagged vertex id out of range")
        m[ids] = True
    return m


class TetMesh:
    """Immutable tetrahedral mesh with adjacency and tag bookkeeping.

    Parameters
    ----------
    vertices : (n, 3) float array
        Vertex positions in model units.
    tets : (m, 4) int array
        Vertex indices per tetrahedron. Negative-volume tets are repaired
        by swapping two indices.
    skin_vertices, bone_surface_vertices, open_boundary_vertices : iterable of int
        Tag index sets (all optional).
    bone_tet_ids : iterable of int
        Tets belonging to bone geometry.

    Attributes
    ----------
    face_adjacency : (m, 4) int array
        Neighbor tet across face k (face k is opposite vertex k), -1 on
        the boundary.
    """

    def __init__(self, vertices, tets, skin_vertices=(), bone_surface_vertices=(),
                 open_boundary_vertices=(), bone_tet_ids=()):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.tets = np.ascontiguousarray(tets, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise StructuralError("vertices must be (n, 3)")
        if self.tets.ndim != 2 or self.tets.shape[1] != 4:
            raise StructuralError("tets must be (m, 4)")
        if self.tets.size and (self.tets.min() < 0 or self.tets.max() >= len(self.vertices)):
            raise StructuralError("tet index out of range")

        self._reorient()

        n = len(self.vertices)
        self.skin_mask = _mask(n, skin_vertices)
        self.bone_surface_mask = _mask(n, bone_surface_vertices)
        self.open_boundary_mask = _mask(n, open_boundary_vertices)
        self.bone_tet_ids = np.asarray(sorted(set(int(i) for i in bone_tet_ids)), dtype=np.int64)
        if self.bone_tet_ids.size and (self.bone_tet_ids.min() < 0
                                       or self.bone_tet_ids.max() >= len(self.tets)):
            raise StructuralError("bone tet id out of range")

        self.face_adjacency = self._build_adjacency()

        # provenance maps filled in by remove_bone_tets for round-tripping
        self.orig_vertex_ids = None
        self.orig_tet_ids = None

        self._volumes = None
        self._bary_mats = None
        self._grid = None
        self._boundary_faces = None
        self._mean_edge = None

    # ------------------------------------------------------------------
    # construction helpers

    def _reorient(self):
        v = self.vertices
        t = self.tets
        if not len(t):
            return
        vol = _signed_volumes(v, t)
        flip = vol < 0
        if np.any(flip):
            t[flip] = t[flip][:, [0, 1, 3, 2]]

    def _build_adjacency(self):
        m = len(self.tets)
        adj = np.full((m, 4), -1, dtype=np.int64)
        owners = {}
        for ti in range(m):
            tet = self.tets[ti]
            for k in range(4):
                key = tuple(sorted(tet[j] for j in _FACE_LOCAL[k]))
                owners.setdefault(key, []).append((ti, k))
        for key, inc in owners.items():
            if len(inc) > 2:
                raise StructuralError(f"non-manifold face {key}: {len(inc)} incident tets")
            if len(inc) == 2:
                (a, ka), (b, kb) = inc
                adj[a, ka] = b
                adj[b, kb] = a
        return adj

    # ------------------------------------------------------------------
    # derived quantities

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_tets(self):
        return len(self.tets)

    @property
    def volumes(self):
        """Per-tet signed volumes (positive after construction)."""
        if self._volumes is None:
            self._volumes = _signed_volumes(self.vertices, self.tets)
        return self._volumes

    @property
    def total_volume(self):
        return float(self.volumes.sum())

    @property
    def mean_edge_length(self):
        if self._mean_edge is None:
            e = _unique_edges(self.tets)
            d = np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)
            self._mean_edge = float(d.mean()) if len(d) else 0.0
        return self._mean_edge

    @property
    def bbox(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def bbox_diagonal(self):
        lo, hi = self.bbox
        return float(np.linalg.norm(hi - lo))

    def boundary_faces(self):
        """List of (tet_id, face_index) pairs with no neighbor."""
        if self._boundary_faces is None:
            ti, fi = np.nonzero(self.face_adjacency == -1)
            self._boundary_faces = list(zip(ti.tolist(), fi.tolist()))
        return self._boundary_faces

    def face_vertices(self, tet_id, face_index):
        """Outward-ordered vertex ids of a tet face."""
        tet = self.tets[tet_id]
        return tuple(int(tet[j]) for j in _FACE_LOCAL[face_index])

    def barycentric_matrices(self):
        """Per-tet 3x3 inverse edge matrices, cached for point queries."""
        if self._bary_mats is None:
            v = self.vertices
            t = self.tets
            D = np.stack([v[t[:, 1]] - v[t[:, 0]],
                          v[t[:, 2]] - v[t[:, 0]],
                          v[t[:, 3]] - v[t[:, 0]]], axis=2)  # columns are edges
            self._bary_mats = np.linalg.inv(D)
        return self._bary_mats

    def barycentric(self, tet_id, p):
        """Barycentric coordinates of p in the given tet (4-vector)."""
        t = self.tets[tet_id]
        inv = self.barycentric_matrices()[tet_id]
        loc = inv @ (np.asarray(p, dtype=np.float64) - self.vertices[t[0]])
        return np.array([1.0 - loc.sum(), loc[0], loc[1], loc[2]])

    # ------------------------------------------------------------------
    # point location

    def _point_grid(self):
        if self._grid is None:
            self._grid = _UniformGrid(self)
        return self._grid

    def locate(self, p, eps=CONTAINMENT_EPS):
        """Find the tet containing point p.

        Returns (tet_id, barycentric 4-vector) or None if outside the
        domain. On face-straddling ties the lowest tet id wins.
        """
        return self._point_grid().locate(np.asarray(p, dtype=np.float64), eps)

    def locate_brute_force(self, p, eps=CONTAINMENT_EPS):
        """Exhaustive scan over all tets; test oracle for locate()."""
        p = np.asarray(p, dtype=np.float64)
        for ti in range(self.n_tets):
            b = self.barycentric(ti, p)
            if b.min() >= -eps and b.max() <= 1.0 + eps:
                return ti, b
        return None


class _UniformGrid:
    """Coarse uniform grid over tet bounding boxes for point location."""

    def __init__(self, mesh, target_cells=48):
        self.mesh = mesh
        lo, hi = mesh.bbox
        span = np.maximum(hi - lo, 1e-12)
        n = max(1, int(round(target_cells * (mesh.n_tets / 48.0) ** (1.0 / 3.0))))
        n = min(max(n, 1), 64)
        self.lo = lo
        self.res = np.full(3, n, dtype=np.int64)
        self.cell = span / self.res
        self.table = {}
        v = mesh.vertices
        for ti in range(mesh.n_tets):
            pts = v[mesh.tets[ti]]
            c0 = self._cell_of(pts.min(axis=0))
            c1 = self._cell_of(pts.max(axis=0))
            for i in range(c0[0], c1[0] + 1):
                for j in range(c0[1], c1[1] + 1):
                    for k in range(c0[2], c1[2] + 1):
                        self.table.setdefault((i, j, k), []).append(ti)

    def _cell_of(self, p):
        c = np.floor((p - self.lo) / self.cell).astype(np.int64)
        return np.clip(c, 0, self.res - 1)

    def locate(self, p, eps):
        key = tuple(self._cell_of(p))
        best = None
        for ti in self.table.get(key, ()):
            b = self.mesh.barycentric(ti, p)
            if b.min() >= -eps and b.max() <= 1.0 + eps:
                if best is None or ti < best[0]:
                    best = (ti, b)
        return best


# ----------------------------------------------------------------------
# io

def load_tetmesh(node_path, ele_path, tags_path=None):
    """Load a mesh from TetGen-style .node/.ele files plus a JSON tag sidecar.

    Indices in the .ele file may be 0- or 1-based; the base is detected
    from the first node id. Negative-volume tets are reoriented.
    """
    verts, base = _parse_node(node_path)
    tets = _parse_ele(ele_path, len(verts), base)
    tags = {}
    if tags_path is not None:
        with open(tags_path) as fh:
            tags = json.load(fh)
    return TetMesh(
        verts, tets,
        skin_vertices=tags.get("skin_vertices", ()),
        bone_surface_vertices=tags.get("bone_surface_vertices", ()),
        open_boundary_vertices=tags.get("open_boundary_vertices", ()),
        bone_tet_ids=tags.get("bone_tets", ()),
    )


def save_tetmesh(mesh, node_path, ele_path, tags_path=None):
    """Write TetGen-style .node/.ele (0-based) and an optional tag sidecar."""
    with open(node_path, "w") as fh:
        fh.write(f"{mesh.n_vertices} 3 0 0\n")
        for i, p in enumerate(mesh.vertices):
            fh.write(f"{i} {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
    with open(ele_path, "w") as fh:
        fh.write(f"{mesh.n_tets} 4 0\n")
        for i, t in enumerate(mesh.tets):
            fh.write(f"{i} {t[0]} {t[1]} {t[2]} {t[3]}\n")
    if tags_path is not None:
        tags = {
            "skin_vertices": np.nonzero(mesh.skin_mask)[0].tolist(),
            "bone_surface_vertices": np.nonzero(mesh.bone_surface_mask)[0].tolist(),
            "open_boundary_vertices": np.nonzero(mesh.open_boundary_mask)[0].tolist(),
            "bone_tets": mesh.bone_tet_ids.tolist(),
        }
        with open(tags_path, "w") as fh:
            json.dump(tags, fh, indent=1, sort_keys=True)
            fh.write("\n")


def _parse_node(path):
    with open(path) as fh:
        lines = fh.readlines()
    header = None
    rows = []
    first_id = None
    for ln, raw in enumerate(lines, start=1):
        s = raw.split("#", 1)[0].strip()
        if not s:
            continue
        parts = s.split()
        if header is None:
            try:
                count = int(parts[0])
            except ValueError:
                raise ParseError(path, ln, "bad .node header") from None
            header = count
            continue
        if len(parts) < 4:
            raise ParseError(path, ln, "node line needs id x y z")
        try:
            nid = int(parts[0])
            xyz = [float(parts[1]), float(parts[2]), float(parts[3])]
        except ValueError:
            raise ParseError(path, ln, "malformed node line") from None
        if first_id is None:
            first_id = nid
        rows.append(xyz)
    if header is None:
        raise ParseError(path, 1, "empty .node file")
    if len(rows) != header:
        raise ParseError(path, len(lines), f"expected {header} nodes, found {len(rows)}")
    return np.asarray(rows, dtype=np.float64), (first_id if first_id in (0, 1) else 0)


def _parse_ele(path, n_vertices, base):
    with open(path) as fh:
        lines = fh.readlines()
    header = None
    rows = []
    for ln, raw in enumerate(lines, start=1):
        s = raw.split("#", 1)[0].strip()
        if not s:
            continue
        parts = s.split()
        if header is None:
            try:
                header = int(parts[0])
            except ValueError:
                raise ParseError(path, ln, "bad .ele header") from None
            continue
        if len(parts) < 5:
            raise ParseError(path, ln, "ele line needs id and 4 vertex indices")
        try:
            idx = [int(parts[j]) - base for j in range(1, 5)]
        except ValueError:
            raise ParseError(path, ln, "malformed ele line") from None
        for v in idx:
            if v < 0 or v >= n_vertices:
                raise ParseError(path, ln, f"vertex index {v + base} out of range")
        rows.append(idx)
    if header is None:
        raise ParseError(path, 1, "empty .ele file")
    if len(rows) != header:
        raise ParseError(path, len(lines), f"expected {header} tets, found {len(rows)}")
    return np.asarray(rows, dtype=np.int64)


# ----------------------------------------------------------------------
# bone removal

def remove_bone_tets(mesh):
    """Drop bone tets and compact indices.

    Vertices on the former bone interface keep (or gain) the bone_surface
    tag. The returned mesh carries orig_vertex_ids / orig_tet_ids arrays
    mapping compacted indices back to the input mesh.
    """
    if mesh.bone_tet_ids.size == 0:
        out = TetMesh(mesh.vertices.copy(), mesh.tets.copy(),
                      np.nonzero(mesh.skin_mask)[0],
                      np.nonzero(mesh.bone_surface_mask)[0],
                      np.nonzero(mesh.open_boundary_mask)[0])
        out.orig_vertex_ids = np.arange(mesh.n_vertices)
        out.orig_tet_ids = np.arange(mesh.n_tets)
        return out

    keep = np.ones(mesh.n_tets, dtype=bool)
    keep[mesh.bone_tet_ids] = False
    if not keep.any():
        raise StructuralError("empty domain: all tets are bone")

    kept_tets = mesh.tets[keep]
    used = np.zeros(mesh.n_vertices, dtype=bool)
    used[kept_tets.ravel()] = True
    new_id = np.full(mesh.n_vertices, -1, dtype=np.int64)
    new_id[used] = np.arange(used.sum())

    bone_verts = np.zeros(mesh.n_vertices, dtype=bool)
    bone_verts[mesh.tets[~keep].ravel()] = True
    interface = bone_verts & used

    bone_surface = (mesh.bone_surface_mask | interface) & used

    out = TetMesh(
        mesh.vertices[used],
        new_id[kept_tets],
        new_id[mesh.skin_mask & used],
        new_id[bone_surface],
        new_id[mesh.open_boundary_mask & used],
    )
    out.orig_vertex_ids = np.nonzero(used)[0]
    out.orig_tet_ids = np.nonzero(keep)[0]
    return out


# ----------------------------------------------------------------------
# operators

def _signed_volumes(v, t):
    a = v[t[:, 1]] - v[t[:, 0]]
    b = v[t[:, 2]] - v[t[:, 0]]
    c = v[t[:, 3]] - v[t[:, 0]]
    return np.einsum("ij,ij->i", a, np.cross(b, c)) / 6.0


def _unique_edges(tets):
    if not len(tets):
        return np.zeros((0, 2), dtype=np.int64)
    pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    e = np.concatenate([tets[:, p] for p in pairs], axis=0)
    e.sort(axis=1)
    return np.unique(e, axis=0)


def gradient_operator(mesh):
    """Sparse (3m x n) operator mapping vertex values to per-tet gradients.

    Row block 3t..3t+2 holds the constant gradient of the linear
    interpolant on tet t. Affine functions are reproduced exactly.
    """
    v = mesh.vertices
    t = mesh.tets
    vol = mesh.volumes
    bad = np.nonzero(np.abs(vol) < 1e-300)[0]
    if bad.size:
        raise StructuralError(f"degenerate tet {int(bad[0])}: zero volume")

    # rows of inv(D) are the basis gradients of vertices 1..3;
    # vertex 0 carries minus their sum
    inv = mesh.barycentric_matrices()  # (m, 3, 3)
    g123 = np.ascontiguousarray(inv.transpose(0, 2, 1))  # g123[:, :, j] = grad phi_{j+1}
    g0 = -g123.sum(axis=2)

    m = mesh.n_tets
    rows = np.repeat(np.arange(3 * m), 4)
    cols = np.empty((m, 3, 4), dtype=np.int64)
    cols[:] = t[:, None, :]
    vals = np.empty((m, 3, 4))
    vals[:, :, 0] = g0
    vals[:, :, 1:] = g123
    G = sparse.coo_matrix((vals.ravel(), (rows, cols.ravel())),
                          shape=(3 * m, mesh.n_vertices))
    return G.tocsr()


def mass_operator(mesh):
    """Diagonal (3m x 3m) volume weights, one per gradient component."""
    w = np.repeat(mesh.volumes, 3)
    return sparse.diags(w).tocsr()


def cotan_laplacian(mesh):
    """Isotropic stiffness matrix: symmetric PSD, zero row sums.

    Assembled from outward face-area vectors, K_ij = N_i . N_j / (9 V),
    the tet form of the cotangent weights. Equals G^T M G entrywise (the
    two assembly routes cross-check each other in the tests).
    """
    v = mesh.vertices
    t = mesh.tets
    vol = mesh.volumes
    bad = np.nonzero(np.abs(vol) < 1e-300)[0]
    if bad.size:
        raise StructuralError(f"degenerate tet {int(bad[0])}: zero volume")

    N = np.empty((mesh.n_tets, 4, 3))
    for k, (a, b, c) in enumerate(_FACE_LOCAL):
        pa, pb, pc = v[t[:, a]], v[t[:, b]], v[t[:, c]]
        N[:, k] = 0.5 * np.cross(pb - pa, pc - pa)

    K = np.einsum("mik,mjk->mij", N, N) / (9.0 * vol)[:, None, None]
    rows = np.repeat(t, 4, axis=1)                      # (m, 16) row ids
    cols = np.tile(t, (1, 4))                           # (m, 16) col ids
    L = sparse.coo_matrix((K.reshape(mesh.n_tets, 16).ravel(),
                           (rows.ravel(), cols.ravel())),
                          shape=(mesh.n_vertices, mesh.n_vertices)).tocsr()
    L.sum_duplicates()
    return ((L + L.T) * 0.5).tocsr()


def anisotropic_laplacian(mesh, tensor_field):
    """Tensor-weighted stiffness G^T M A G.

    tensor_field supplies one symmetric positive-definite 3x3 matrix per
    tet (see anisotropy.TensorField). With identity tensors this matches
    cotan_laplacian.
    """
    A = np.asarray(tensor_field.per_tet if hasattr(tensor_field, "per_tet")
                   else tensor_field, dtype=np.float64)
    if A.shape != (mesh.n_tets, 3, 3):
        raise StructuralError(f"tensor field shape {A.shape} != ({mesh.n_tets}, 3, 3)")
    sym_err = np.abs(A - A.transpose(0, 2, 1)).max(axis=(1, 2))
    if np.any(sym_err > 1e-8):
        raise StructuralError(f"non-symmetric tensor on tet {int(sym_err.argmax())}")
    eig = np.linalg.eigvalsh(A)
    bad = np.nonzero(eig[:, 0] <= 0.0)[0]
    if bad.size:
        raise StructuralError(f"non-SPD tensor on tet {int(bad[0])}")

    m = mesh.n_tets
    rows = (3 * np.arange(m)[:, None, None] + np.arange(3)[:, None]).repeat(3, axis=2)
    cols = (3 * np.arange(m)[:, None, None] + np.arange(3)[None, None, :]).repeat(3, axis=1)
    Ablk = sparse.coo_matrix((A.ravel(), (rows.ravel(), cols.ravel())),
                             shape=(3 * m, 3 * m)).tocsr()
    G = gradient_operator(mesh)
    M = mass_operator(mesh)
    L = (G.T @ (M @ Ablk) @ G).tocsr()
    return ((L + L.T) * 0.5).tocsr()


def tet_containing_point(mesh, p):
    """Grid-accelerated point location; None when outside the domain."""
    return mesh.locate(p)
