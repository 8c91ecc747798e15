"""Segmentation by argmax and extraction of a manifold, consistently
tessellated, labeled tetrahedral mesh (the tetrahedralized maximization
diagram of the tissue fields), plus per-tissue mesh and boundary-surface
extraction.

Tissue pairs are processed in ascending order; each pass splits the
current tets along the zero set of the pair's difference field. Split
decisions are pure functions of edge endpoint data, and a history keyed
by vertex provenance guarantees adjacent tets (and re-runs in any tet
order) reuse identical split vertices, which is what makes the output
manifold and reproducible.
"""

import hashlib
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import StructuralError
from .tetmesh import _FACE_LOCAL, TetMesh

DEFAULT_EPS_REL = 1e-6  # near-vertex crossing threshold, relative to field range
BONE_LABEL = -1
FAT_LABEL = 0

_TET_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))


# ----------------------------------------------------------------------
# classification

def classify_point(fields, mesh, p):
    """Tissue label at a point: argmax of the interpolated fields.

    Ties break to the lowest muscle id; fat (0) is ordered last. Returns
    None outside the domain.
    """
    loc = mesh.locate(p)
    if loc is None:
        return None
    ti, b = loc
    vals = fields.values_matrix()[:, mesh.tets[ti]] @ b
    return fields.tissue_ids[int(np.argmax(vals))]


def _possible_mask(X_tets, slack):
    """Per-tet conservative test: can tissue k reach the running maximum?

    X_tets is (T, 4, K). Tissue k is possibly part of a tet's maximization
    diagram when max(f_k) >= max_{j != k} min(f_j) over the tet (an
    interval bound that never reports a false negative).
    """
    mn = X_tets.min(axis=1)  # (T, K)
    mx = X_tets.max(axis=1)
    K = mn.shape[1]
    order = np.argsort(mn, axis=1)
    top1 = order[:, -1]
    m1 = np.take_along_axis(mn, top1[:, None], axis=1)[:, 0]
    m2 = np.take_along_axis(mn, order[:, -2][:, None], axis=1)[:, 0] if K > 1 \
        else np.full(len(mn), -np.inf)
    excl = np.where(np.arange(K)[None, :] == top1[:, None], m2[:, None], m1[:, None])
    return mx >= excl - slack


@dataclass
class PruneMatrix:
    """Symmetric boolean co-occurrence of tissues over per-tet diagrams."""

    W: np.ndarray        # (K, K) bool, tissue order = muscles asc, fat last
    tissue_ids: list
    tet_counts: np.ndarray  # per original tet: how many tissues are possible

    def histogram(self):
        counts, freq = np.unique(self.tet_counts, return_counts=True)
        return {int(c): int(f) for c, f in zip(counts, freq)}


def prune_tissues(mesh, fields, slack_rel=1e-12):
    """Build the pairwise co-occurrence matrix W from the original mesh."""
    X = fields.values_matrix().T  # (n, K)
    Xt = X[mesh.tets]             # (T, 4, K)
    scale = float(np.abs(X).max()) if X.size else 1.0
    poss = _possible_mask(Xt, slack_rel * max(scale, 1.0))
    K = X.shape[1]
    W = np.zeros((K, K), dtype=bool)
    for i in range(K):
        W[i, i] = bool(poss[:, i].any())
        for j in range(i + 1, K):
            co = bool((poss[:, i] & poss[:, j]).any())
            W[i, j] = W[j, i] = co
    return PruneMatrix(W=W, tissue_ids=list(fields.tissue_ids),
                       tet_counts=poss.sum(axis=1))


# ----------------------------------------------------------------------
# single-tet splitting (public form of the split_edge recursion)

@dataclass
class SplitResult:
    vertices: np.ndarray
    tets: np.ndarray
    note: str = ""


def split_tet(tet_vertices, f, eps=0.0):
    """Split one tet along the zero isosurface of a linear difference field.

    f holds the difference values at the 4 vertices. Sign-crossing edges
    (3 or 4 of them) are split in sorted unique-edge order; endpoints with
    |f| < eps count as on-surface and drop their edges from the split set.
    Sub-tet volumes partition the input exactly.
    """
    P = [np.asarray(v, dtype=np.float64) for v in tet_vertices]
    f = np.asarray(f, dtype=np.float64)
    z = np.zeros(4, dtype=np.int64)
    z[f > eps] = 1
    z[f < -eps] = -1
    if not z.any():
        return SplitResult(np.asarray(P), np.arange(4)[None, :].copy(),
                           note="degenerate: all values within eps of zero")

    edges = [(a, b) for a, b in _TET_EDGES if z[a] * z[b] < 0]
    if not edges:
        return SplitResult(np.asarray(P), np.arange(4)[None, :].copy())

    fvals = {i: f[i] for i in range(4)}

    def make_vertex(a, b):
        t = fvals[a] / (fvals[a] - fvals[b])
        vid = len(P)
        P.append((1.0 - t) * P[a] + t * P[b])
        fvals[vid] = 0.0
        return vid

    tets = _split_by_edges((0, 1, 2, 3), sorted(edges), make_vertex, {})
    return SplitResult(np.asarray(P), np.asarray(tets, dtype=np.int64))


def _split_by_edges(tet, edges_sorted, make_vertex, history):
    """Recursive split_edge over a sorted edge list; history deduplicates."""
    tets = [tuple(tet)]
    for a, b in edges_sorted:
        key = (a, b)
        out = []
        for T in tets:
            if a in T and b in T:
                v = history.get(key)
                if v is None:
                    v = make_vertex(a, b)
                    history[key] = v
                Ta = list(T)
                Ta[Ta.index(a)] = v
                Tb = list(T)
                Tb[Tb.index(b)] = v
                out.append(tuple(Ta))
                out.append(tuple(Tb))
            else:
                out.append(T)
        tets = out
    return tets


# ----------------------------------------------------------------------
# tetrahedralized maximization diagram

@dataclass
class LabeledTetMesh:
    """Refined tet mesh with one tissue label per tet.

    labels hold muscle ids (>= 1), 0 for fat, -1 for bone. provenance
    records each vertex's origin: ("orig", id) for input vertices or
    ("split", a, b, t) for an edge split between output vertices a and b
    at parameter t. signatures are run-invariant vertex keys used for
    tessellation-consistency comparisons.
    """

    vertices: np.ndarray
    tets: np.ndarray
    labels: np.ndarray
    tissue_ids: list
    provenance: list
    signatures: list
    ancestors: np.ndarray        # original tet id per output tet (-1 for bone)
    stats: dict = field(default_factory=dict)

    @property
    def n_tets(self):
        return len(self.tets)

    def volumes(self):
        v, t = self.vertices, self.tets
        a = v[t[:, 1]] - v[t[:, 0]]
        b = v[t[:, 2]] - v[t[:, 0]]
        c = v[t[:, 3]] - v[t[:, 0]]
        return np.einsum("ij,ij->i", a, np.cross(b, c)) / 6.0

    def label_volumes(self):
        vols = self.volumes()
        out = {}
        for lab in np.unique(self.labels):
            out[int(lab)] = float(vols[self.labels == lab].sum())
        return out

    def canonical_form(self):
        """(vertex signature set, labeled tet key set) for order-invariant
        equality checks across runs."""
        sigs = self.signatures
        tet_keys = set()
        for tet, lab in zip(self.tets, self.labels):
            tet_keys.add((frozenset(sigs[v] for v in tet), int(lab)))
        return set(sigs), tet_keys


def maximization_diagram(mesh, fields, eps_rel=DEFAULT_EPS_REL,
                         tet_order="forward", use_prune=True,
                         original_mesh=None):
    """Alg.: split every tet by each relevant tissue pair, then label.

    Pairs run in ascending tissue order. A pass collects the sign-crossing
    edges of every tet whose interval test admits both tissues, then splits
    those edges in *all* tets containing them (conforming), recursing in
    provenance-sorted edge order. New vertex fields are interpolated along
    the split edge, which equals barycentric interpolation against the
    original mesh since every sub-tet stays inside its ancestor.
    """
    X0 = fields.values_matrix().T  # (n, K)
    tissue_ids = list(fields.tissue_ids)
    K = X0.shape[1]

    prune = prune_tissues(mesh, fields)
    scale = float(np.abs(X0).max()) if X0.size else 1.0
    slack = 1e-12 * max(scale, 1.0)

    positions = [mesh.vertices[i].copy() for i in range(mesh.n_vertices)]
    values = [X0[i].copy() for i in range(mesh.n_vertices)]
    sigs = [f"v{i:08d}" for i in range(mesh.n_vertices)]
    prov = [("orig", i) for i in range(mesh.n_vertices)]
    tets = [tuple(int(v) for v in t) for t in mesh.tets]
    anc = list(range(mesh.n_tets))
    history = {}
    pass_stats = []

    pairs = [(i, j) for i in range(K) for j in range(i + 1, K)]
    for i, j in pairs:
        if use_prune and not prune.W[i, j]:
            continue
        Xarr = np.asarray(values)
        g = Xarr[:, i] - Xarr[:, j]
        rng = float(g.max() - g.min()) if len(g) else 0.0
        if rng <= 0.0:
            continue
        eps = eps_rel * rng
        z = np.zeros(len(g), dtype=np.int8)
        z[g > eps] = 1
        z[g < -eps] = -1

        tarr = np.asarray(tets, dtype=np.int64)
        Xt = Xarr[tarr]
        poss = _possible_mask(Xt, slack)
        gated = np.nonzero(poss[:, i] & poss[:, j])[0]

        contributed = {}
        for ti in gated:
            T = tets[ti]
            for a_l, b_l in _TET_EDGES:
                a, b = T[a_l], T[b_l]
                if z[a] * z[b] < 0:
                    ka, kb = (a, b) if a < b else (b, a)
                    contributed[(ka, kb)] = True
        if not contributed:
            pass_stats.append({"pair": (tissue_ids[i], tissue_ids[j]), "splits": 0})
            continue

        def make_vertex(a, b):
            if sigs[b] < sigs[a]:
                a, b = b, a
            t = g[a] / (g[a] - g[b])
            tq = int(round(t * 1e9))
            key = (sigs[a], sigs[b], tq)
            vid = history.get(key)
            if vid is not None:
                return vid
            vid = len(positions)
            positions.append((1.0 - t) * positions[a] + t * positions[b])
            values.append((1.0 - t) * values[a] + t * values[b])
            sigs.append("e" + hashlib.sha1(
                f"{sigs[a]}|{sigs[b]}|{tq}".encode()).hexdigest()[:16])
            prov.append(("split", a, b, float(t)))
            history[key] = vid
            return vid

        order = range(len(tets)) if tet_order == "forward" else range(len(tets) - 1, -1, -1)
        new_tets = []
        new_anc = []
        n_split = 0
        for ti in order:
            T = tets[ti]
            mine = []
            for a_l, b_l in _TET_EDGES:
                a, b = T[a_l], T[b_l]
                ka, kb = (a, b) if a < b else (b, a)
                if (ka, kb) in contributed:
                    sa, sb = sigs[ka], sigs[kb]
                    skey = (sa, sb) if sa < sb else (sb, sa)
                    mine.append((skey, (ka, kb)))
            if not mine:
                new_tets.append(T)
                new_anc.append(anc[ti])
                continue
            mine.sort(key=lambda e: e[0])
            pieces = _split_by_edges(T, [e[1] for e in mine], make_vertex, {})
            new_tets.extend(pieces)
            new_anc.extend([anc[ti]] * len(pieces))
            n_split += 1
        tets = new_tets
        anc = new_anc
        pass_stats.append({"pair": (tissue_ids[i], tissue_ids[j]), "splits": n_split})

    V = np.asarray(positions)
    Tarr = np.asarray(tets, dtype=np.int64)
    Xarr = np.asarray(values)
    centroid_vals = Xarr[Tarr].mean(axis=1)  # (M, K): exact within each ancestor
    labels = np.asarray([tissue_ids[int(np.argmax(cv))] for cv in centroid_vals],
                        dtype=np.int64)
    ancestors = np.asarray(anc, dtype=np.int64)

    labeled = LabeledTetMesh(
        vertices=V, tets=Tarr, labels=labels, tissue_ids=tissue_ids,
        provenance=prov, signatures=sigs, ancestors=ancestors,
        stats={
            "eps_rel": eps_rel,
            "histogram": prune.histogram(),
            "passes": pass_stats,
            "n_input_tets": mesh.n_tets,
            "n_output_tets": len(Tarr),
        },
    )
    if original_mesh is not None and original_mesh.bone_tet_ids.size:
        labeled = _append_bone(labeled, mesh, original_mesh)
    return labeled


def _append_bone(labeled, reduced_mesh, original_mesh):
    """Re-attach bone tets (labeled bone) after the envelope pass."""
    if reduced_mesh.orig_vertex_ids is None:
        raise StructuralError("reduced mesh lacks provenance to re-attach bone")
    orig_to_out = {int(o): i for i, o in enumerate(reduced_mesh.orig_vertex_ids)}
    V = list(labeled.vertices)
    sigs = list(labeled.signatures)
    prov = list(labeled.provenance)
    tets = list(map(tuple, labeled.tets))
    labels = list(labeled.labels)
    anc = list(labeled.ancestors)
    for bt in original_mesh.bone_tet_ids:
        out_ids = []
        for ov in original_mesh.tets[bt]:
            ov = int(ov)
            if ov not in orig_to_out:
                orig_to_out[ov] = len(V)
                V.append(original_mesh.vertices[ov].copy())
                sigs.append(f"b{ov:08d}")
                prov.append(("orig_bone", ov))
            out_ids.append(orig_to_out[ov])
        tets.append(tuple(out_ids))
        labels.append(BONE_LABEL)
        anc.append(-1)
    return LabeledTetMesh(
        vertices=np.asarray(V), tets=np.asarray(tets, dtype=np.int64),
        labels=np.asarray(labels, dtype=np.int64),
        tissue_ids=labeled.tissue_ids, provenance=prov, signatures=sigs,
        ancestors=np.asarray(anc, dtype=np.int64), stats=labeled.stats,
    )


# ----------------------------------------------------------------------
# extraction

def extract_tissue_mesh(labeled, tissue):
    """Compacted tet mesh of all tets carrying one label."""
    sel = np.nonzero(labeled.labels == tissue)[0]
    if not sel.size:
        warnings.warn(f"tissue {tissue} absent from labeled mesh", stacklevel=2)
        return TetMesh(np.zeros((0, 3)), np.zeros((0, 4), dtype=np.int64))
    tets = labeled.tets[sel]
    used = np.unique(tets)
    new_tets = np.searchsorted(used, tets)
    out = TetMesh(labeled.vertices[used], new_tets)
    out.orig_vertex_ids = used
    out.orig_tet_ids = sel
    return out


@dataclass
class TriangleSurface:
    vertices: np.ndarray
    triangles: np.ndarray

    def edge_counts(self):
        e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]],
                            self.triangles[:, [2, 0]]])
        e.sort(axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return counts

    @property
    def is_closed(self):
        c = self.edge_counts()
        return bool(len(c) == 0 or np.all(c == 2))

    @property
    def euler_characteristic(self):
        ne = len(np.unique(np.sort(np.concatenate(
            [self.triangles[:, [0, 1]], self.triangles[:, [1, 2]],
             self.triangles[:, [2, 0]]]), axis=1), axis=0))
        return len(self.vertices) - ne + len(self.triangles)


def extract_boundary_surface(mesh):
    """Closed, outward-oriented triangle mesh of the boundary faces."""
    tris = []
    for ti, k in mesh.boundary_faces():
        tris.append(mesh.face_vertices(ti, k))
    tris = np.asarray(tris, dtype=np.int64).reshape(-1, 3)
    if not len(tris):
        return TriangleSurface(np.zeros((0, 3)), tris)
    used = np.unique(tris)
    new_tris = np.searchsorted(used, tris)
    return TriangleSurface(mesh.vertices[used], new_tris)


# ----------------------------------------------------------------------
# audits (shared by tests and the post-pass hook)

def audit_labeled_mesh(labeled, input_mesh=None, check_boundary_area=True):
    """Raise StructuralError on manifold/volume violations.

    Checks: positive volumes, every face incident to at most 2 tets,
    boundary area equal to the input mesh's (a T-junction inflates it),
    and volume conservation.
    """
    vols = labeled.volumes()
    if len(vols) and vols.min() <= 0:
        raise StructuralError(f"non-positive sub-tet volume {vols.min():.3e}")

    faces = {}
    for idx, tet in enumerate(labeled.tets):
        for k in range(4):
            key = tuple(sorted(int(tet[m]) for m in _FACE_LOCAL[k]))
            faces.setdefault(key, []).append(idx)
    boundary_area = 0.0
    for key, inc in faces.items():
        if len(inc) > 2:
            raise StructuralError(f"non-manifold face {key}: {len(inc)} tets")
        if len(inc) == 1:
            p = labeled.vertices[list(key)]
            boundary_area += 0.5 * np.linalg.norm(
                np.cross(p[1] - p[0], p[2] - p[0]))

    if input_mesh is not None:
        in_vol = input_mesh.total_volume
        out_vol = float(vols.sum())
        if abs(out_vol - in_vol) > 1e-8 * max(abs(in_vol), 1.0):
            raise StructuralError(
                f"volume not conserved: {out_vol!r} vs {in_vol!r}")
        if check_boundary_area:
            in_area = 0.0
            for ti, k in input_mesh.boundary_faces():
                p = input_mesh.vertices[list(input_mesh.face_vertices(ti, k))]
                in_area += 0.5 * np.linalg.norm(
                    np.cross(p[1] - p[0], p[2] - p[0]))
            if abs(boundary_area - in_area) > 1e-8 * max(in_area, 1.0):
                raise StructuralError(
                    f"boundary area changed: {boundary_area!r} vs {in_area!r} "
                    "(T-junction)")
    return True
