"""Muscle curves: spline representation, fitting, sketch projection,
collocation tracing, and assembly of the soft constraint system.

A muscle curve is a centripetal Catmull-Rom spline whose control points
carry scalar tissue values. Tracing clips the curve against the tet mesh
and produces one collocation entry (midpoint, barycentrics, interpolated
tissue value, tangent) per crossed tet.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import SketchError, StructuralError, TraceError

DEFAULT_SAMPLES_PER_SPAN = 64

# segments shorter than this fraction of the mean edge length produce no
# collocation entry (avoids near-duplicate constraints in adjacent tets)
GRAZE_FRACTION = 1e-6


# ----------------------------------------------------------------------
# centripetal Catmull-Rom

class CatmullRom:
    """Centripetal Catmull-Rom spline through k >= 2 control points.

    Endpoints are interpolated exactly via reflected phantom points. The
    global parameter s in [0, 1] maps affinely onto the knot span.
    """

    def __init__(self, points, alpha=0.5):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if len(pts) < 2:
            raise ValueError("need at least 2 control points")
        self.points = pts
        self.alpha = alpha
        ext = np.vstack([2 * pts[0] - pts[1], pts, 2 * pts[-1] - pts[-2]])
        d = np.linalg.norm(np.diff(ext, axis=0), axis=1) ** alpha
        d = np.maximum(d, 1e-12)
        self.knots = np.concatenate([[0.0], np.cumsum(d)])
        self._ext = ext
        self._t0 = self.knots[1]
        self._t1 = self.knots[-2]

    @property
    def n_spans(self):
        return len(self.points) - 1

    def _segment(self, s):
        tau = self._t0 + (self._t1 - self._t0) * np.clip(s, 0.0, 1.0)
        j = int(np.searchsorted(self.knots[1:-2], tau, side="right")) - 1
        j = min(max(j, 0), self.n_spans - 1)
        return j, tau

    def basis(self, s):
        """Span index and the 4 Barry-Goldman weights on ext points j..j+3."""
        j, tau = self._segment(s)
        t = self.knots[j:j + 4]
        w = np.zeros(4)
        for i in range(4):
            e = np.zeros(4)
            e[i] = 1.0
            w[i] = _barry_goldman(e, t, tau)
        return j, w

    def evaluate(self, s):
        j, tau = self._segment(s)
        q = self._ext[j:j + 4]
        t = self.knots[j:j + 4]
        return _barry_goldman(q, t, tau)

    def evaluate_many(self, svals):
        return np.array([self.evaluate(s) for s in np.atleast_1d(svals)])

    def tangent(self, s, h=1e-6):
        a = self.evaluate(min(max(s - h, 0.0), 1.0))
        b = self.evaluate(min(max(s + h, 0.0), 1.0))
        d = b - a
        n = np.linalg.norm(d)
        if n < 1e-15:
            raise ValueError(f"zero tangent at s={s}")
        return d / n

    def arc_length(self, n=512):
        p = self.evaluate_many(np.linspace(0.0, 1.0, n))
        return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum())


def _barry_goldman(q, t, tau):
    t0, t1, t2, t3 = t
    a1 = ((t1 - tau) * q[0] + (tau - t0) * q[1]) / max(t1 - t0, 1e-300)
    a2 = ((t2 - tau) * q[1] + (tau - t1) * q[2]) / max(t2 - t1, 1e-300)
    a3 = ((t3 - tau) * q[2] + (tau - t2) * q[3]) / max(t3 - t2, 1e-300)
    b1 = ((t2 - tau) * a1 + (tau - t0) * a2) / max(t2 - t0, 1e-300)
    b2 = ((t3 - tau) * a2 + (tau - t1) * a3) / max(t3 - t1, 1e-300)
    return ((t2 - tau) * b1 + (tau - t1) * b2) / max(t2 - t1, 1e-300)


# ----------------------------------------------------------------------
# domain types

@dataclass
class MuscleCurve:
    """A muscle stroke: spline geometry plus per-control-point tissue values.

    id is the tissue index (>= 1). twist_angle rotates the anisotropy
    frame's (e2, e3) about the tangent; eigenvalues scale diffusion rates
    along the frame axes.
    """

    id: int
    control_points: np.ndarray
    tissue_values: np.ndarray
    twist_angle: float = 0.0
    eigenvalues: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.control_points = np.asarray(self.control_points, dtype=np.float64)
        self.tissue_values = np.asarray(self.tissue_values, dtype=np.float64)
        if len(self.control_points) < 4:
            raise ValueError("muscle curve needs at least 4 control points")
        if len(self.tissue_values) != len(self.control_points):
            raise ValueError("one tissue value per control point required")
        if not np.all(np.isfinite(self.tissue_values)) or np.any(self.tissue_values <= 0):
            raise ValueError("tissue values must be finite and positive")
        if any(e <= 0 for e in self.eigenvalues):
            raise ValueError("eigenvalues must be positive")

    def spline(self):
        return CatmullRom(self.control_points)

    def value_spline(self):
        # tissue values ride the same basis/knots as the geometry
        geo = self.spline()
        vs = CatmullRom(self.tissue_values[:, None])
        vs.knots = geo.knots
        vs._t0, vs._t1 = geo._t0, geo._t1
        return vs

    @property
    def is_isotropic(self):
        e = self.eigenvalues
        return abs(e[0] - 1.0) < 1e-12 and abs(e[1] - 1.0) < 1e-12 and abs(e[2] - 1.0) < 1e-12

    def to_dict(self):
        return {
            "id": int(self.id),
            "control_points": self.control_points.tolist(),
            "tissue_values": self.tissue_values.tolist(),
            "twist_angle": float(self.twist_angle),
            "eigenvalues": [float(e) for e in self.eigenvalues],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            id=int(d["id"]),
            control_points=np.asarray(d["control_points"], dtype=np.float64),
            tissue_values=np.asarray(d["tissue_values"], dtype=np.float64),
            twist_angle=float(d.get("twist_angle", 0.0)),
            eigenvalues=tuple(d.get("eigenvalues", (1.0, 1.0, 1.0))),
        )


@dataclass
class CollocationEntry:
    tet_id: int
    point: np.ndarray
    barycentric: np.ndarray
    tissue_value: float
    tangent: np.ndarray
    s_range: tuple = (0.0, 0.0)
    length: float = 0.0


@dataclass
class CollocationSet:
    """Ordered per-tet clippings of one curve, by arc length."""

    curve_id: int
    entries: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def tet_ids(self):
        return [e.tet_id for e in self.entries]


@dataclass
class ConstraintSystem:
    """B f = d rows: stacked barycentric weights at collocation points."""

    B: sparse.csr_matrix
    d: np.ndarray


# ----------------------------------------------------------------------
# fitting

def fit_spline(samples, k=4):
    """Least-squares Catmull-Rom fit to an ordered point sequence.

    Samples get chord-length parameters; interior control points minimize
    the squared residual while the end controls interpolate the first and
    last samples exactly. Falls back to uniform polyline subsampling when
    the normal equations are rank-deficient.
    """
    X = np.asarray(samples, dtype=np.float64)
    if k < 4:
        raise ValueError("k must be >= 4")
    if len(X) < k:
        raise ValueError(f"need at least {k} samples")

    seg = np.linalg.norm(np.diff(X, axis=0), axis=1)
    total = seg.sum()
    if total <= 0:
        return np.repeat(X[:1], k, axis=0)
    u = np.concatenate([[0.0], np.cumsum(seg)]) / total

    ctrl = _subsample_polyline(X, u, k)
    for _ in range(2):
        fitted = _ls_fit_once(X, u, ctrl, k)
        if fitted is None:
            return _subsample_polyline(X, u, k)
        ctrl = fitted
    return ctrl


def _subsample_polyline(X, u, k):
    targets = np.linspace(0.0, 1.0, k)
    out = np.empty((k, X.shape[1]))
    for i, t in enumerate(targets):
        j = int(np.searchsorted(u, t, side="right")) - 1
        j = min(max(j, 0), len(X) - 2)
        denom = max(u[j + 1] - u[j], 1e-300)
        w = (t - u[j]) / denom
        out[i] = (1 - w) * X[j] + w * X[j + 1]
    return out


def _ls_fit_once(X, u, ctrl, k):
    spline = CatmullRom(ctrl)
    n = len(X)
    W = np.zeros((n, k))
    for r, s in enumerate(u):
        j, w = spline.basis(s)
        # ext indices j..j+3 map to control indices j-1..j+2 with the
        # phantom reflections folded back onto real controls
        for c, wt in enumerate(w):
            ci = j + c - 1
            if ci == -1:
                W[r, 0] += 2 * wt
                W[r, 1] -= wt
            elif ci == k:
                W[r, k - 1] += 2 * wt
                W[r, k - 2] -= wt
            else:
                W[r, ci] += wt
    A = W[:, 1:k - 1]
    rhs = X - np.outer(W[:, 0], X[0]) - np.outer(W[:, k - 1], X[-1])
    sol, _, rank, _ = np.linalg.lstsq(A, rhs, rcond=None)
    if rank < k - 2:
        return None
    out = np.vstack([X[0], sol, X[-1]])
    return out


# ----------------------------------------------------------------------
# sketch projection

def project_sketch(mesh, stroke_2d, camera):
    """Lift a 2D screen stroke into 3D using bone-anchored depths.

    The first and last stroke points must hit the bone surface; their hit
    depths anchor a linear depth interpolation (by 2D arc length) for the
    interior points along each pick ray.
    """
    from .raycast import camera_ray  # local import to avoid a cycle

    stroke = np.asarray(stroke_2d, dtype=np.float64)
    if len(stroke) < 2:
        raise SketchError("stroke needs at least 2 points")

    bone_tris = bone_surface_triangles(mesh)
    if not len(bone_tris):
        raise SketchError("mesh has no bone surface to anchor the stroke")
    tri_pts = mesh.vertices[bone_tris]

    rays = [camera_ray(camera, px, py) for px, py in stroke]

    hits = []
    for which in (0, -1):
        o, d = rays[which]
        t = _ray_triangles(o, d, tri_pts)
        if t is None:
            raise SketchError("stroke must start and end on bone")
        hits.append(t)
    depth0, depth1 = hits

    seg = np.linalg.norm(np.diff(stroke, axis=0), axis=1)
    total = seg.sum()
    arc = np.concatenate([[0.0], np.cumsum(seg)]) / max(total, 1e-300)

    out = np.empty((len(stroke), 3))
    for i, ((o, d), s) in enumerate(zip(rays, arc)):
        depth = (1.0 - s) * depth0 + s * depth1
        out[i] = o + depth * d
    return out


def bone_surface_triangles(mesh):
    """Triangles separating bone tets from the rest of the domain."""
    bone = np.zeros(mesh.n_tets, dtype=bool)
    bone[mesh.bone_tet_ids] = True
    tris = []
    for ti in np.nonzero(bone)[0]:
        for k in range(4):
            nb = mesh.face_adjacency[ti, k]
            if nb == -1 or not bone[nb]:
                tris.append(mesh.face_vertices(ti, k))
    return np.asarray(tris, dtype=np.int64).reshape(-1, 3)


def _ray_triangles(origin, direction, tri_pts):
    """Nearest positive ray-triangle hit distance, or None (Moller-Trumbore)."""
    if not len(tri_pts):
        return None
    v0, v1, v2 = tri_pts[:, 0], tri_pts[:, 1], tri_pts[:, 2]
    e1, e2 = v1 - v0, v2 - v0
    p = np.cross(direction, e2)
    det = np.einsum("ij,ij->i", e1, p)
    ok = np.abs(det) > 1e-14
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = origin - v0
    uu = np.einsum("ij,ij->i", s, p) * inv
    q = np.cross(s, e1)
    vv = (q @ direction) * inv
    t = np.einsum("ij,ij->i", e2, q) * inv
    hit = ok & (uu >= -1e-12) & (vv >= -1e-12) & (uu + vv <= 1 + 1e-12) & (t > 1e-9)
    if not hit.any():
        return None
    return float(t[hit].min())


# ----------------------------------------------------------------------
# collocation tracing

def trace_collocation(mesh, curve, samples_per_span=DEFAULT_SAMPLES_PER_SPAN,
                      allow_exit=False):
    """Clip a curve against the mesh into per-tet collocation entries.

    Crossings between consecutive samples are refined by bisection on the
    spline parameter to 1e-10, so entries are invariant to the sampling
    density. With allow_exit the curve may leave and re-enter the domain
    (used when tracing against an extracted single-muscle mesh); otherwise
    a mid-span exit is an error reporting the parameter.
    """
    spline = curve.spline()
    vspline = curve.value_spline()
    n = samples_per_span * spline.n_spans + 1
    svals = np.linspace(0.0, 1.0, n)
    pts = spline.evaluate_many(svals)

    locs = []
    for s, p in zip(svals, pts):
        r = mesh.locate(p)
        locs.append(-1 if r is None else r[0])
    locs = np.asarray(locs, dtype=np.int64)

    if not allow_exit:
        inside = locs != -1
        if not inside.any():
            raise TraceError("curve lies entirely outside the domain")
        # endpoints may sit epsilon-outside on the boundary; interior may not
        bad = np.nonzero(~inside[1:-1])[0]
        if bad.size:
            raise TraceError(f"curve exits the domain at s={svals[bad[0] + 1]:.6f}")

    # split [0,1] into runs of constant containing tet, bisecting the
    # transition parameter between differing consecutive samples
    runs = []
    run_start = svals[0]
    cur = locs[0]
    for i in range(1, n):
        if locs[i] == cur:
            continue
        s_cross = _bisect_transition(mesh, spline, svals[i - 1], svals[i], cur)
        runs.append((cur, run_start, s_cross))
        run_start = s_cross
        cur = locs[i]
    runs.append((cur, run_start, svals[-1]))

    graze_len = GRAZE_FRACTION * mesh.mean_edge_length
    entries = []
    for tet_id, s0, s1 in runs:
        if tet_id == -1:
            continue
        length = _span_length(spline, s0, s1)
        if length < graze_len:
            continue
        mid = 0.5 * (s0 + s1)
        p = spline.evaluate(mid)
        loc = mesh.locate(p)
        if loc is None or loc[0] != tet_id:
            # midpoint may fall across a grazed face; trust the run's tet
            b = mesh.barycentric(tet_id, p)
            b = np.clip(b, 0.0, None)
            b = b / b.sum()
        else:
            b = loc[1]
        entries.append(CollocationEntry(
            tet_id=int(tet_id),
            point=p,
            barycentric=b,
            tissue_value=float(vspline.evaluate(mid)[0]),
            tangent=spline.tangent(mid),
            s_range=(float(s0), float(s1)),
            length=float(length),
        ))
    if not entries and not allow_exit:
        raise TraceError("curve produced no collocation entries")
    return CollocationSet(curve_id=curve.id, entries=entries)


def _span_length(spline, s0, s1, n=16):
    p = spline.evaluate_many(np.linspace(s0, s1, n))
    return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum())


def _bisect_transition(mesh, spline, s_lo, s_hi, tet_lo, tol=1e-10):
    """Parameter where the containing tet stops being tet_lo."""
    lo, hi = s_lo, s_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        r = mesh.locate(spline.evaluate(mid))
        if r is not None and r[0] == tet_lo:
            lo = mid
        else:
            hi = mid
    return hi


# ----------------------------------------------------------------------
# constraint assembly

def assemble_constraints(mesh, colloc):
    """Stack barycentric rows into the soft constraint system B f = d."""
    tets = mesh.tets
    nrows = len(colloc.entries)
    rows = np.repeat(np.arange(nrows), 4)
    cols = np.empty((nrows, 4), dtype=np.int64)
    vals = np.empty((nrows, 4))
    d = np.empty(nrows)
    for r, e in enumerate(colloc.entries):
        if e.tet_id < 0 or e.tet_id >= mesh.n_tets:
            raise StructuralError(f"collocation references invalid tet {e.tet_id}")
        cols[r] = tets[e.tet_id]
        vals[r] = e.barycentric
        d[r] = e.tissue_value
    B = sparse.coo_matrix((vals.ravel(), (rows, cols.ravel())),
                          shape=(nrows, mesh.n_vertices)).tocsr()
    B.sum_duplicates()
    return ConstraintSystem(B=B, d=d)


def load_curve_network(path):
    """Read the curve-network JSON: curves plus the scene's d_fat."""
    import json
    with open(path) as fh:
        data = json.load(fh)
    curves = [MuscleCurve.from_dict(c) for c in data.get("curves", [])]
    return curves, data.get("d_fat")


def save_curve_network(path, curves, d_fat=None):
    import json
    data = {"curves": [c.to_dict() for c in curves]}
    if d_fat is not None:
        data["d_fat"] = float(d_fat)
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1)
        fh.write("\n")
