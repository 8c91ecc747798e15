"""CPU reference renderer: first-muscle-surface ray casting on the tet mesh.

Rays enter at the nearest boundary face and walk tets through face
adjacency. Inside fat, the ray marches and re-classifies by field argmax;
a fat-to-muscle transition is bisected and shaded with a field-gradient
normal. Bone tets shade flat. This is the ground truth the UI shader is
validated against, and the CLI's preview-image generator.
"""

from dataclasses import dataclass

import numpy as np

from .envelope import BONE_LABEL, FAT_LABEL
from .errors import StructuralError

DEFAULT_MARCH_STEP = 0.1     # fraction of the tet crossing length
TRANSITION_TOL = 1e-6        # bisection tolerance, fraction of crossing length
DEFAULT_COLORS = {
    "bone": (0.93, 0.91, 0.85),
    "fat": (0.0, 0.0, 0.0),
    "background": (0.0, 0.0, 0.0),
    "muscle": (0.78, 0.16, 0.16),
}


@dataclass
class Camera:
    eye: np.ndarray
    look_at: np.ndarray
    up: np.ndarray
    vertical_fov: float  # degrees
    width: int
    height: int

    def __post_init__(self):
        self.eye = np.asarray(self.eye, dtype=np.float64)
        self.look_at = np.asarray(self.look_at, dtype=np.float64)
        self.up = np.asarray(self.up, dtype=np.float64)
        if not 0.0 < self.vertical_fov < 180.0:
            raise ValueError("fov must be in (0, 180)")
        fwd = self.look_at - self.eye
        n = np.linalg.norm(fwd)
        if n < 1e-12:
            raise ValueError("eye and look_at coincide")
        fwd = fwd / n
        if np.linalg.norm(np.cross(fwd, self.up)) < 1e-9:
            raise ValueError("up parallel to view direction")
        self._fwd = fwd
        right = np.cross(fwd, self.up)
        self._right = right / np.linalg.norm(right)
        self._up = np.cross(self._right, fwd)

    @classmethod
    def from_dict(cls, d):
        return cls(eye=d["eye"], look_at=d["look_at"], up=d.get("up", (0, 1, 0)),
                   vertical_fov=float(d.get("fov", 40.0)),
                   width=int(d["width"]), height=int(d["height"]))

    def to_dict(self):
        return {"eye": self.eye.tolist(), "look_at": self.look_at.tolist(),
                "up": self.up.tolist(), "fov": self.vertical_fov,
                "width": self.width, "height": self.height}


def camera_ray(camera, px, py):
    """World ray through pixel center (px, py); origin at the eye."""
    tan_half = np.tan(np.radians(camera.vertical_fov) * 0.5)
    aspect = camera.width / camera.height
    u = (2.0 * (px + 0.5) / camera.width - 1.0) * tan_half * aspect
    v = (1.0 - 2.0 * (py + 0.5) / camera.height) * tan_half
    d = camera._fwd + u * camera._right + v * camera._up
    return camera.eye.copy(), d / np.linalg.norm(d)


# ----------------------------------------------------------------------
# ray-tet exit (the per-tet propagation step)

def ray_tet_exit(tet_vertices, entry, direction):
    """Exit distance and face index for a ray leaving a tet.

    Faces whose outward normal opposes the ray (visible from the entry
    side, negative denominator) are skipped; among the rest the smallest
    intersection distance wins, ties to the lowest face index.
    """
    P = np.asarray(tet_vertices, dtype=np.float64)
    e = np.asarray(entry, dtype=np.float64)
    r = np.asarray(direction, dtype=np.float64)

    bary = _barycentric4(P, e)
    if bary.min() < -1e-9:
        raise StructuralError(f"entry point outside tet (min barycentric {bary.min():.2e})")

    best_lam = np.inf
    best_face = -1
    for i in range(4):
        idx = [k for k in range(4) if k != i]
        a, b, c = P[idx[0]], P[idx[1]], P[idx[2]]
        n = np.cross(b - a, c - a)
        if np.dot(n, P[i] - a) > 0:
            n = -n
        denom = np.dot(r, n)
        if denom <= 0.0:
            continue  # visible (or parallel) face
        lam = np.dot((P[3 - i] - e), n) / denom
        lam = max(lam, 0.0)
        if lam < best_lam - 1e-15:
            best_lam = lam
            best_face = i
    if best_face < 0:
        raise StructuralError("ray exits no face (degenerate tet or direction)")
    return float(best_lam), int(best_face)


def _barycentric4(P, p):
    D = np.column_stack([P[1] - P[0], P[2] - P[0], P[3] - P[0]])
    loc = np.linalg.solve(D, p - P[0])
    return np.array([1.0 - loc.sum(), loc[0], loc[1], loc[2]])


# ----------------------------------------------------------------------
# renderer

class _FieldProbe:
    """Classify points of the full mesh against fields on the reduced mesh."""

    def __init__(self, full_mesh, reduced_mesh, fields):
        self.full = full_mesh
        self.values = fields.values_matrix()  # (K, n_reduced)
        self.tissue_ids = fields.tissue_ids
        if reduced_mesh.orig_vertex_ids is None:
            # fields live directly on the full mesh
            self.full_to_reduced = np.arange(full_mesh.n_vertices)
        else:
            self.full_to_reduced = np.full(full_mesh.n_vertices, -1, dtype=np.int64)
            self.full_to_reduced[reduced_mesh.orig_vertex_ids] = \
                np.arange(reduced_mesh.n_vertices)
        self.bone = np.zeros(full_mesh.n_tets, dtype=bool)
        self.bone[full_mesh.bone_tet_ids] = True

    def tissue_values(self, tet_id, p):
        rid = self.full_to_reduced[self.full.tets[tet_id]]
        if np.any(rid < 0):
            return None
        b = self.full.barycentric(tet_id, p)
        return self.values[:, rid] @ b

    def classify(self, tet_id, p):
        if self.bone[tet_id]:
            return BONE_LABEL
        vals = self.tissue_values(tet_id, p)
        if vals is None:
            return BONE_LABEL
        return self.tissue_ids[int(np.argmax(vals))]

    def surface_value(self, label, p):
        """f_label - max(others), interpolated at p (for normals)."""
        loc = self.full.locate(p)
        if loc is None:
            return None
        vals = self.tissue_values(loc[0], p)
        if vals is None:
            return None
        k = self.tissue_ids.index(label)
        others = np.delete(vals, k)
        return vals[k] - others.max()


def render_image(full_mesh, fields, camera, colors=None, march_step=DEFAULT_MARCH_STEP,
                 reduced_mesh=None, return_hits=False):
    """Per-pixel front-to-back tet walk; returns an (h, w, 4) uint8 image.

    Bone tets shade flat; fat is transparent; the first fat-to-muscle
    transition is bisected and Lambert-shaded with a central-difference
    normal of (f_muscle - max others). Rays that never leave fat discard
    to background.
    """
    merged = dict(DEFAULT_COLORS)
    merged.update(colors or {})
    colors = merged
    probe = _FieldProbe(full_mesh, reduced_mesh or full_mesh, fields)
    h, w = camera.height, camera.width
    img = np.zeros((h, w, 4), dtype=np.uint8)
    bg = np.asarray(colors["background"])
    img[:, :, :3] = np.clip(bg * 255.0 + 0.5, 0, 255).astype(np.uint8)

    tri_tets, tri_pts = _boundary_triangles(full_mesh)
    hits = [] if return_hits else None
    normal_h = 1e-4 * full_mesh.bbox_diagonal

    for py in range(h):
        for px in range(w):
            origin, direction = camera_ray(camera, px, py)
            res = _trace_pixel(probe, full_mesh, tri_tets, tri_pts, origin,
                               direction, march_step, colors, normal_h)
            if res is None:
                continue
            rgb, alpha, hitpoint, steplen, label = res
            img[py, px, :3] = np.clip(rgb * 255.0 + 0.5, 0, 255).astype(np.uint8)
            img[py, px, 3] = alpha
            if hits is not None and hitpoint is not None:
                hits.append({"pixel": (px, py), "point": hitpoint,
                             "step": steplen, "label": label})
    if return_hits:
        return img, hits
    return img


def _boundary_triangles(mesh):
    faces = mesh.boundary_faces()
    tets = np.asarray([t for t, _ in faces], dtype=np.int64)
    pts = np.asarray([[mesh.vertices[v] for v in mesh.face_vertices(t, k)]
                      for t, k in faces])
    return tets, pts


def _entry_hits(origin, direction, tri_pts):
    """t values of ray hits against all boundary triangles (inf = miss)."""
    v0, v1, v2 = tri_pts[:, 0], tri_pts[:, 1], tri_pts[:, 2]
    e1, e2 = v1 - v0, v2 - v0
    pv = np.cross(direction[None, :], e2)
    det = np.einsum("ij,ij->i", e1, pv)
    ok = np.abs(det) > 1e-14
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = origin[None, :] - v0
    u = np.einsum("ij,ij->i", s, pv) * inv
    qv = np.cross(s, e1)
    v = (qv @ direction) * inv
    t = np.einsum("ij,ij->i", e2, qv) * inv
    good = ok & (u >= -1e-10) & (v >= -1e-10) & (u + v <= 1 + 1e-10) & (t > 1e-9)
    return np.where(good, t, np.inf)


def _trace_pixel(probe, mesh, tri_tets, tri_pts, origin, direction,
                 march_step, colors, normal_h):
    ts = _entry_hits(origin, direction, tri_pts)
    order = np.argsort(ts)
    t_entry = ts[order[0]]
    if not np.isfinite(t_entry):
        return None
    tet = int(tri_tets[order[0]])
    p = origin + t_entry * direction
    t_cur = t_entry

    fat_idx = probe.tissue_ids.index(FAT_LABEL)
    max_steps = 4 * mesh.n_tets + 16
    for _ in range(max_steps):
        if probe.bone[tet]:
            rgb = _shade_flat(colors["bone"], direction)
            return rgb, 255, None, None, BONE_LABEL
        try:
            lam, face = ray_tet_exit(mesh.vertices[mesh.tets[tet]], p, direction)
        except StructuralError:
            return None
        crossing = max(lam, 1e-30)

        # barycentric coordinates are affine along the ray: evaluate the
        # whole march in two matrix products
        rid = probe.full_to_reduced[mesh.tets[tet]]
        Vt = probe.values[:, rid]                       # (K, 4)
        b0 = mesh.barycentric(tet, p)
        db = mesh.barycentric(tet, p + direction) - b0  # per unit distance

        def label_at(s):
            vals = Vt @ (b0 + s * db)
            return int(np.argmax(vals))

        if label_at(0.0) != fat_idx:
            lab = probe.tissue_ids[label_at(0.0)]
            hit = _shade_muscle(probe, lab, p, direction, colors, normal_h)
            return (*hit, p.copy(), march_step * crossing, lab)

        n_steps = max(1, int(np.ceil(1.0 / march_step)))
        s_grid = np.linspace(crossing / n_steps, crossing, n_steps)
        barys = b0[:, None] + np.outer(db, s_grid)      # (4, S)
        labs = np.argmax(Vt @ barys, axis=0)
        trans = np.nonzero(labs != fat_idx)[0]
        if trans.size:
            k = int(trans[0])
            lo = 0.0 if k == 0 else float(s_grid[k - 1])
            hi = float(s_grid[k])
            lab_idx = int(labs[k])
            tol = TRANSITION_TOL * crossing
            while hi - lo > tol:
                mid = 0.5 * (lo + hi)
                if label_at(mid) == lab_idx:
                    hi = mid
                else:
                    lo = mid
            hitp = p + hi * direction
            lab = probe.tissue_ids[lab_idx]
            hit = _shade_muscle(probe, lab, hitp, direction, colors, normal_h)
            return (*hit, hitp.copy(), crossing / n_steps, lab)
        nxt = int(mesh.face_adjacency[tet, face])
        p = p + lam * direction
        t_cur += lam
        if nxt < 0:
            later = ts[(ts > t_cur + 1e-9) & np.isfinite(ts)]
            if later.size:
                t_re = float(later.min())
                p = origin + t_re * direction
                tet = int(tri_tets[int(np.argmin(np.where(ts > t_cur + 1e-9, ts, np.inf)))])
                t_cur = t_re
                continue
            return None  # left the domain in fat: background
        tet = nxt
    return None


def _muscle_color(colors, label):
    return np.asarray(colors.get(label, colors.get(str(label), colors["muscle"])))


def _shade_flat(color, direction):
    return np.asarray(color) * 1.0


def _shade_muscle(probe, label, p, direction, colors, h):
    g = np.zeros(3)
    for ax in range(3):
        dp = np.zeros(3)
        dp[ax] = h
        f1 = probe.surface_value(label, p + dp)
        f0 = probe.surface_value(label, p - dp)
        if f1 is None or f0 is None:
            g[ax] = 0.0
        else:
            g[ax] = (f1 - f0) / (2 * h)
    n = g
    nn = np.linalg.norm(n)
    if nn > 1e-15:
        n = n / nn
        if np.dot(n, direction) > 0:
            n = -n
        lambert = max(0.0, -np.dot(n, direction))
    else:
        lambert = 1.0
    base = _muscle_color(colors, label)
    rgb = base * (0.15 + 0.85 * lambert)
    return np.clip(rgb, 0.0, 1.0), 255


# ----------------------------------------------------------------------
# image io

def write_ppm(path, img):
    """Binary P6; the bit-stable golden format (alpha composited on black)."""
    h, w = img.shape[:2]
    rgb = img[:, :, :3]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(rgb.astype(np.uint8).tobytes())


def write_png(path, img):
    from PIL import Image
    Image.fromarray(img, mode="RGBA").save(path)
