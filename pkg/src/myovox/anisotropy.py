"""Per-muscle diffusion tensors from curve-aligned frames.

Frames are transported along the collocation chain with minimal rotations
(parallel transport), twisted about the tangent by the user angle, seeded
onto the vertices of collocation tets, and spread to the rest of the mesh
by nine per-component harmonic solves. Blended frames are re-orthonormalized
(polar projection) before assembling Q^T diag(l1,l2,l3) Q per vertex; tets
average their four vertex tensors.
"""

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import splu

from . import tetmesh
from .errors import SolverError

EIG_CLAMP = 1e-6


@dataclass
class FrameSet:
    """One orthonormal frame per collocation entry; rows are (e1, e2, e3)."""

    frames: np.ndarray  # (k, 3, 3)

    def __len__(self):
        return len(self.frames)


def _stable_normal(t):
    ref = np.array([0.0, 0.0, 1.0]) if abs(t[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    n = ref - np.dot(ref, t) * t
    return n / np.linalg.norm(n)


def _rotate_about(v, axis, angle):
    c, s = np.cos(angle), np.sin(angle)
    return v * c + np.cross(axis, v) * s + axis * np.dot(axis, v) * (1 - c)


def propagate_frames(colloc, twist_angle=0.0):
    """Rotation-minimizing frames along a collocation chain.

    The first frame pairs the tangent with a stable normal; each next
    frame applies the minimal rotation taking the previous tangent to the
    current one. Finally (e2, e3) are rotated about e1 by twist_angle.
    """
    tangents = [np.asarray(e.tangent, dtype=np.float64) for e in colloc.entries]
    if not tangents:
        raise ValueError("collocation set is empty")
    for i, t in enumerate(tangents):
        n = np.linalg.norm(t)
        if n < 1e-12:
            raise ValueError(f"zero tangent at collocation entry {i}")
        tangents[i] = t / n

    frames = np.empty((len(tangents), 3, 3))
    e1 = tangents[0]
    e2 = _stable_normal(e1)
    e3 = np.cross(e1, e2)
    frames[0] = np.vstack([e1, e2, e3])

    for i in range(1, len(tangents)):
        t_prev, t_cur = tangents[i - 1], tangents[i]
        axis = np.cross(t_prev, t_cur)
        an = np.linalg.norm(axis)
        if an < 1e-12:
            e2n = frames[i - 1, 1]
        else:
            axis = axis / an
            angle = np.arccos(np.clip(np.dot(t_prev, t_cur), -1.0, 1.0))
            e2n = _rotate_about(frames[i - 1, 1], axis, angle)
        e2n = e2n - np.dot(e2n, t_cur) * t_cur
        e2n = e2n / np.linalg.norm(e2n)
        frames[i] = np.vstack([t_cur, e2n, np.cross(t_cur, e2n)])

    if twist_angle != 0.0:
        c, s = np.cos(twist_angle), np.sin(twist_angle)
        for i in range(len(frames)):
            e2, e3 = frames[i, 1].copy(), frames[i, 2].copy()
            frames[i, 1] = c * e2 + s * e3
            frames[i, 2] = -s * e2 + c * e3
    return FrameSet(frames=frames)


@dataclass
class TensorField:
    """Symmetric positive-definite 3x3 matrix per tet."""

    per_tet: np.ndarray  # (m, 3, 3)

    @classmethod
    def identity(cls, n_tets):
        return cls(per_tet=np.broadcast_to(np.eye(3), (n_tets, 3, 3)).copy())


def build_tensor_field(mesh, frames, colloc, eigenvalues):
    """Harmonically propagate frames and assemble the per-tet tensor field.

    Vertices of collocation tets are pinned to the nearest collocation
    frame (ties to the lower entry index); the nine frame components fill
    the rest of the mesh as harmonic fields sharing one factorization.
    """
    lam = np.asarray(eigenvalues, dtype=np.float64)
    if lam.shape != (3,) or np.any(lam <= 0):
        raise ValueError("eigenvalues must be three positive numbers")
    if colloc is None or not len(colloc.entries):
        return TensorField.identity(mesh.n_tets)

    n = mesh.n_vertices
    seed_frame = np.full(n, -1, dtype=np.int64)
    seed_dist = np.full(n, np.inf)
    for idx, e in enumerate(colloc.entries):
        for v in mesh.tets[e.tet_id]:
            d = np.linalg.norm(mesh.vertices[v] - e.point)
            if d < seed_dist[v] - 1e-15:
                seed_dist[v] = d
                seed_frame[v] = idx
    fixed_ids = np.nonzero(seed_frame >= 0)[0]

    values = np.zeros((n, 9))
    Fr = frames.frames
    values[fixed_ids] = Fr[seed_frame[fixed_ids]].reshape(len(fixed_ids), 9)

    L = tetmesh.cotan_laplacian(mesh)
    free = np.ones(n, dtype=bool)
    free[fixed_ids] = False
    free_ids = np.nonzero(free)[0]
    if len(free_ids):
        Lff = L[free_ids][:, free_ids].tocsc()
        Lfk = L[free_ids][:, fixed_ids].tocsr()
        try:
            lu = splu(Lff)
        except RuntimeError as exc:
            raise SolverError(f"singular harmonic system: {exc}") from exc
        rhs = -(Lfk @ values[fixed_ids])
        for c in range(9):
            values[free_ids, c] = lu.solve(rhs[:, c])

    Q = values.reshape(n, 3, 3)
    U = _project_rotations(Q)
    vert_tensors = np.einsum("nji,j,njk->nik", U, lam, U)
    vert_tensors = 0.5 * (vert_tensors + vert_tensors.transpose(0, 2, 1))
    vert_tensors = _clamp_spd(vert_tensors, EIG_CLAMP)

    tet_tensors = vert_tensors[mesh.tets].mean(axis=1)
    return TensorField(per_tet=tet_tensors)


def _project_rotations(Q):
    """Nearest rotation matrices (polar projection with det fix)."""
    W, _, Vt = np.linalg.svd(Q)
    U = W @ Vt
    det = np.linalg.det(U)
    neg = det < 0
    if np.any(neg):
        Wn = W[neg].copy()
        Wn[:, :, -1] *= -1.0
        U[neg] = Wn @ Vt[neg]
    return U


def _clamp_spd(T, floor):
    w, V = np.linalg.eigh(T)
    if w.min() >= floor:
        return T
    w = np.maximum(w, floor)
    return np.einsum("nik,nk,njk->nij", V, w, V)
