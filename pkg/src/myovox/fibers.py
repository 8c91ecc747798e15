"""Per-muscle fiber direction fields.

A scalar potential flows from one curve endpoint (0) to the other (1)
across the muscle mesh; a penalty aligns its gradient with the curve
tangent inside every curve-crossing tet. Fiber directions are the
normalized per-tet gradients.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import curves as curves_mod, field_solver, tetmesh
from .errors import SolverError, TraceError

DEFAULT_ALPHA = 50.0
DEFAULT_ENDPOINT_RADIUS_FRACTION = 0.025  # of the muscle bbox diagonal


@dataclass
class FiberField:
    potential: np.ndarray    # per-vertex scalar u
    directions: np.ndarray   # per-tet unit 3-vectors
    crossing_tets: np.ndarray

    def to_rows(self, mesh):
        cents = mesh.vertices[mesh.tets].mean(axis=1)
        return [(int(i), cents[i].tolist(), self.directions[i].tolist())
                for i in range(mesh.n_tets)]


def _null_space(t):
    ref = np.array([0.0, 0.0, 1.0]) if abs(t[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    n1 = np.cross(t, ref)
    n1 /= np.linalg.norm(n1)
    n2 = np.cross(t, n1)
    n2 /= np.linalg.norm(n2)
    return n1, n2


def tangent_alignment_rows(mesh, colloc):
    """Rows penalizing the two off-tangent gradient components per
    curve-crossing tet (the N G product of the alignment energy)."""
    G = tetmesh.gradient_operator(mesh).tocsr()
    rows = []
    for e in colloc.entries:
        n1, n2 = _null_space(e.tangent / np.linalg.norm(e.tangent))
        block = G[3 * e.tet_id:3 * e.tet_id + 3]
        rows.append(sparse.csr_matrix(n1) @ block)
        rows.append(sparse.csr_matrix(n2) @ block)
    if not rows:
        return sparse.csr_matrix((0, mesh.n_vertices))
    return sparse.vstack(rows).tocsr()


def solve_fiber_field(muscle_mesh, curve, alpha=DEFAULT_ALPHA,
                      endpoint_radius=None):
    """Solve the curve-aligned potential and return the fiber field.

    Vertices within endpoint_radius of the curve's first/last points are
    pinned to 0 and 1. Tets the curve never crosses contribute only
    smoothness; tets with a vanishing gradient copy the direction of the
    nearest tet with a valid one.
    """
    if muscle_mesh.n_tets == 0:
        raise SolverError("empty muscle mesh")
    if endpoint_radius is None:
        endpoint_radius = DEFAULT_ENDPOINT_RADIUS_FRACTION * muscle_mesh.bbox_diagonal

    colloc = curves_mod.trace_collocation(muscle_mesh, curve, allow_exit=True)
    if not colloc.entries:
        raise TraceError(f"curve {curve.id} misses the muscle mesh")

    spline = curve.spline()
    p_start = spline.evaluate(0.0)
    p_end = spline.evaluate(1.0)
    d_start = np.linalg.norm(muscle_mesh.vertices - p_start, axis=1)
    d_end = np.linalg.norm(muscle_mesh.vertices - p_end, axis=1)
    start_ids = np.nonzero(d_start <= endpoint_radius)[0]
    end_ids = np.nonzero((d_end <= endpoint_radius) & (d_start > endpoint_radius))[0]
    if not len(start_ids) or not len(end_ids):
        raise SolverError("endpoint radius too small: empty start or end set")

    L = tetmesh.cotan_laplacian(muscle_mesh)
    B = tangent_alignment_rows(muscle_mesh, colloc)
    fixed_ids = np.concatenate([start_ids, end_ids])
    fixed_vals = np.concatenate([np.zeros(len(start_ids)), np.ones(len(end_ids))])
    u = field_solver.solve_quadratic(L, B, np.zeros(B.shape[0]), alpha,
                                     fixed_ids, fixed_vals)

    G = tetmesh.gradient_operator(muscle_mesh)
    grads = (G @ u).reshape(-1, 3)
    norms = np.linalg.norm(grads, axis=1)
    valid = norms > 1e-12
    dirs = np.zeros_like(grads)
    dirs[valid] = grads[valid] / norms[valid][:, None]
    if not valid.all():
        if not valid.any():
            raise SolverError("gradient vanishes on every tet")
        cents = muscle_mesh.vertices[muscle_mesh.tets].mean(axis=1)
        good = np.nonzero(valid)[0]
        for ti in np.nonzero(~valid)[0]:
            nearest = good[np.argmin(np.linalg.norm(cents[good] - cents[ti], axis=1))]
            dirs[ti] = dirs[nearest]
    return FiberField(potential=u, directions=dirs,
                      crossing_tets=np.asarray(colloc.tet_ids(), dtype=np.int64))


def alignment_energy(mesh, colloc, u):
    """(N G u)^T (N G u): total squared off-tangent gradient component."""
    B = tangent_alignment_rows(mesh, colloc)
    r = B @ u
    return float(r @ r)
