"""Constrained Dirichlet solves for the muscle and fat tissue fields.

Each tissue field minimizes  f^T L f + alpha ||B f - d||^2  subject to
hard values on skin vertices: 0 for muscles, d_fat for fat. B stacks the
barycentric rows of every curve's collocation points, so each muscle is
softly pinned to its own tissue values and to zero at all other curves.
Bone interfaces carry no constraint (natural, zero normal derivative).
"""

import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from . import anisotropy, curves as curves_mod, tetmesh
from .errors import SolverError

DEFAULT_ALPHA = 5.0          # smoothness / collocation tradeoff
DEFAULT_D_FAT_FRACTION = 0.3  # of the mean tissue value, when unspecified
FAT_ID = 0


@dataclass
class SolveParams:
    alpha: float = DEFAULT_ALPHA
    d_fat: float | None = None
    exclude_open_boundary: bool = False
    samples_per_span: int = curves_mod.DEFAULT_SAMPLES_PER_SPAN

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.d_fat is not None and self.d_fat < 0:
            raise ValueError("d_fat must be non-negative")


@dataclass
class TissueFieldSet:
    """Per-vertex scalar fields, one per muscle plus fat."""

    muscle_ids: list
    muscle_fields: dict          # id -> (n,) array
    fat_field: np.ndarray
    alpha: float = DEFAULT_ALPHA
    d_fat: float = 0.0
    metadata: dict = field(default_factory=dict)

    @property
    def tissue_ids(self):
        """Muscles ascending, fat (id 0) last."""
        return list(self.muscle_ids) + [FAT_ID]

    def values_matrix(self):
        """(n_tissues, n_vertices) array in tissue_ids order."""
        rows = [self.muscle_fields[i] for i in self.muscle_ids] + [self.fat_field]
        return np.vstack(rows) if rows else np.zeros((0, 0))

    def vertex_values(self, vertex_ids):
        return self.values_matrix()[:, vertex_ids]


def solve_quadratic(L, B, d, alpha, fixed_ids, fixed_vals, factor=None):
    """argmin x^T L x + alpha ||B x - d||^2  with x[fixed_ids] = fixed_vals.

    Fixed unknowns are eliminated; the remaining SPD system is solved with
    a sparse LU. Pass a _FactoredSystem to reuse a factorization across
    right-hand sides.
    """
    n = L.shape[0]
    fixed_ids = np.asarray(fixed_ids, dtype=np.int64)
    fixed_vals = np.asarray(fixed_vals, dtype=np.float64)
    if len(np.unique(fixed_ids)) != len(fixed_ids):
        raise SolverError("fixed_ids must be distinct")
    if factor is None:
        factor = factor_system(L, B, alpha, fixed_ids)
    rhs = alpha * (B.T @ d) if (B is not None and B.shape[0]) else np.zeros(n)
    return factor.solve(rhs, fixed_vals)


def factor_system(L, B, alpha, fixed_ids):
    """Eliminate fixed unknowns from L + alpha B^T B and factor the rest."""
    n = L.shape[0]
    H = L.tocsr()
    if B is not None and B.shape[0]:
        H = (H + alpha * (B.T @ B)).tocsr()
    fixed_ids = np.asarray(fixed_ids, dtype=np.int64)
    free_mask = np.ones(n, dtype=bool)
    free_mask[fixed_ids] = False
    free_ids = np.nonzero(free_mask)[0]
    Hff = H[free_ids][:, free_ids].tocsc()
    Hfk = H[free_ids][:, fixed_ids].tocsr()
    lu = None
    if len(free_ids):
        try:
            lu = splu(Hff)
        except RuntimeError as exc:
            raise SolverError(f"free system singular: {exc}") from exc
    return _FactoredSystem(n, free_ids, fixed_ids, Hfk, lu)


class _FactoredSystem:
    """Cached elimination + LU for one (L, B, alpha, fixed set) tuple.

    The LU triangular solve is serialized with a lock so concurrent
    per-tissue solves stay deterministic and safe.
    """

    def __init__(self, n, free_ids, fixed_ids, Hfk, lu):
        self.n = n
        self.free_ids = free_ids
        self.fixed_ids = fixed_ids
        self.Hfk = Hfk
        self.lu = lu
        self._lock = threading.Lock()

    def solve(self, rhs, fixed_vals):
        x = np.zeros(self.n)
        x[self.fixed_ids] = fixed_vals
        if len(self.free_ids):
            b = rhs[self.free_ids] - self.Hfk @ np.asarray(fixed_vals, dtype=np.float64)
            with self._lock:
                xf = self.lu.solve(b)
            if not np.all(np.isfinite(xf)):
                raise SolverError("non-finite solution (singular reduced system?)")
            x[self.free_ids] = xf
        return x


def _max_workers():
    env = os.environ.get("MYOVOX_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return min(8, os.cpu_count() or 1)


class TissueSolver:
    """Holds traced curves, constraint rows, and cached factorizations.

    The isotropic system matrix L_c + alpha B^T B is shared by every
    isotropic muscle and by fat (their right-hand sides differ), so one
    factorization serves them all. Anisotropic muscles factor their own
    tensor-weighted system. Tissue-value-only edits change just the
    right-hand side and re-solve in a single back-substitution.
    """

    def __init__(self, mesh, curve_list, params=None):
        self.mesh = mesh
        self.params = params or SolveParams()
        self.curves = {c.id: c for c in curve_list}
        if len(self.curves) != len(curve_list):
            raise ValueError("duplicate curve ids")
        self.muscle_ids = sorted(self.curves)
        self._trace_all()
        self._assemble()

    # -- assembly ------------------------------------------------------

    def _trace_all(self):
        self.collocations = {}
        for cid in self.muscle_ids:
            self.collocations[cid] = curves_mod.trace_collocation(
                self.mesh, self.curves[cid],
                samples_per_span=self.params.samples_per_span)

    def _assemble(self):
        mesh = self.mesh
        self.L_iso = tetmesh.cotan_laplacian(mesh)
        blocks = []
        targets = []
        self.row_ranges = {}
        row = 0
        for cid in self.muscle_ids:
            cs = curves_mod.assemble_constraints(mesh, self.collocations[cid])
            blocks.append(cs.B)
            targets.append(cs.d)
            self.row_ranges[cid] = (row, row + cs.B.shape[0])
            row += cs.B.shape[0]
        if blocks:
            self.B = sparse.vstack(blocks).tocsr()
            self.targets = np.concatenate(targets)
        else:
            self.B = sparse.csr_matrix((0, mesh.n_vertices))
            self.targets = np.zeros(0)

        fixed = mesh.skin_mask.copy()
        if self.params.exclude_open_boundary:
            fixed &= ~mesh.open_boundary_mask
        self.fixed_ids = np.nonzero(fixed)[0]
        if not len(self.fixed_ids) and not self.B.shape[0]:
            raise SolverError("no constraints at all: fields are undetermined")

        # alpha weighs smoothness against the MEAN squared collocation
        # violation: dividing by the row count keeps the tradeoff invariant
        # under mesh refinement and added curves (and keeps the discrete
        # maximum principle intact at the default alpha)
        self.alpha_eff = self.params.alpha / max(1, self.B.shape[0])

        self._iso_factor = factor_system(self.L_iso, self.B,
                                         self.alpha_eff, self.fixed_ids)
        self._aniso_factors = {}
        for cid in self.muscle_ids:
            c = self.curves[cid]
            if c.is_isotropic:
                continue
            frames = anisotropy.propagate_frames(self.collocations[cid], c.twist_angle)
            tensors = anisotropy.build_tensor_field(
                mesh, frames, self.collocations[cid], c.eigenvalues)
            L_a = tetmesh.anisotropic_laplacian(mesh, tensors)
            self._aniso_factors[cid] = factor_system(
                L_a, self.B, self.alpha_eff, self.fixed_ids)

    # -- solving -------------------------------------------------------

    def effective_d_fat(self):
        if self.params.d_fat is not None:
            return float(self.params.d_fat)
        vals = [v for c in self.curves.values() for v in c.tissue_values]
        scale = float(np.mean(vals)) if vals else 1.0
        return DEFAULT_D_FAT_FRACTION * scale

    def _muscle_rhs(self, cid):
        d = np.zeros(self.B.shape[0])
        lo, hi = self.row_ranges[cid]
        d[lo:hi] = self.targets[lo:hi]
        return d

    def solve_muscle(self, cid):
        factor = self._aniso_factors.get(cid, self._iso_factor)
        d = self._muscle_rhs(cid)
        rhs = self.alpha_eff * (self.B.T @ d) if self.B.shape[0] else np.zeros(self.mesh.n_vertices)
        try:
            return factor.solve(rhs, np.zeros(len(self.fixed_ids)))
        except SolverError as exc:
            raise SolverError(f"muscle {cid}: {exc}") from exc

    def solve_fat(self, d_fat):
        rhs = np.zeros(self.mesh.n_vertices)
        try:
            return self._iso_factor.solve(rhs, np.full(len(self.fixed_ids), d_fat))
        except SolverError as exc:
            raise SolverError(f"fat: {exc}") from exc

    def solve_all(self, parallel=False):
        d_fat = self.effective_d_fat()
        fields = {}
        if parallel and self.muscle_ids:
            with ThreadPoolExecutor(max_workers=_max_workers()) as pool:
                futs = {cid: pool.submit(self.solve_muscle, cid)
                        for cid in self.muscle_ids}
                for cid, fut in futs.items():
                    fields[cid] = fut.result()
        else:
            for cid in self.muscle_ids:
                fields[cid] = self.solve_muscle(cid)
        fat = self.solve_fat(d_fat)
        return TissueFieldSet(
            muscle_ids=list(self.muscle_ids),
            muscle_fields=fields,
            fat_field=fat,
            alpha=self.params.alpha,
            d_fat=d_fat,
            metadata={"n_vertices": self.mesh.n_vertices,
                      "n_collocations": int(self.B.shape[0]),
                      "alpha_effective": self.alpha_eff},
        )

    def update_tissue_values(self, cid, tissue_values):
        """Re-target one curve's collocation rows without re-factoring.

        Only valid while the curve's geometry is unchanged; returns the
        re-solved field for that muscle.
        """
        c = self.curves[cid]
        tissue_values = np.asarray(tissue_values, dtype=np.float64)
        if len(tissue_values) != len(c.control_points):
            raise ValueError("one tissue value per control point required")
        newc = curves_mod.MuscleCurve(
            id=cid, control_points=c.control_points, tissue_values=tissue_values,
            twist_angle=c.twist_angle, eigenvalues=c.eigenvalues)
        self.curves[cid] = newc
        vs = newc.value_spline()
        lo, hi = self.row_ranges[cid]
        for r, e in zip(range(lo, hi), self.collocations[cid].entries):
            mid = 0.5 * (e.s_range[0] + e.s_range[1])
            val = float(vs.evaluate(mid)[0])
            e.tissue_value = val
            self.targets[r] = val
        return self.solve_muscle(cid)


def solve_tissue_fields(mesh, curve_list, params=None, parallel=False):
    """One-shot solve of every muscle field plus fat over the mesh."""
    solver = TissueSolver(mesh, curve_list, params)
    return solver.solve_all(parallel=parallel)
