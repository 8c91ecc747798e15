import numpy as np
import pytest
from scipy.sparse import csr_matrix

from myovox.curves import MuscleCurve
from myovox.errors import SolverError
from myovox.field_solver import (SolveParams, TissueSolver, solve_quadratic,
                                 solve_tissue_fields)
from myovox.tetmesh import cotan_laplacian

from meshes import delaunay_mesh, grid_mesh, mirrored_grid_mesh


def line_curve(a, b, values, cid=1):
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    pts = np.array([a + t * (b - a) for t in np.linspace(0, 1, 4)])
    return MuscleCurve(id=cid, control_points=pts,
                       tissue_values=np.asarray(values, float))


# ----------------------------------------------------------------------
# solve_quadratic kernel

def test_harmonic_reproduces_linear_function():
    m = grid_mesh(4, 4, 4)
    L = cotan_laplacian(m)
    lin = 1.0 + 2.0 * m.vertices[:, 0] - 0.5 * m.vertices[:, 1]
    fixed = np.nonzero(m.skin_mask)[0]
    x = solve_quadratic(L, csr_matrix((0, m.n_vertices)), np.zeros(0), 1.0,
                        fixed, lin[fixed])
    assert np.abs(x - lin).max() < 1e-8


def test_all_vertices_fixed_returns_values_verbatim():
    m = grid_mesh(2, 2, 2)
    L = cotan_laplacian(m)
    vals = np.arange(m.n_vertices, dtype=float)
    x = solve_quadratic(L, csr_matrix((0, m.n_vertices)), np.zeros(0), 1.0,
                        np.arange(m.n_vertices), vals)
    assert np.array_equal(x, vals)


def test_penalty_limit_pins_constrained_vertex():
    m = grid_mesh(3, 3, 3)
    L = cotan_laplacian(m)
    free_target = np.nonzero(~m.skin_mask)[0][0]
    B = csr_matrix((np.ones(1), (np.zeros(1, int), [free_target])),
                   shape=(1, m.n_vertices))
    d = np.array([0.7])
    fixed = np.nonzero(m.skin_mask)[0]
    x = solve_quadratic(L, B, d, 1e9, fixed, np.zeros(len(fixed)))
    assert abs(x[free_target] - 0.7) < 1e-5


def test_duplicate_fixed_ids_rejected():
    m = grid_mesh(2, 2, 2)
    L = cotan_laplacian(m)
    with pytest.raises(SolverError):
        solve_quadratic(L, csr_matrix((0, m.n_vertices)), np.zeros(0), 1.0,
                        np.array([0, 0]), np.zeros(2))


# ----------------------------------------------------------------------
# tissue fields

def test_no_curves_constant_fat():
    m = grid_mesh(3, 3, 3)
    fs = solve_tissue_fields(m, [], SolveParams(d_fat=1.0))
    assert np.abs(fs.fat_field - 1.0).max() < 1e-10
    assert fs.muscle_ids == []


def test_maximum_principle_single_curve():
    for seed, mesh in [(0, grid_mesh(5, 5, 5)),
                       (1, delaunay_mesh(n=200, seed=1)),
                       (2, grid_mesh(4, 6, 5))]:
        curve = line_curve([0.2, 0.45, 0.5], [0.8, 0.55, 0.5], [1, 1, 1, 1.0])
        fs = solve_tissue_fields(mesh, [curve], SolveParams(d_fat=0.3))
        f = fs.muscle_fields[1]
        assert f.min() >= -1e-6
        assert f.max() <= 1.0 + 1e-6


def test_mirrored_curves_give_mirrored_fields():
    m = mirrored_grid_mesh(3, 3, 3)
    c1 = line_curve([0.25, 0.3, 0.5], [0.75, 0.7, 0.5], [1, 1, 1, 1.0], cid=1)
    c2 = line_curve([-0.25, 0.3, 0.5], [-0.75, 0.7, 0.5], [1, 1, 1, 1.0], cid=2)
    fs = solve_tissue_fields(m, [c1, c2], SolveParams(d_fat=0.3))

    key = {tuple(np.round(v, 10)): i for i, v in enumerate(m.vertices)}
    mirror = np.array([key[tuple(np.round(v * [-1, 1, 1], 10))]
                       for v in m.vertices])
    f1 = fs.muscle_fields[1]
    f2 = fs.muscle_fields[2]
    assert np.abs(f1 - f2[mirror]).max() < 1e-8
    assert np.abs(fs.fat_field - fs.fat_field[mirror]).max() < 1e-8


def test_scaling_linearity():
    m = grid_mesh(4, 4, 4)
    c = line_curve([0.2, 0.5, 0.5], [0.8, 0.5, 0.5], [1.0, 2.0, 1.5, 1.0])
    a = solve_tissue_fields(m, [c], SolveParams(d_fat=0.4))
    c2 = line_curve([0.2, 0.5, 0.5], [0.8, 0.5, 0.5], [2.0, 4.0, 3.0, 2.0])
    b = solve_tissue_fields(m, [c2], SolveParams(d_fat=0.8))
    assert np.abs(2 * a.muscle_fields[1] - b.muscle_fields[1]).max() < 1e-9
    assert np.abs(2 * a.fat_field - b.fat_field).max() < 1e-9


def test_parallel_solves_bitwise_identical():
    m = grid_mesh(4, 4, 4)
    cs = [line_curve([0.2, 0.35, 0.5], [0.8, 0.35, 0.5], [1, 1, 1, 1.0], cid=1),
          line_curve([0.2, 0.65, 0.5], [0.8, 0.65, 0.5], [1.2, 1.2, 1.2, 1.2], cid=2),
          line_curve([0.2, 0.5, 0.25], [0.8, 0.5, 0.25], [0.8, 0.8, 0.8, 0.8], cid=3)]
    seq = solve_tissue_fields(m, cs, SolveParams(d_fat=0.3), parallel=False)
    par = solve_tissue_fields(m, cs, SolveParams(d_fat=0.3), parallel=True)
    for cid in (1, 2, 3):
        assert np.array_equal(seq.muscle_fields[cid], par.muscle_fields[cid])
    assert np.array_equal(seq.fat_field, par.fat_field)


def test_objective_optimality_under_perturbation():
    m = grid_mesh(3, 3, 3)
    c = line_curve([0.2, 0.5, 0.5], [0.8, 0.5, 0.5], [1, 1, 1, 1.0])
    solver = TissueSolver(m, [c], SolveParams(d_fat=0.3))
    f = solver.solve_muscle(1)
    L = solver.L_iso
    B = solver.B
    d = solver._muscle_rhs(1)
    alpha = solver.alpha_eff

    def objective(x):
        r = B @ x - d
        return x @ (L @ x) + alpha * (r @ r)

    base = objective(f)
    free = np.nonzero(~m.skin_mask)[0]
    rng = np.random.default_rng(7)
    for _ in range(50):
        dx = np.zeros(m.n_vertices)
        dx[free] = rng.standard_normal(len(free))
        dx *= 1e-3 / np.linalg.norm(dx)
        assert objective(f + dx) >= base - 1e-12


def test_update_tissue_values_matches_full_resolve():
    m = grid_mesh(4, 4, 4)
    c = line_curve([0.2, 0.5, 0.5], [0.8, 0.5, 0.5], [1, 1, 1, 1.0])
    solver = TissueSolver(m, [c], SolveParams(d_fat=0.3))
    solver.solve_all()
    f_inc = solver.update_tissue_values(1, [2.0, 2.0, 2.0, 2.0])

    c2 = line_curve([0.2, 0.5, 0.5], [0.8, 0.5, 0.5], [2, 2, 2, 2.0])
    fresh = solve_tissue_fields(m, [c2], SolveParams(d_fat=0.3))
    assert np.array_equal(f_inc, fresh.muscle_fields[1])


def test_default_d_fat_fraction_of_mean_tissue_value():
    m = grid_mesh(3, 3, 3)
    c = line_curve([0.2, 0.5, 0.5], [0.8, 0.5, 0.5], [2.0, 2.0, 2.0, 2.0])
    fs = solve_tissue_fields(m, [c])
    assert fs.d_fat == pytest.approx(0.3 * 2.0)
