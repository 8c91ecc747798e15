import numpy as np
import pytest

from myovox.anisotropy import (FrameSet, TensorField, build_tensor_field,
                               propagate_frames)
from myovox.curves import MuscleCurve, trace_collocation
from myovox.field_solver import SolveParams, solve_tissue_fields

from meshes import grid_mesh


def traced_line(mesh, a, b, cid=1, values=(1, 1, 1, 1.0)):
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    pts = np.array([a + t * (b - a) for t in np.linspace(0, 1, 4)])
    curve = MuscleCurve(id=cid, control_points=pts,
                        tissue_values=np.asarray(values, float))
    return curve, trace_collocation(mesh, curve)


def arc_collocation(n=40, radius=1.0):
    """Synthetic 90-degree planar arc collocation chain (no mesh needed)."""
    from myovox.curves import CollocationEntry, CollocationSet
    theta = np.linspace(0, np.pi / 2, n)
    entries = []
    for t in theta:
        p = radius * np.array([np.cos(t), np.sin(t), 0.0])
        tan = np.array([-np.sin(t), np.cos(t), 0.0])
        entries.append(CollocationEntry(tet_id=0, point=p,
                                        barycentric=np.full(4, 0.25),
                                        tissue_value=1.0, tangent=tan))
    return CollocationSet(curve_id=1, entries=entries)


# ----------------------------------------------------------------------
# frames

def test_straight_curve_frames_identical():
    mesh = grid_mesh(4, 4, 4)
    _, colloc = traced_line(mesh, [0.1, 0.5, 0.5], [0.9, 0.5, 0.5])
    fr = propagate_frames(colloc)
    for Q in fr.frames:
        assert np.abs(Q - fr.frames[0]).max() < 1e-9
        assert np.abs(Q @ Q.T - np.eye(3)).max() < 1e-9
        assert np.linalg.det(Q) == pytest.approx(1.0, abs=1e-9)


def test_frames_tangent_aligned():
    mesh = grid_mesh(4, 4, 4)
    pts = np.array([[0.15, 0.2, 0.5], [0.4, 0.55, 0.45],
                    [0.6, 0.45, 0.55], [0.88, 0.75, 0.5]])
    curve = MuscleCurve(id=1, control_points=pts, tissue_values=np.ones(4))
    colloc = trace_collocation(mesh, curve)
    fr = propagate_frames(colloc)
    for Q, e in zip(fr.frames, colloc.entries):
        assert np.linalg.norm(np.cross(Q[0], e.tangent)) < 1e-6


def test_planar_arc_zero_twist():
    colloc = arc_collocation()
    fr = propagate_frames(colloc, twist_angle=0.0)
    # e2 must stay in the arc plane (z = 0 normal): parallel transport on a
    # planar curve accumulates no twist
    for Q in fr.frames:
        assert abs(Q[1] @ np.array([0, 0, 1.0])) < 1e-6 or \
            abs(abs(Q[1] @ np.array([0, 0, 1.0])) - 1.0) < 1e-6
    # accumulated rotation of e2 about e1 relative to transported start
    in_plane = [abs(Q[2] @ np.array([0, 0, 1.0])) for Q in fr.frames]
    spread = max(in_plane) - min(in_plane)
    assert spread < 1e-6


def test_quarter_twist_relabels_axes():
    mesh = grid_mesh(4, 4, 4)
    _, colloc = traced_line(mesh, [0.1, 0.5, 0.5], [0.9, 0.5, 0.5])
    plain = propagate_frames(colloc, twist_angle=0.0)
    quart = propagate_frames(colloc, twist_angle=np.pi / 2)
    assert np.abs(quart.frames[0][1] - plain.frames[0][2]).max() < 1e-12


def test_zero_tangent_rejected():
    from myovox.curves import CollocationEntry, CollocationSet
    cs = CollocationSet(curve_id=1, entries=[
        CollocationEntry(tet_id=0, point=np.zeros(3),
                         barycentric=np.full(4, 0.25), tissue_value=1.0,
                         tangent=np.zeros(3))])
    with pytest.raises(ValueError):
        propagate_frames(cs)


# ----------------------------------------------------------------------
# tensor field

def test_isotropic_eigenvalues_give_identity():
    mesh = grid_mesh(4, 4, 4)
    pts = np.array([[0.15, 0.2, 0.5], [0.4, 0.55, 0.45],
                    [0.6, 0.45, 0.55], [0.88, 0.75, 0.5]])
    curve = MuscleCurve(id=1, control_points=pts, tissue_values=np.ones(4))
    colloc = trace_collocation(mesh, curve)
    fr = propagate_frames(colloc, twist_angle=0.7)
    tf = build_tensor_field(mesh, fr, colloc, (1.0, 1.0, 1.0))
    assert np.abs(tf.per_tet - np.eye(3)).max() < 1e-8


def test_axis_curve_tensor_in_collocation_tets():
    mesh = grid_mesh(5, 5, 5)
    _, colloc = traced_line(mesh, [0.1, 0.5, 0.5], [0.9, 0.5, 0.5])
    fr = propagate_frames(colloc)
    tf = build_tensor_field(mesh, fr, colloc, (4.0, 1.0, 1.0))
    want = np.diag([4.0, 1.0, 1.0])
    for e in colloc.entries:
        assert np.abs(tf.per_tet[e.tet_id] - want).max() < 1e-6


def test_single_seed_constant_field():
    mesh = grid_mesh(3, 3, 3)
    from myovox.curves import CollocationEntry, CollocationSet
    c = mesh.vertices[mesh.tets[0]].mean(axis=0)
    colloc = CollocationSet(curve_id=1, entries=[
        CollocationEntry(tet_id=0, point=c, barycentric=np.full(4, 0.25),
                         tissue_value=1.0, tangent=np.array([1.0, 0, 0]))])
    fr = propagate_frames(colloc)
    tf = build_tensor_field(mesh, fr, colloc, (4.0, 2.0, 1.0))
    seed = tf.per_tet[0]
    assert np.abs(tf.per_tet - seed).max() < 1e-8


def test_no_collocation_gives_identity():
    mesh = grid_mesh(2, 2, 2)
    from myovox.curves import CollocationSet
    tf = build_tensor_field(mesh, FrameSet(frames=np.zeros((0, 3, 3))),
                            CollocationSet(curve_id=1, entries=[]),
                            (4.0, 1.0, 1.0))
    assert np.abs(tf.per_tet - np.eye(3)).max() == 0.0


def test_all_tensors_spd():
    mesh = grid_mesh(4, 4, 4)
    pts = np.array([[0.15, 0.2, 0.5], [0.4, 0.55, 0.45],
                    [0.6, 0.45, 0.55], [0.88, 0.75, 0.5]])
    curve = MuscleCurve(id=1, control_points=pts, tissue_values=np.ones(4))
    colloc = trace_collocation(mesh, curve)
    fr = propagate_frames(colloc, twist_angle=0.3)
    tf = build_tensor_field(mesh, fr, colloc, (1.0, 6.0, 0.5))
    eig = np.linalg.eigvalsh(tf.per_tet)
    assert eig.min() >= 1e-6 - 1e-12
    sym = np.abs(tf.per_tet - tf.per_tet.transpose(0, 2, 1)).max()
    assert sym < 1e-10


def test_degenerate_eigenspace_twist_invariance():
    mesh = grid_mesh(4, 4, 4)
    pts = np.array([[0.15, 0.2, 0.5], [0.4, 0.55, 0.45],
                    [0.6, 0.45, 0.55], [0.88, 0.75, 0.5]])
    curve = MuscleCurve(id=1, control_points=pts, tissue_values=np.ones(4))
    colloc = trace_collocation(mesh, curve)
    t0 = build_tensor_field(mesh, propagate_frames(colloc, 0.0), colloc,
                            (1.0, 3.0, 3.0))
    t1 = build_tensor_field(mesh, propagate_frames(colloc, 1.1), colloc,
                            (1.0, 3.0, 3.0))
    assert np.abs(t0.per_tet - t1.per_tet).max() < 1e-8


def test_unit_eigenvalue_solve_matches_isotropic():
    # run the full anisotropic machinery (frames -> tensors -> weighted
    # Laplacian -> solve) with unit eigenvalues and compare to the
    # isotropic solve vertexwise
    from myovox.field_solver import TissueSolver, factor_system
    from myovox.tetmesh import anisotropic_laplacian

    mesh = grid_mesh(4, 4, 4)
    pts = np.array([[0.15, 0.2, 0.5], [0.4, 0.55, 0.45],
                    [0.6, 0.45, 0.55], [0.88, 0.75, 0.5]])
    iso = MuscleCurve(id=1, control_points=pts, tissue_values=np.ones(4))
    solver = TissueSolver(mesh, [iso], SolveParams(d_fat=0.3))
    f_iso = solver.solve_muscle(1)

    colloc = solver.collocations[1]
    fr = propagate_frames(colloc, twist_angle=0.4)
    tf = build_tensor_field(mesh, fr, colloc, (1.0, 1.0, 1.0))
    L_a = anisotropic_laplacian(mesh, tf)
    factor = factor_system(L_a, solver.B, solver.alpha_eff, solver.fixed_ids)
    rhs = solver.alpha_eff * (solver.B.T @ solver._muscle_rhs(1))
    f_aniso = factor.solve(rhs, np.zeros(len(solver.fixed_ids)))
    assert np.abs(f_iso - f_aniso).max() < 1e-8
