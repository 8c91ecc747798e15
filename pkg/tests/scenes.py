"""Solved scenes shared by renderer, pipeline, and acceptance tests."""

import numpy as np

from myovox.curves import MuscleCurve
from myovox.field_solver import SolveParams, solve_tissue_fields
from myovox.raycast import Camera

from meshes import grid_mesh


def line_curve(a, b, values, cid=1):
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    pts = np.array([a + t * (b - a) for t in np.linspace(0, 1, 4)])
    return MuscleCurve(id=cid, control_points=pts,
                       tissue_values=np.asarray(values, float))


def two_muscle_scene(n=6):
    mesh = grid_mesh(n, n, n)
    curves = [
        line_curve([0.2, 0.3, 0.5], [0.8, 0.3, 0.5], [1.0, 1.3, 1.3, 1.0], cid=1),
        line_curve([0.2, 0.7, 0.5], [0.8, 0.7, 0.5], [1.1, 1.1, 1.1, 1.1], cid=2),
    ]
    fields = solve_tissue_fields(mesh, curves, SolveParams(d_fat=0.25))
    return mesh, curves, fields


def blob_muscle_scene(n=6):
    """One compact muscle in the cube center (spherical-ish isosurface)."""
    mesh = grid_mesh(n, n, n)
    curves = [line_curve([0.38, 0.5, 0.5], [0.62, 0.5, 0.5],
                         [1.5, 1.8, 1.8, 1.5], cid=1)]
    fields = solve_tissue_fields(mesh, curves, SolveParams(d_fat=0.3))
    return mesh, curves, fields


def front_camera(w=48, h=48):
    return Camera(eye=np.array([0.5, 0.5, 3.2]),
                  look_at=np.array([0.5, 0.5, 0.5]),
                  up=np.array([0.0, 1.0, 0.0]),
                  vertical_fov=30.0, width=w, height=h)
