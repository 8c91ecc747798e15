"""Structured box meshes for demos and tests.

Not a tetrahedralizer: real scenes come from external meshing of skin and
bone geometry. These 6-tet (Kuhn) grids conform across cells and give the
demo scene and the test suite something deterministic to chew on.
"""

import numpy as np

from .tetmesh import TetMesh

_PATHS = (
    ((1, 0, 0), (0, 1, 0), (0, 0, 1)),
    ((1, 0, 0), (0, 0, 1), (0, 1, 0)),
    ((0, 1, 0), (1, 0, 0), (0, 0, 1)),
    ((0, 1, 0), (0, 0, 1), (1, 0, 0)),
    ((0, 0, 1), (1, 0, 0), (0, 1, 0)),
    ((0, 0, 1), (0, 1, 0), (1, 0, 0)),
)


def box_grid(nx, ny, nz, lo=(0, 0, 0), hi=(1, 1, 1), tag_skin=True,
             bone_tet_predicate=None):
    """Kuhn-subdivided box grid: 6 tets per cell, conforming faces.

    bone_tet_predicate, when given, maps a tet centroid to True for tets
    that belong to bone.
    """
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    axes = [np.linspace(lo[a], hi[a], n + 1) for a, n in enumerate((nx, ny, nz))]

    def vid(i, j, k):
        return (k * (ny + 1) + j) * (nx + 1) + i

    verts = np.array([[axes[0][i], axes[1][j], axes[2][k]]
                      for k in range(nz + 1)
                      for j in range(ny + 1)
                      for i in range(nx + 1)])
    tets = []
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                corner = {(dx, dy, dz): vid(i + dx, j + dy, k + dz)
                          for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)}
                for path in _PATHS:
                    cur = (0, 0, 0)
                    ids = [corner[cur]]
                    for step in path:
                        cur = tuple(c + s for c, s in zip(cur, step))
                        ids.append(corner[cur])
                    tets.append(ids)
    tets = np.asarray(tets)

    skin = []
    if tag_skin:
        on = np.zeros(len(verts), dtype=bool)
        for a in range(3):
            on |= np.isclose(verts[:, a], lo[a]) | np.isclose(verts[:, a], hi[a])
        skin = np.nonzero(on)[0]

    bone = []
    if bone_tet_predicate is not None:
        cents = verts[tets].mean(axis=1)
        bone = [i for i, c in enumerate(cents) if bone_tet_predicate(c)]

    return TetMesh(verts, tets, skin_vertices=skin, bone_tet_ids=bone)
