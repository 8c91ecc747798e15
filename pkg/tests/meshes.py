"""Mesh builders shared across the test suite."""

import numpy as np

from myovox.tetmesh import TetMesh

_KUHN_PATHS = (
    ((1, 0, 0), (0, 1, 0), (0, 0, 1)),
    ((1, 0, 0), (0, 0, 1), (0, 1, 0)),
    ((0, 1, 0), (1, 0, 0), (0, 0, 1)),
    ((0, 1, 0), (0, 0, 1), (1, 0, 0)),
    ((0, 0, 1), (1, 0, 0), (0, 1, 0)),
    ((0, 0, 1), (0, 1, 0), (1, 0, 0)),
)


def regular_tet():
    V = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0],
                  [0.5, np.sqrt(3) / 2, 0.0],
                  [0.5, np.sqrt(3) / 6, np.sqrt(2.0 / 3.0)]])
    return TetMesh(V, np.array([[0, 1, 2, 3]]))


def unit_tet():
    V = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0], [0.0, 0, 1]])
    return TetMesh(V, np.array([[0, 1, 2, 3]]))


def cube6_arrays(origin=(0, 0, 0), size=1.0):
    o = np.asarray(origin, float)
    verts = []
    corners = {}
    for dz in (0, 1):
        for dy in (0, 1):
            for dx in (0, 1):
                corners[(dx, dy, dz)] = len(verts)
                verts.append(o + size * np.array([dx, dy, dz], float))
    tets = []
    for path in _KUHN_PATHS:
        cur = (0, 0, 0)
        ids = [corners[cur]]
        for step in path:
            cur = tuple(c + s for c, s in zip(cur, step))
            ids.append(corners[cur])
        tets.append(ids)
    return np.asarray(verts), np.asarray(tets)


def cube6(**kw):
    V, T = cube6_arrays(**kw)
    return TetMesh(V, T)


def grid_arrays(nx, ny, nz, lo=(0, 0, 0), hi=(1, 1, 1)):
    """Kuhn (6-tet) subdivision of a box grid; conforms across cells."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    xs = [np.linspace(lo[a], hi[a], n + 1) for a, n in enumerate((nx, ny, nz))]

    def vid(i, j, k):
        return (k * (ny + 1) + j) * (nx + 1) + i

    verts = np.array([[xs[0][i], xs[1][j], xs[2][k]]
                      for k in range(nz + 1)
                      for j in range(ny + 1)
                      for i in range(nx + 1)])
    tets = []
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                corner = {(dx, dy, dz): vid(i + dx, j + dy, k + dz)
                          for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)}
                for path in _KUHN_PATHS:
                    cur = (0, 0, 0)
                    ids = [corner[cur]]
                    for step in path:
                        cur = tuple(c + s for c, s in zip(cur, step))
                        ids.append(corner[cur])
                    tets.append(ids)
    return verts, np.asarray(tets)


def grid_mesh(nx, ny, nz, lo=(0, 0, 0), hi=(1, 1, 1), tag_skin=True,
              bone_tets=()):
    V, T = grid_arrays(nx, ny, nz, lo, hi)
    skin = []
    if tag_skin:
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        on = np.zeros(len(V), dtype=bool)
        for a in range(3):
            on |= np.isclose(V[:, a], lo[a]) | np.isclose(V[:, a], hi[a])
        skin = np.nonzero(on)[0]
    return TetMesh(V, T, skin_vertices=skin, bone_tet_ids=bone_tets)


def mirrored_grid_mesh(nx, ny, nz, tag_skin=True):
    """x-mirror-symmetric mesh: the grid on [0,1]^3 welded to its mirror."""
    V, T = grid_arrays(nx, ny, nz)
    Vm = V.copy()
    Vm[:, 0] = -Vm[:, 0]
    key = {tuple(np.round(v, 12)): i for i, v in enumerate(V)}
    remap = np.empty(len(V), dtype=np.int64)
    allV = list(V)
    for i, v in enumerate(Vm):
        k = tuple(np.round(v, 12))
        if k in key:
            remap[i] = key[k]
        else:
            key[k] = len(allV)
            remap[i] = len(allV)
            allV.append(v)
    allV = np.asarray(allV)
    Tm = remap[T]
    allT = np.vstack([T, Tm])
    skin = []
    if tag_skin:
        on = (np.isclose(np.abs(allV[:, 0]), 1.0)
              | np.isclose(allV[:, 1], 0) | np.isclose(allV[:, 1], 1)
              | np.isclose(allV[:, 2], 0) | np.isclose(allV[:, 2], 1))
        skin = np.nonzero(on)[0]
    return TetMesh(allV, allT, skin_vertices=skin)


def box_mesh(nx=8, ny=3, nz=3, hi=(1.0, 0.3, 0.3)):
    return grid_mesh(nx, ny, nz, lo=(0, 0, 0), hi=hi, tag_skin=False)


def l_shaped_mesh(n=8, thickness=0.25, depth=0.25):
    """L-shaped solid: a bar along x joined to a bar along y."""
    V, T = grid_arrays(n, n, max(2, n // 4), lo=(0, 0, 0),
                       hi=(1, 1, depth))
    cents = V[T].mean(axis=1)
    keep = (cents[:, 1] < thickness) | (cents[:, 0] > 1.0 - thickness)
    T = T[keep]
    used = np.unique(T)
    remap = np.searchsorted(used, T)
    return TetMesh(V[used], remap)


def delaunay_mesh(n=120, seed=0, jitter=0.25, tag_skin=True):
    """Delaunay tetrahedralization of a jittered grid in the unit cube."""
    from scipy.spatial import Delaunay
    rng = np.random.default_rng(seed)
    side = max(3, round(n ** (1 / 3)))
    g = np.linspace(0, 1, side)
    P = np.array([[x, y, z] for x in g for y in g for z in g])
    inner = ~((P == 0) | (P == 1)).any(axis=1)
    P[inner] += (rng.random(P[inner].shape) - 0.5) * jitter / side
    d = Delaunay(P)
    tets = d.simplices
    # drop slivers qhull sometimes leaves on the hull
    a = P[tets[:, 1]] - P[tets[:, 0]]
    b = P[tets[:, 2]] - P[tets[:, 0]]
    c = P[tets[:, 3]] - P[tets[:, 0]]
    vol = np.abs(np.einsum("ij,ij->i", a, np.cross(b, c)) / 6.0)
    tets = tets[vol > 1e-12]
    skin = np.unique(d.convex_hull) if tag_skin else []
    return TetMesh(P, tets, skin_vertices=skin)
