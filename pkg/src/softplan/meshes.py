"""Procedural test objects built from Kuhn-subdivided voxels."""
from __future__ import annotations

from itertools import permutations

import numpy as np

from .tetmesh import TetMesh

# Six tets per cube sharing the 0-7 diagonal; conforming across neighbours.
_KUHN = []
for perm in permutations(range(3)):
    corner = [0, 0, 0]
    path = [tuple(corner)]
    for axis in perm:
        corner[axis] = 1
        path.append(tuple(corner))
    _KUHN.append(path)


def voxel_mesh(occupied, spacing, origin=(0.0, 0.0, 0.0), name="voxels", warp=None):
    """Tet mesh of the occupied voxels of a boolean (nx, ny, nz) grid.

    `warp` maps an (n, 3) array of lattice positions to world positions
    before tet orientation is fixed; topology is unaffected.
    """
    occ = np.asarray(occupied, dtype=bool)
    spacing = np.broadcast_to(np.asarray(spacing, dtype=np.float64), (3,))
    index = {}
    verts = []
    tets = []

    def vid(c):
        if c not in index:
            index[c] = len(verts)
            verts.append(c)
        return index[c]

    for i, j, k in zip(*np.nonzero(occ)):
        for path in _KUHN:
            tets.append([vid((i + a, j + b, k + c)) for a, b, c in path])
    lattice = np.array(verts, dtype=np.float64)
    pos = np.asarray(origin) + lattice * spacing
    if warp is not None:
        pos = warp(pos)
    tets = np.array(tets, dtype=np.int64)
    a = pos[tets[:, 0]]
    vol = np.einsum("ij,ij->i", pos[tets[:, 1]] - a,
                    np.cross(pos[tets[:, 2]] - a, pos[tets[:, 3]] - a))
    neg = vol < 0
    tets[neg] = tets[neg][:, [0, 2, 1, 3]]
    return TetMesh.from_arrays(pos, tets, name=name)


def box(size=(0.3, 0.2, 0.1), cells=(6, 4, 2)):
    occ = np.ones(cells, dtype=bool)
    sp = np.asarray(size) / np.asarray(cells)
    return voxel_mesh(occ, sp, origin=(-size[0] / 2, -size[1] / 2, 0.0), name="box")


def lshape(size=(0.3, 0.24, 0.08), cells=(5, 4, 2)):
    occ = np.ones(cells, dtype=bool)
    occ[cells[0] // 2 + 1:, cells[1] // 2:, :] = False
    sp = np.asarray(size) / np.asarray(cells)
    return voxel_mesh(occ, sp, origin=(-size[0] / 2, -size[1] / 2, 0.0), name="lshape")


def snake(segments=20, thickness=0.04, radius=0.13, gap=0.012):
    """A chain bent into an open ring whose two ends nearly touch."""
    occ = np.ones((segments, 1, 1), dtype=bool)
    mid = radius + thickness / 2
    sweep = 2 * np.pi - gap / mid

    def warp(p):
        ang = p[:, 0] / segments * sweep
        r = radius + p[:, 1] * thickness
        return np.stack([r * np.cos(ang), r * np.sin(ang), p[:, 2] * thickness], axis=1)

    return voxel_mesh(occ, 1.0, name="snake", warp=warp)


def toy(cell=0.04, arm=3, height=2):
    """Four-limb star: a 2x2 body with one arm per side."""
    n = 2 + 2 * arm
    occ = np.zeros((n, n, height), dtype=bool)
    occ[arm:arm + 2, :, :] = True
    occ[:, arm:arm + 2, :] = True
    off = -n * cell / 2
    return voxel_mesh(occ, cell, origin=(off, off, 0.0), name="toy")


BUILTIN = {"box": box, "lshape": lshape, "snake": snake, "toy": toy}


def builtin(name):
    try:
        return BUILTIN[name]()
    except KeyError:
        raise ValueError(f"unknown mesh {name!r}; choose from {sorted(BUILTIN)}") from None
