"""Axis-aligned box meshing helper for test scenes and examples."""

from __future__ import annotations

import numpy as np

from .mesh import TetMesh, mesh_from_arrays

# Kuhn split of the unit cube into 6 tets sharing the main diagonal.
_CUBE_TETS = (
    (0, 1, 3, 7), (0, 1, 7, 5), (0, 5, 7, 4),
    (0, 3, 2, 7), (0, 2, 6, 7), (0, 6, 4, 7),
)


def box_mesh(size=(1.0, 1.0, 1.0), divisions=(4, 2, 2),
             origin=(0.0, 0.0, 0.0)) -> TetMesh:
    """Tetrahedralize a box with a regular grid, 6 tets per cell.

    Region ids default to 0 everywhere; use :func:`assign_regions_by_axis`
    to split the mesh into material regions.
    """
    nx, ny, nz = divisions
    sx, sy, sz = size
    ox, oy, oz = origin
    xs = np.linspace(ox, ox + sx, nx + 1)
    ys = np.linspace(oy, oy + sy, ny + 1)
    zs = np.linspace(oz, oz + sz, nz + 1)
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    vertices = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    tets = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                corner = [vid(i + di, j + dj, k + dk)
                          for di in (0, 1) for dj in (0, 1) for dk in (0, 1)]
                # corner order: (0,0,0),(0,0,1),(0,1,0),(0,1,1),
                #               (1,0,0),(1,0,1),(1,1,0),(1,1,1)
                local = {0: corner[0], 1: corner[4], 2: corner[2],
                         3: corner[6], 4: corner[1], 5: corner[5],
                         6: corner[3], 7: corner[7]}
                for t in _CUBE_TETS:
                    tets.append([local[v] for v in t])
    return mesh_from_arrays(vertices, np.array(tets, dtype=np.int64))


def assign_regions_by_axis(mesh: TetMesh, axis: int, split: float) -> TetMesh:
    """Label tets whose centroid lies past ``split`` on ``axis`` as region 1."""
    centroids = mesh.rest_positions[mesh.tets].mean(axis=1)
    regions = (centroids[:, axis] > split).astype(np.int64)
    return TetMesh(mesh.rest_positions, mesh.tets, regions,
                   mesh.surface_faces, mesh.pinned_vertices)


def vertices_in_box(mesh: TetMesh, lo, hi) -> np.ndarray:
    """Indices of vertices inside the closed axis-aligned box [lo, hi]."""
    p = mesh.rest_positions
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    inside = np.all((p >= lo) & (p <= hi), axis=1)
    return np.flatnonzero(inside).astype(np.int64)
