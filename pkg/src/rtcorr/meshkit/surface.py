"""Iso-surface extraction and Taubin smoothing."""
from __future__ import annotations

import numpy as np
from scipy import sparse
from skimage.measure import marching_cubes as _skimage_marching_cubes

from .mesh import TriMesh, compact, remove_degenerate_faces


class EmptySurface(ValueError):
    """No voxel crosses the requested iso-value."""


def marching_cubes(volume, iso_value: float = 0.5) -> TriMesh:
    """Triangulate the ``iso_value`` level set of a :class:`~rtcorr.volumes.Volume`.

    Vertices are returned in world mm (voxel index * spacing + origin) and
    faces are oriented so the enclosed volume is positive.
    """
    grid = np.asarray(volume.voxels, dtype=np.float64)
    if min(grid.shape) < 2:
        raise ValueError("marching cubes needs at least 2 samples along every axis")
    if not (grid.min() < iso_value < grid.max()):
        raise EmptySurface(f"no voxel crosses iso-value {iso_value}")
    verts, faces, _, _ = _skimage_marching_cubes(grid, level=iso_value, spacing=volume.spacing,
                                                allow_degenerate=False)
    if len(faces) == 0:
        raise EmptySurface(f"no voxel crosses iso-value {iso_value}")
    mesh = TriMesh(verts + np.asarray(volume.origin), faces)
    mesh = compact(remove_degenerate_faces(mesh))
    if mesh.n_faces == 0:
        raise EmptySurface(f"no voxel crosses iso-value {iso_value}")
    if mesh.enclosed_volume() < 0:
        mesh = TriMesh(mesh.vertices, mesh.faces[:, ::-1])
    return mesh


def uniform_laplacian(mesh: TriMesh) -> sparse.csr_matrix:
    """Umbrella operator ``L v_i = mean(one_ring(v_i)) - v_i``; isolated rows are zero."""
    n = mesh.n_vertices
    e = mesh.edges
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    adj = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv = np.divide(1.0, deg, out=np.zeros(n), where=deg > 0)
    mean_op = sparse.diags(inv) @ adj
    ident = sparse.diags((deg > 0).astype(float))
    return (mean_op - ident).tocsr()


def taubin_smooth(mesh: TriMesh, iterations: int = 10, lam: float = 0.5, mu: float = -0.53) -> TriMesh:
    """Alternate a shrinking ``lam`` step and an inflating ``mu`` step per iteration."""
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if iterations == 0:
        return mesh
    lap = uniform_laplacian(mesh)
    v = np.array(mesh.vertices)
    for _ in range(iterations):
        v = v + lam * (lap @ v)
        if mu != 0.0:
            v = v + mu * (lap @ v)
    return mesh.with_vertices(v)
