"""Triangle meshes and the geometric pre-processing chain."""
from .editing import CannotReach, edge_length_ratio, quadric_decimate, remesh_optimize
from .io import load_mesh, load_off, load_ply, save_mesh, save_off, save_ply
from .mesh import (InvalidMesh, TriMesh, box, compact, icosphere, remove_degenerate_faces,
                   surface_area, validate)
from .rigid import InvalidTransform, RigidTransform, apply_rigid, rotation_from_axis_angle
from .surface import EmptySurface, marching_cubes, taubin_smooth, uniform_laplacian

__all__ = [
    "CannotReach", "EmptySurface", "InvalidMesh", "InvalidTransform", "RigidTransform", "TriMesh",
    "apply_rigid", "box", "compact", "edge_length_ratio", "icosphere", "load_mesh", "load_off",
    "load_ply", "marching_cubes", "quadric_decimate", "remesh_optimize", "remove_degenerate_faces",
    "rotation_from_axis_angle", "save_mesh", "save_off", "save_ply", "surface_area", "taubin_smooth",
    "uniform_laplacian", "validate",
]
