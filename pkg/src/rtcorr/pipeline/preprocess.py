"""Segmentation masks to training-ready organ meshes.

Masks are marching-cubed, Taubin-smoothed, decimated and remeshed; optional
per-patient rigid transforms move the meshes into a common reference frame.
"""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import connected_components

from ..geodesics import edge_graph
from ..meshkit import (RigidTransform, TriMesh, apply_rigid, compact, marching_cubes, quadric_decimate,
                       remesh_optimize, save_mesh, taubin_smooth)
from ..volumes import load_volume
from .manifest import DatasetManifest

log = logging.getLogger(__name__)

SMALL_ORGAN_KEYS = ("submandibular",)


def largest_component(mesh: TriMesh) -> TriMesh:
    """Keep the connected component with the most faces."""
    n_comp, labels = connected_components(edge_graph(mesh), directed=False)
    if n_comp == 1:
        return mesh
    face_label = labels[mesh.faces[:, 0]]
    keep = np.argmax(np.bincount(face_label, minlength=n_comp))
    return compact(TriMesh(mesh.vertices, mesh.faces[face_label == keep]))


def load_transform(path) -> RigidTransform:
    """A 4x4 homogeneous matrix in whitespace-separated text."""
    return RigidTransform.from_matrix(np.loadtxt(path).reshape(4, 4))


def mesh_from_mask(mask, faces: int, taubin_iters: int = 10, remesh_iters: int = 5) -> TriMesh:
    mesh = largest_component(marching_cubes(mask, 0.5))
    mesh = taubin_smooth(mesh, taubin_iters)
    mesh = quadric_decimate(mesh, faces)
    mesh = remesh_optimize(mesh, remesh_iters)
    mesh.validate()
    return mesh


def preprocess(masks_dir, volumes_dir, out_dir, faces: int = 3000, faces_small: int = 2000,
               taubin_iters: int = 10, remesh_iters: int = 5, transforms_dir=None,
               small_organs=SMALL_ORGAN_KEYS) -> DatasetManifest:
    """Build a manifest from ``masks_dir/<patient>/<organ>.hdr`` and ``volumes_dir/<patient>.hdr``.

    Organs whose name contains one of ``small_organs`` are decimated to
    ``faces_small`` triangles. When ``transforms_dir/<patient>.txt`` exists
    its rigid transform is applied to that patient's meshes and recorded in
    the manifest.
    """
    masks_dir, volumes_dir, out = Path(masks_dir), Path(volumes_dir), Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    patients = sorted(p.name for p in masks_dir.iterdir() if p.is_dir())
    if not patients:
        raise FileNotFoundError(f"no patient directories in {masks_dir}")
    organs = sorted(p.stem for p in (masks_dir / patients[0]).glob("*.hdr"))
    manifest = DatasetManifest(root=out, patients=patients, organs=organs, meshes={})
    for pid in patients:
        found = sorted(p.stem for p in (masks_dir / pid).glob("*.hdr"))
        if found != organs:
            raise ValueError(f"patient {pid} has organs {found}, expected {organs}")
        transform = None
        if transforms_dir is not None and (Path(transforms_dir) / f"{pid}.txt").exists():
            tpath = Path(transforms_dir) / f"{pid}.txt"
            transform = load_transform(tpath)
            manifest.transforms[pid] = str(Path(tpath).resolve())
        for organ in organs:
            target = faces_small if any(k in organ for k in small_organs) else faces
            mesh = mesh_from_mask(load_volume(masks_dir / pid / f"{organ}.hdr"), target, taubin_iters, remesh_iters)
            if transform is not None:
                mesh = apply_rigid(mesh, transform)
            name = f"{pid}_{organ}.ply"
            save_mesh(mesh, out / name)
            manifest.meshes[f"{pid}/{organ}"] = name
            log.info("%s/%s: %d vertices, %d faces", pid, organ, mesh.n_vertices, mesh.n_faces)
        vol = volumes_dir / f"{pid}.hdr"
        if vol.exists():
            manifest.volumes[pid] = str(vol.resolve())
    manifest.save(out / "manifest.json")
    return manifest
