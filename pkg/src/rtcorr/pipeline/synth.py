"""Synthetic stand-in corpus: star-shaped "organs" with known correspondence.

Every organ is a map ``u -> c + Q phi(R(u) u)`` of unit directions ``u``
taken from one shared template triangulation, where ``R`` is an ellipsoid
radius function modulated by smooth Gaussian bumps, ``phi`` a twist about and
a bend along the organ's first axis, and ``Q`` a small rotation. The
template index of each vertex is therefore the ground-truth correspondence.
Vertex order is shuffled per shape so nothing can be read off the indices.
Volumes sample a smooth function of the radial signed distance to each organ
and include a bright "bone" sphere at a fixed place in every patient.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from ..meshkit import TriMesh, icosphere, quadric_decimate, remesh_optimize, rotation_from_axis_angle, save_mesh
from ..volumes import Volume, save_volume
from .manifest import DatasetManifest

TEMPLATE_FACES = 600
SPACING = (2.5, 1.0, 1.0)
GRID_ORIGIN = (-40.0, -40.0, -55.0)
GRID_DIMS = (33, 81, 101)
BACKGROUND_HU = -80.0
BONE_HU = 700.0
BONE_CENTRE = np.array([0.0, 28.0, -2.0])
BONE_RADIUS = 6.0
NOISE_HU = 8.0


@dataclass(frozen=True)
class OrganModel:
    name: str
    radii: tuple[float, float, float]
    centre: tuple[float, float, float]
    hu: float
    landmarks: dict


ORGANS = (
    OrganModel("blob", (14.0, 20.0, 16.0), (0.0, 0.0, -25.0), 60.0,
               {"pineal_gland": (1.0, 0.0, 0.0), "styloid_process": (0.0, 0.6, 0.8)}),
    OrganModel("capsule", (24.0, 9.0, 10.0), (0.0, 0.0, 20.0), 25.0,
               {"spinal_cord_C1": (-1.0, 0.0, 0.0), "mandible_lingula": (0.3, -0.95, 0.0)}),
)


@lru_cache(maxsize=1)
def template_mesh() -> TriMesh:
    """Unit-sphere triangulation of about 300 vertices shared by every organ."""
    m = quadric_decimate(icosphere(3, 1.0), TEMPLATE_FACES)
    m = remesh_optimize(m, 3)
    v = m.vertices / np.linalg.norm(m.vertices, axis=1, keepdims=True)
    return m.with_vertices(v)


@dataclass(frozen=True)
class ShapeParams:
    scale: np.ndarray          # (3,)
    bump_dirs: np.ndarray      # (k, 3) unit vectors
    bump_amps: np.ndarray      # (k,) relative amplitudes
    bump_width: float
    twist: float               # radians per unit of normalised first coordinate
    bend: float                # second-axis shift per squared normalised first coordinate
    rotation: np.ndarray       # (3, 3)
    centre: np.ndarray         # (3,)

    def radius(self, organ: OrganModel, u: np.ndarray) -> np.ndarray:
        r = np.asarray(organ.radii) * self.scale
        base = 1.0 / np.sqrt(((u / r) ** 2).sum(axis=1))
        bumps = np.exp(-(1.0 - u @ self.bump_dirs.T) / self.bump_width) @ self.bump_amps
        return base * (1.0 + bumps)

    def _warp(self, organ: OrganModel, q: np.ndarray, inverse: bool = False) -> np.ndarray:
        # both steps keep the first coordinate, so the inverse is exact
        length = organ.radii[0]
        s = q[:, 0] / length
        out = q.copy()
        if inverse:
            out[:, 1] -= self.bend * length * s ** 2
        ang = (-1.0 if inverse else 1.0) * self.twist * s
        c, n = np.cos(ang), np.sin(ang)
        y, x = out[:, 1].copy(), out[:, 2].copy()
        out[:, 1], out[:, 2] = c * y - n * x, n * y + c * x
        if not inverse:
            out[:, 1] += self.bend * length * s ** 2
        return out

    def surface(self, organ: OrganModel, u: np.ndarray) -> np.ndarray:
        local = self._warp(organ, self.radius(organ, u)[:, None] * u)
        return self.centre + local @ self.rotation.T

    def signed_distance(self, organ: OrganModel, points: np.ndarray) -> np.ndarray:
        """Radial signed distance in the unwarped frame (negative inside); zero on the surface."""
        q = self._warp(organ, (points - self.centre) @ self.rotation, inverse=True)
        r = np.linalg.norm(q, axis=1)
        u = q / np.maximum(r, 1e-12)[:, None]
        u[r < 1e-12] = (1.0, 0.0, 0.0)
        return r - self.radius(organ, u)


def sample_shape(rng: np.random.Generator, organ: OrganModel, patient_shift: np.ndarray,
                 n_bumps: int = 3) -> ShapeParams:
    dirs = rng.normal(size=(n_bumps, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    axis = rng.normal(size=3)
    return ShapeParams(
        scale=rng.uniform(0.75, 1.3, size=3),
        bump_dirs=dirs,
        bump_amps=rng.uniform(-0.2, 0.2, size=n_bumps),
        bump_width=0.3,
        twist=np.deg2rad(rng.uniform(-30.0, 30.0)),
        bend=rng.uniform(-0.2, 0.2),
        rotation=rotation_from_axis_angle(axis, np.deg2rad(rng.uniform(-10.0, 10.0))),
        centre=np.asarray(organ.centre) + patient_shift + rng.uniform(-1.0, 1.0, size=3),
    )


def organ_mesh(params: ShapeParams, organ: OrganModel, perm: np.ndarray) -> TriMesh:
    """Mesh whose vertex ``k`` sits at template direction ``perm[k]``."""
    t = template_mesh()
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    mesh = TriMesh(params.surface(organ, t.vertices[perm]), inv[t.faces])
    mesh.validate()
    return mesh


def synth_volume(rng: np.random.Generator, shapes: list[tuple[OrganModel, ShapeParams]],
                 patient_shift: np.ndarray) -> Volume:
    grid = np.stack(np.meshgrid(*[o + s * np.arange(n) for o, s, n in zip(GRID_ORIGIN, SPACING, GRID_DIMS)],
                                indexing="ij"), axis=-1).reshape(-1, 3)
    hu = np.full(len(grid), BACKGROUND_HU)
    for organ, params in shapes:
        inside = 0.5 * (1.0 - np.tanh(params.signed_distance(organ, grid) / 1.0))
        hu += (organ.hu - BACKGROUND_HU) * inside
    bone = np.linalg.norm(grid - (BONE_CENTRE + patient_shift), axis=1) - BONE_RADIUS
    hu += (BONE_HU - BACKGROUND_HU) * 0.5 * (1.0 - np.tanh(bone / 1.0))
    hu += rng.normal(0.0, NOISE_HU, size=len(grid))
    return Volume(hu.reshape(GRID_DIMS), SPACING, GRID_ORIGIN)


def synth_generate(seed: int, n_shapes: int, out_dir) -> DatasetManifest:
    """Write ``n_shapes // 2`` patients with one mesh per synthetic organ.

    Produces meshes (OFF), ground-truth template indices, one volume per
    patient and landmark files, then returns the saved manifest.
    """
    if n_shapes < 4:
        raise ValueError("synth_generate needs at least 4 shapes")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    rng = np.random.default_rng(seed)
    n_patients = n_shapes // len(ORGANS)
    patients = [f"P{k:03d}" for k in range(n_patients)]
    manifest = DatasetManifest(root=out, patients=patients, organs=[o.name for o in ORGANS], meshes={})
    n_template = template_mesh().n_vertices
    for pid in patients:
        shift = rng.uniform(-5.0, 5.0, size=3)
        shapes = []
        landmarks = {}
        for organ in ORGANS:
            params = sample_shape(rng, organ, shift)
            perm = rng.permutation(n_template)
            mesh = organ_mesh(params, organ, perm)
            stem = f"{pid}_{organ.name}"
            save_mesh(mesh, out / f"{stem}.off")
            np.savetxt(out / f"{stem}_gt.txt", perm, fmt="%d")
            manifest.meshes[f"{pid}/{organ.name}"] = f"{stem}.off"
            manifest.ground_truth[f"{pid}/{organ.name}"] = f"{stem}_gt.txt"
            for name, direction in organ.landmarks.items():
                u = np.asarray(direction, dtype=np.float64)
                u = (u / np.linalg.norm(u))[None]
                landmarks[name] = {"organ": organ.name, "point": params.surface(organ, u)[0].tolist()}
            shapes.append((organ, params))
        save_volume(synth_volume(rng, shapes, shift), out / f"{pid}_ct.hdr")
        manifest.volumes[pid] = f"{pid}_ct.hdr"
        (out / f"{pid}_landmarks.json").write_text(json.dumps(landmarks, indent=1))
        manifest.landmarks[pid] = f"{pid}_landmarks.json"
    manifest.save(out / "manifest.json")
    return manifest
