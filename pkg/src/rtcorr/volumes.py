"""CT volumes, soft-tissue windowing and per-vertex patch extraction.

World coordinates follow the volume's axis order ``(z, y, x)``: a voxel with
index ``(k, j, i)`` sits at ``origin + (k, j, i) * spacing`` mm. Meshes built
from these volumes use the same convention.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

PATCH_SHAPE = (7, 19, 19)
PATCH_SIZE = 7 * 19 * 19
AIR_HU = -1000
WINDOW_WIDTH = 350.0
WINDOW_LEVEL = 40.0


@dataclass(frozen=True, eq=False)
class Volume:
    """Scalar CT grid in Hounsfield units.

    Attributes
    ----------
    voxels : ndarray, shape (nz, ny, nx)
        int16 HU when loaded from disk; float grids (e.g. signed distance
        fields) are kept as given and rounded to int16 only when saved.
    spacing : (sz, sy, sx) in mm
    origin : (oz, oy, ox) in mm, position of voxel (0, 0, 0)
    """

    voxels: np.ndarray
    spacing: tuple = (2.5, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        vox = np.asarray(self.voxels)
        if vox.ndim != 3 or min(vox.shape) < 1:
            raise ValueError("volume must be 3D with every dimension >= 1")
        if vox.dtype == bool:
            vox = vox.astype(np.int16)
        vox = np.array(vox, copy=True)
        vox.setflags(write=False)
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or min(spacing) <= 0:
            raise ValueError("spacing must be three positive values")
        origin = tuple(float(o) for o in self.origin)
        if len(origin) != 3:
            raise ValueError("origin must have three components")
        object.__setattr__(self, "voxels", vox)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.voxels.shape)

    def voxel_index(self, points) -> np.ndarray:
        """Index of the voxel containing each point (nearest voxel centre)."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return np.floor((p - self.origin) / self.spacing + 0.5).astype(np.int64)

    def world(self, index) -> np.ndarray:
        return np.asarray(index, dtype=np.float64) * self.spacing + self.origin


def window_normalize(hu, width: float = WINDOW_WIDTH, level: float = WINDOW_LEVEL):
    """Map HU onto [0, 1] with a linear window, clamping outside it."""
    if width <= 0:
        raise ValueError("window width must be positive")
    out = np.clip((np.asarray(hu, dtype=np.float64) - (level - width / 2.0)) / width, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def _patch_offsets() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    dz, dy, dx = (np.arange(s) - s // 2 for s in PATCH_SHAPE)
    return np.meshgrid(dz, dy, dx, indexing="ij")


def _gather_patches(volume: Volume, centers: np.ndarray) -> np.ndarray:
    """Raw HU patches (n, 7, 19, 19) around integer voxel centres, air outside."""
    oz, oy, ox = _patch_offsets()
    idx_z = centers[:, 0, None, None, None] + oz
    idx_y = centers[:, 1, None, None, None] + oy
    idx_x = centers[:, 2, None, None, None] + ox
    nz, ny, nx = volume.dims
    inside = (idx_z >= 0) & (idx_z < nz) & (idx_y >= 0) & (idx_y < ny) & (idx_x >= 0) & (idx_x < nx)
    out = np.full(idx_z.shape, AIR_HU, dtype=np.result_type(volume.voxels.dtype, np.int16))
    out[inside] = volume.voxels[idx_z[inside], idx_y[inside], idx_x[inside]]
    return out


def extract_patch(volume: Volume, point, width: float = WINDOW_WIDTH, level: float = WINDOW_LEVEL) -> np.ndarray:
    """Windowed 7x19x19 patch centred on the voxel containing ``point``."""
    centers = volume.voxel_index(np.asarray(point, dtype=np.float64).reshape(1, 3))
    return window_normalize(_gather_patches(volume, centers)[0], width, level)


@dataclass(frozen=True, eq=False)
class PatchSet:
    """One flattened windowed patch per mesh vertex, shape (n, 2527)."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64).reshape(-1, PATCH_SIZE)
        if d.size and (d.min() < 0.0 or d.max() > 1.0):
            raise ValueError("patch values must lie in [0, 1]")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def count(self) -> int:
        return len(self.data)

    @property
    def patch_dims(self) -> tuple[int, int, int]:
        return PATCH_SHAPE


def extract_patchset(volume: Volume, mesh, width: float = WINDOW_WIDTH, level: float = WINDOW_LEVEL,
                     chunk: int = 512) -> PatchSet:
    """Patch for every vertex of ``mesh``, rows in vertex order."""
    verts = mesh.vertices if hasattr(mesh, "vertices") else np.asarray(mesh, dtype=np.float64).reshape(-1, 3)
    rows = np.empty((len(verts), PATCH_SIZE))
    for start in range(0, len(verts), chunk):
        centers = volume.voxel_index(verts[start:start + chunk]).reshape(-1, 3)
        patches = _gather_patches(volume, centers)
        rows[start:start + chunk] = window_normalize(patches, width, level).reshape(len(centers), -1)
    return PatchSet(rows)


# -- file format: text header + raw little-endian int16, z-major -----------

def save_volume(volume: Volume, header_path) -> Path:
    """Write ``<name>.hdr`` and ``<name>.raw``; returns the header path."""
    header_path = Path(header_path)
    raw_path = header_path.with_suffix(".raw")
    nz, ny, nx = volume.dims
    sz, sy, sx = volume.spacing
    oz, oy, ox = volume.origin
    header_path.write_text(
        f"dims={nz},{ny},{nx}\n"
        f"spacing={sz!r},{sy!r},{sx!r}\n"
        f"origin={oz!r},{oy!r},{ox!r}\n"
        "dtype=int16-le\n"
        f"data={raw_path.name}\n"
    )
    vox = np.clip(np.rint(volume.voxels), -32768, 32767).astype("<i2")
    raw_path.write_bytes(vox.tobytes(order="C"))
    return header_path


def load_volume(header_path) -> Volume:
    header_path = Path(header_path)
    fields = {}
    for line in header_path.read_text().splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            fields[key.strip()] = value.strip()
    for key in ("dims", "spacing", "origin", "dtype"):
        if key not in fields:
            raise ValueError(f"{header_path}: missing '{key}'")
    if fields["dtype"] != "int16-le":
        raise ValueError(f"{header_path}: unsupported dtype {fields['dtype']}")
    dims = tuple(int(x) for x in fields["dims"].split(","))
    spacing = tuple(float(x) for x in fields["spacing"].split(","))
    origin = tuple(float(x) for x in fields["origin"].split(","))
    raw_path = header_path.parent / fields.get("data", header_path.with_suffix(".raw").name)
    buf = raw_path.read_bytes()
    expected = 2 * int(np.prod(dims))
    if len(buf) != expected:
        raise ValueError(f"{raw_path}: buffer holds {len(buf)} bytes, header implies {expected}")
    vox = np.frombuffer(buf, dtype="<i2").reshape(dims).astype(np.int16)
    return Volume(vox, spacing, origin)
