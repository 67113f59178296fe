"""Single-pass inference and its output files."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import corrnet
from ..autodiff import load_checkpoint
from ..meshkit import TriMesh, save_ply
from ..volumes import Volume, extract_patchset, load_volume
from .config import TrainConfig

SOFT_MAGIC = b"RTSOFT01"
SEQ_MAGIC = b"RTSEQ001"


def save_soft_matrix(pi: np.ndarray, path) -> Path:
    """Magic, ``n``, ``m`` (uint32) then ``n * m`` float32 values, row-major."""
    path = Path(path)
    pi = np.asarray(pi)
    with open(path, "wb") as fh:
        fh.write(SOFT_MAGIC + struct.pack("<II", *pi.shape))
        fh.write(np.ascontiguousarray(pi, dtype="<f4").tobytes())
    return path


def load_soft_matrix(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(SOFT_MAGIC):
        raise ValueError(f"{path}: not a soft correspondence file")
    n, m = struct.unpack_from("<II", data, len(SOFT_MAGIC))
    return np.frombuffer(data, dtype="<f4", count=n * m, offset=len(SOFT_MAGIC) + 8).reshape(n, m).astype(np.float64)


def save_sequence(displacements: np.ndarray, path) -> Path:
    """Magic, ``T``, ``n`` (uint32) then ``T * n * 3`` float32 displacements."""
    path = Path(path)
    d = np.asarray(displacements)
    with open(path, "wb") as fh:
        fh.write(SEQ_MAGIC + struct.pack("<II", d.shape[0], d.shape[1]))
        fh.write(np.ascontiguousarray(d, dtype="<f4").tobytes())
    return path


def load_sequence(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(SEQ_MAGIC):
        raise ValueError(f"{path}: not a sequence file")
    t, n = struct.unpack_from("<II", data, len(SEQ_MAGIC))
    return np.frombuffer(data, dtype="<f4", count=t * n * 3, offset=len(SEQ_MAGIC) + 8).reshape(t, n, 3).astype(np.float64)


def save_correspondence_csv(hard: np.ndarray, path) -> Path:
    path = Path(path)
    rows = "".join(f"{i},{j}\n" for i, j in enumerate(np.asarray(hard)))
    path.write_text("source_index,target_index\n" + rows)
    return path


def load_correspondence_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)[:, 1]


def load_model(params_path) -> tuple[dict[str, np.ndarray], TrainConfig]:
    """Checkpoint plus the ``config.json`` written next to it during training."""
    params_path = Path(params_path)
    params, _ = load_checkpoint(params_path)
    sidecar = params_path.parent / "config.json"
    if not sidecar.exists():
        raise FileNotFoundError(f"missing {sidecar} next to the checkpoint")
    config = TrainConfig.from_dict(json.loads(sidecar.read_text())["train"])
    return params, config


@dataclass
class InferenceResult:
    hard: np.ndarray
    pi: np.ndarray
    sequence: corrnet.InterpolationSequence
    files: dict[str, Path]


def _as_volume(v) -> Volume:
    return v if isinstance(v, Volume) else load_volume(v)


def infer(params, mesh_x: TriMesh, mesh_y: TriMesh, config: TrainConfig, out_dir=None,
          volumes=None, write_frames: bool = True) -> InferenceResult:
    """Correspondence and interpolation for one ordered pair in a single forward pass.

    ``volumes`` is a ``(source, target)`` pair of :class:`Volume` objects or
    header paths. Only the image-feature variant looks at it; the other
    variants never open a volume.
    """
    patches_x = patches_y = None
    if config.variant == "imgfeat":
        if volumes is None:
            raise corrnet.MissingPatches("the image-feature model needs source and target volumes")
        vx, vy = (_as_volume(v) for v in volumes)
        patches_x, patches_y = extract_patchset(vx, mesh_x), extract_patchset(vy, mesh_y)
    pi, seq = corrnet.forward_pair(mesh_x, mesh_y, params, config.model, patches_x, patches_y)
    hard = corrnet.hard_correspondence(pi.pi)
    files: dict[str, Path] = {}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files["correspondence"] = save_correspondence_csv(hard, out / "correspondence.csv")
        files["soft"] = save_soft_matrix(pi.pi, out / "soft_matrix.bin")
        files["sequence"] = save_sequence(seq.displacements, out / "sequence.bin")
        if write_frames:
            for k, frame in enumerate(seq.frames):
                files[f"frame_{k + 1}"] = out / f"frame_{k + 1:02d}.ply"
                save_ply(mesh_x.with_vertices(frame), files[f"frame_{k + 1}"])
    return InferenceResult(hard, pi.pi, seq, files)
