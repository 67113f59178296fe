"""Dataset manifests: which meshes, volumes and landmark files make up a corpus."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..meshkit import RigidTransform, TriMesh, load_mesh
from ..metrics import LandmarkSet


class ManifestError(ValueError):
    pass


def _key(patient: str, organ: str) -> str:
    return f"{patient}/{organ}"


@dataclass
class DatasetManifest:
    """Paths are stored relative to ``root`` (the manifest's directory)."""

    root: Path
    patients: list[str]
    organs: list[str]
    meshes: dict[str, str]
    volumes: dict[str, str] = field(default_factory=dict)
    landmarks: dict[str, str] = field(default_factory=dict)
    ground_truth: dict[str, str] = field(default_factory=dict)
    # rigid transforms (4x4 text) already applied to each patient's meshes
    transforms: dict[str, str] = field(default_factory=dict)

    def mesh_path(self, patient: str, organ: str) -> Path:
        return self.root / self.meshes[_key(patient, organ)]

    def volume_path(self, patient: str) -> Path | None:
        rel = self.volumes.get(patient)
        return None if rel is None else self.root / rel

    def landmark_path(self, patient: str) -> Path | None:
        rel = self.landmarks.get(patient)
        return None if rel is None else self.root / rel

    def ground_truth_path(self, patient: str, organ: str) -> Path | None:
        rel = self.ground_truth.get(_key(patient, organ))
        return None if rel is None else self.root / rel

    def transform(self, patient: str) -> RigidTransform | None:
        rel = self.transforms.get(patient)
        if rel is None:
            return None
        return RigidTransform.from_matrix(np.loadtxt(self.root / rel).reshape(4, 4))

    def load_mesh(self, patient: str, organ: str) -> TriMesh:
        return load_mesh(self.mesh_path(patient, organ))

    def load_ground_truth(self, patient: str, organ: str) -> np.ndarray:
        """Template index of every vertex of a synthetic mesh."""
        path = self.ground_truth_path(patient, organ)
        if path is None:
            raise ManifestError(f"no ground truth for {patient}/{organ}")
        return np.loadtxt(path, dtype=np.int64, ndmin=1)

    def load_landmarks(self, patient: str) -> LandmarkSet:
        """Landmarks of one patient; empty when there is no landmark file.

        The file is JSON: ``{name: {"organ": organ, "point": [z, y, x]}}``.
        """
        path = self.landmark_path(patient)
        if path is None:
            return LandmarkSet({})
        raw = json.loads(path.read_text())
        try:
            return LandmarkSet({k: e["point"] for k, e in raw.items()}, {k: e["organ"] for k, e in raw.items()})
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"{path}: {exc}") from exc

    def check(self, need_volumes: bool = False) -> None:
        """Verify that every referenced file exists."""
        if len(set(self.patients)) != len(self.patients):
            raise ManifestError("duplicate patient ids")
        for p in self.patients:
            for o in self.organs:
                if _key(p, o) not in self.meshes:
                    raise ManifestError(f"missing mesh entry for {p}/{o}")
            if need_volumes and p not in self.volumes:
                raise ManifestError(f"missing volume for patient {p}")
        for table in (self.meshes, self.volumes, self.landmarks, self.ground_truth, self.transforms):
            for rel in table.values():
                if not (self.root / rel).exists():
                    raise ManifestError(f"referenced file does not exist: {self.root / rel}")

    def to_json(self) -> dict:
        return {"patients": self.patients, "organs": self.organs, "meshes": self.meshes,
                "volumes": self.volumes, "landmarks": self.landmarks, "ground_truth": self.ground_truth,
                "transforms": self.transforms}

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_json(), indent=1, sort_keys=True))
        return path


def load_manifest(path, need_volumes: bool = False) -> DatasetManifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    m = DatasetManifest(
        root=path.parent, patients=list(raw["patients"]), organs=list(raw["organs"]),
        meshes=dict(raw["meshes"]), volumes=dict(raw.get("volumes", {})),
        landmarks=dict(raw.get("landmarks", {})), ground_truth=dict(raw.get("ground_truth", {})),
        transforms=dict(raw.get("transforms", {})),
    )
    m.check(need_volumes)
    return m
