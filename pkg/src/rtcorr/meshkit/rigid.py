from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import TriMesh


class InvalidTransform(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Proper rotation followed by a translation (mm): ``v' = R v + t``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    def check(self, tol: float = 1e-9) -> None:
        r = self.rotation
        if not np.all(np.isfinite(r)) or not np.all(np.isfinite(self.translation)):
            raise InvalidTransform("non-finite transform")
        if np.abs(r.T @ r - np.eye(3)).max() > tol:
            raise InvalidTransform("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > tol:
            raise InvalidTransform("rotation determinant is not +1")

    def inverse(self) -> RigidTransform:
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def compose(self, other: RigidTransform) -> RigidTransform:
        """Transform equivalent to applying ``other`` first, then ``self``."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def apply_points(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    @classmethod
    def from_matrix(cls, m) -> RigidTransform:
        """From a 4x4 homogeneous or 3x4 affine matrix."""
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def to_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


def rotation_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def apply_rigid(mesh: TriMesh, t: RigidTransform) -> TriMesh:
    t.check()
    return TriMesh(t.apply_points(mesh.vertices), mesh.faces)
