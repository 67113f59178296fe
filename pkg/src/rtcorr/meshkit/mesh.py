"""Triangle mesh container and basic geometric queries."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

MIN_FACE_AREA = 1e-12


class InvalidMesh(ValueError):
    """Raised when a mesh violates a structural invariant."""


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Vertices in mm plus triangle faces.

    Arrays are copied on construction and flagged read-only, so a mesh can be
    shared between callers without defensive copies.

    Parameters
    ----------
    vertices : array_like, shape (n, 3)
    faces : array_like, shape (f, 3)
        Indices into ``vertices``.
    """

    vertices: np.ndarray
    faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def edges(self) -> np.ndarray:
        """Sorted unique undirected edges, shape (e, 2) with ``e[:, 0] < e[:, 1]``."""
        if self.n_faces == 0:
            return np.zeros((0, 2), dtype=np.int64)
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0)

    @cached_property
    def one_ring(self) -> list[np.ndarray]:
        """Sorted neighbour indices of every vertex."""
        offsets, nbrs = self.adjacency_csr
        return [nbrs[offsets[i]:offsets[i + 1]] for i in range(self.n_vertices)]

    @cached_property
    def adjacency_csr(self) -> tuple[np.ndarray, np.ndarray]:
        """Directed neighbour lists in CSR form ``(offsets, neighbours)``.

        Neighbours of vertex ``i`` are ``neighbours[offsets[i]:offsets[i+1]]``,
        sorted ascending.
        """
        e = self.edges
        src = np.concatenate([e[:, 0], e[:, 1]])
        dst = np.concatenate([e[:, 1], e[:, 0]])
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        counts = np.bincount(src, minlength=self.n_vertices)
        offsets = np.zeros(self.n_vertices + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        return offsets, dst

    @cached_property
    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_cross, axis=1)

    @property
    def face_cross(self) -> np.ndarray:
        v = self.vertices
        f = self.faces
        return np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])

    @property
    def face_normals(self) -> np.ndarray:
        c = self.face_cross
        norm = np.linalg.norm(c, axis=1, keepdims=True)
        return c / np.where(norm > 0, norm, 1.0)

    @property
    def vertex_normals(self) -> np.ndarray:
        """Area-weighted vertex normals (unit length where defined)."""
        c = self.face_cross
        vn = np.zeros_like(self.vertices)
        for k in range(3):
            np.add.at(vn, self.faces[:, k], c)
        norm = np.linalg.norm(vn, axis=1, keepdims=True)
        return vn / np.where(norm > 0, norm, 1.0)

    def edge_lengths(self) -> np.ndarray:
        e = self.edges
        return np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)

    def enclosed_volume(self) -> float:
        """Signed volume via the divergence theorem; positive for outward faces."""
        v = self.vertices
        f = self.faces
        return float(np.einsum("ij,ij->i", v[f[:, 0]], np.cross(v[f[:, 1]], v[f[:, 2]])).sum() / 6.0)

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges) + self.n_faces

    def bbox_diagonal(self) -> float:
        if self.n_vertices == 0:
            return 0.0
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))

    def with_vertices(self, vertices) -> TriMesh:
        """Same connectivity, new positions."""
        return TriMesh(vertices, self.faces)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices).tobytes())
        h.update(np.ascontiguousarray(self.faces).tobytes())
        return h.hexdigest()

    def validate(self, check_orientation: bool = True) -> None:
        """Raise :class:`InvalidMesh` unless all structural invariants hold."""
        validate(self, check_orientation=check_orientation)


def surface_area(mesh: TriMesh) -> float:
    """Total triangle area in mm²."""
    return float(mesh.face_areas.sum())


def edge_face_counts(faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unique undirected edges and the number of faces using each one."""
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e = np.sort(e, axis=1)
    return np.unique(e, axis=0, return_counts=True)


def validate(mesh: TriMesh, check_orientation: bool = True) -> None:
    f = mesh.faces
    n = mesh.n_vertices
    if not np.all(np.isfinite(mesh.vertices)):
        raise InvalidMesh("non-finite vertex coordinates")
    if mesh.n_faces == 0:
        return
    if f.min() < 0 or f.max() >= n:
        raise InvalidMesh("face index out of range")
    if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
        raise InvalidMesh("face references a vertex twice")
    if np.any(mesh.face_areas <= MIN_FACE_AREA):
        raise InvalidMesh("degenerate face (area <= 1e-12)")
    _, counts = edge_face_counts(f)
    if np.any(counts > 2):
        raise InvalidMesh("non-manifold edge shared by more than two faces")
    if check_orientation:
        # each directed half-edge may appear at most once when orientation is consistent
        he = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        _, hcounts = np.unique(he, axis=0, return_counts=True)
        if np.any(hcounts > 1):
            raise InvalidMesh("inconsistent face orientation")


def remove_degenerate_faces(mesh: TriMesh, min_area: float = MIN_FACE_AREA) -> TriMesh:
    """Drop faces with repeated indices or area below ``min_area``."""
    f = mesh.faces
    if len(f) == 0:
        return mesh
    ok = (f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2]) & (f[:, 0] != f[:, 2])
    ok &= mesh.face_areas > min_area
    if ok.all():
        return mesh
    return TriMesh(mesh.vertices, f[ok])


def compact(mesh: TriMesh) -> TriMesh:
    """Remove vertices not referenced by any face and reindex."""
    used = np.zeros(mesh.n_vertices, dtype=bool)
    used[mesh.faces.ravel()] = True
    if used.all():
        return mesh
    remap = np.full(mesh.n_vertices, -1, dtype=np.int64)
    remap[used] = np.arange(used.sum())
    return TriMesh(mesh.vertices[used], remap[mesh.faces])


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriMesh:
    """Geodesic sphere from a subdivided icosahedron, outward oriented."""
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    v = [np.asarray(p, dtype=float) / np.linalg.norm(p) for p in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = v[a] + v[b]
                v.append(m / np.linalg.norm(m))
                cache[key] = len(v) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return TriMesh(np.array(v) * radius, np.array(faces))


def box(size=(1.0, 1.0, 1.0)) -> TriMesh:
    """Axis-aligned box surface with 12 outward-facing triangles."""
    sx, sy, sz = size
    v = np.array([[x, y, z] for x in (0, sx) for y in (0, sy) for z in (0, sz)], dtype=float)
    f = np.array([
        [0, 1, 3], [0, 3, 2],  # x = 0
        [4, 6, 7], [4, 7, 5],  # x = sx
        [0, 4, 5], [0, 5, 1],  # y = 0
        [2, 3, 7], [2, 7, 6],  # y = sy
        [0, 2, 6], [0, 6, 4],  # z = 0
        [1, 5, 7], [1, 7, 3],  # z = sz
    ])
    return TriMesh(v, f)
