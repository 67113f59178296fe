"""Quadric decimation and split/collapse remeshing.

Both operators share :class:`_EditMesh`, a small incidence structure that
supports legal edge collapses and midpoint edge splits on a manifold
triangle mesh.
"""
from __future__ import annotations

import heapq
import warnings

import numpy as np

from .mesh import TriMesh, compact, remove_degenerate_faces


class CannotReach(UserWarning):
    """Decimation stopped before the target because no legal collapse remained."""


class _EditMesh:
    def __init__(self, mesh: TriMesh):
        self.pos = [np.array(p) for p in mesh.vertices]
        self.faces = [list(f) for f in mesh.faces.tolist()]
        self.alive = [True] * len(self.faces)
        self.vfaces: list[set[int]] = [set() for _ in self.pos]
        for fi, f in enumerate(self.faces):
            for v in f:
                self.vfaces[v].add(fi)
        self.n_alive = len(self.faces)

    def neighbours(self, v: int) -> set[int]:
        out = set()
        for fi in self.vfaces[v]:
            out.update(self.faces[fi])
        out.discard(v)
        return out

    def edge_faces(self, a: int, b: int) -> list[int]:
        return [fi for fi in self.vfaces[a] if b in self.faces[fi]]

    def edges(self) -> set[tuple[int, int]]:
        out = set()
        for fi, f in enumerate(self.faces):
            if self.alive[fi]:
                for k in range(3):
                    a, b = f[k], f[(k + 1) % 3]
                    out.add((a, b) if a < b else (b, a))
        return out

    def normal(self, f, override: dict[int, np.ndarray] | None = None) -> np.ndarray:
        p = [override[v] if override and v in override else self.pos[v] for v in f]
        return np.cross(p[1] - p[0], p[2] - p[0])

    def can_collapse(self, a: int, b: int, target: np.ndarray, max_len: float | None = None,
                     min_len: float | None = None) -> bool:
        shared = self.edge_faces(a, b)
        if not shared or len(shared) > 2:
            return False
        na, nb = self.neighbours(a), self.neighbours(b)
        common = na & nb
        # link condition: the only common neighbours are the apexes of the shared faces
        if len(common) != len(shared):
            return False
        merged = (na | nb) - {a, b}
        if len(merged) < 3:
            return False
        # refuse to shrink a closed component below a tetrahedron
        if len(shared) == 2 and self.n_alive - 2 < 4:
            return False
        override = {a: target, b: target}
        for v in (a, b):
            for fi in self.vfaces[v]:
                f = self.faces[fi]
                if a in f and b in f:
                    continue
                before = self.normal(f)
                after = self.normal(f, override)
                area_after = np.linalg.norm(after)
                if area_after <= 1e-10:
                    return False
                if np.dot(before, after) <= 0.0:
                    return False
        if max_len is not None or min_len is not None:
            for u in merged:
                length = np.linalg.norm(self.pos[u] - target)
                if max_len is not None and length > max_len:
                    return False
                if min_len is not None and length < min_len:
                    return False
        return True

    def collapse(self, a: int, b: int, target: np.ndarray) -> list[int]:
        """Merge ``b`` into ``a`` at ``target``; returns the removed face ids."""
        removed = []
        for fi in list(self.vfaces[b]):
            f = self.faces[fi]
            if a in f:
                self.alive[fi] = False
                removed.append(fi)
                for v in f:
                    self.vfaces[v].discard(fi)
            else:
                f[f.index(b)] = a
                self.vfaces[a].add(fi)
        self.vfaces[b].clear()
        self.pos[a] = np.array(target)
        self.n_alive -= len(removed)
        return removed

    def split_min_edge(self, a: int, b: int) -> float:
        """Shortest edge that splitting (a, b) at its midpoint would create."""
        mid = 0.5 * (self.pos[a] + self.pos[b])
        out = 0.5 * np.linalg.norm(self.pos[a] - self.pos[b])
        for fi in self.edge_faces(a, b):
            (c,) = set(self.faces[fi]) - {a, b}
            out = min(out, np.linalg.norm(self.pos[c] - mid))
        return out

    def split(self, a: int, b: int) -> int:
        """Insert the midpoint of edge (a, b) and split its incident faces."""
        m = len(self.pos)
        self.pos.append(0.5 * (self.pos[a] + self.pos[b]))
        self.vfaces.append(set())
        for fi in self.edge_faces(a, b):
            f = self.faces[fi]
            # orientation-preserving split: (.., a, b, ..) -> (.., a, m, ..) and (.., m, b, ..)
            i = f.index(a)
            j = f.index(b)
            first = list(f)
            second = list(f)
            first[j] = m
            second[i] = m
            self.faces[fi] = first
            self.vfaces[b].discard(fi)
            self.vfaces[m].add(fi)
            new_id = len(self.faces)
            self.faces.append(second)
            self.alive.append(True)
            for v in second:
                self.vfaces[v].add(new_id)
            self.n_alive += 1
        return m

    def to_mesh(self) -> TriMesh:
        faces = [f for f, ok in zip(self.faces, self.alive) if ok]
        mesh = TriMesh(np.array(self.pos), np.array(faces, dtype=np.int64).reshape(-1, 3))
        return compact(remove_degenerate_faces(mesh))


# -- quadric error decimation ----------------------------------------------

def _face_quadrics(mesh: TriMesh) -> np.ndarray:
    n = mesh.face_normals
    d = -np.einsum("ij,ij->i", n, mesh.vertices[mesh.faces[:, 0]])
    p = np.concatenate([n, d[:, None]], axis=1)
    return p[:, :, None] * p[:, None, :]


def _optimal_position(q: np.ndarray, pa: np.ndarray, pb: np.ndarray) -> tuple[float, np.ndarray]:
    candidates = [pa, pb, 0.5 * (pa + pb)]
    a = q[:3, :3]
    if abs(np.linalg.det(a)) > 1e-12:
        x = np.linalg.solve(a, -q[:3, 3])
        # guard against far-away solutions of nearly singular systems
        if np.linalg.norm(x - 0.5 * (pa + pb)) <= 2.0 * np.linalg.norm(pa - pb) + 1e-12:
            candidates.append(x)
    best = None
    for c in candidates:
        h = np.append(c, 1.0)
        cost = float(h @ q @ h)
        if best is None or cost < best[0]:
            best = (cost, c)
    return best


def quadric_decimate(mesh: TriMesh, target_faces: int) -> TriMesh:
    """Greedy minimum-quadric-error edge collapses until ``target_faces`` is met.

    Collapses that would create non-manifold edges or flip a face normal are
    skipped. If no legal collapse remains first, the best-effort mesh is
    returned and a :class:`CannotReach` warning is emitted.
    """
    if target_faces < 4:
        raise ValueError("target_faces must be >= 4")
    if mesh.n_faces <= target_faces:
        return mesh
    fq = _face_quadrics(mesh)
    vq = np.zeros((mesh.n_vertices, 4, 4))
    for k in range(3):
        np.add.at(vq, mesh.faces[:, k], fq)
    em = _EditMesh(mesh)
    version = [0] * mesh.n_vertices
    heap = []

    def push(a, b):
        if a > b:
            a, b = b, a
        cost, pos = _optimal_position(vq[a] + vq[b], em.pos[a], em.pos[b])
        heapq.heappush(heap, (cost, a, b, version[a], version[b], tuple(pos)))

    for a, b in mesh.edges.tolist():
        push(a, b)
    while em.n_alive > target_faces and heap:
        cost, a, b, va, vb, pos = heapq.heappop(heap)
        if version[a] != va or version[b] != vb or not em.vfaces[a] or not em.vfaces[b]:
            continue
        pos = np.array(pos)
        if not em.can_collapse(a, b, pos):
            continue
        em.collapse(a, b, pos)
        vq[a] = vq[a] + vq[b]
        version[a] += 1
        version[b] += 1
        for u in em.neighbours(a):
            push(a, u)
    if em.n_alive > target_faces:
        warnings.warn(f"decimation stopped at {em.n_alive} faces (target {target_faces})", CannotReach, stacklevel=2)
    return em.to_mesh()


# -- split / collapse remeshing --------------------------------------------

def edge_length_ratio(mesh: TriMesh) -> float:
    lengths = mesh.edge_lengths()
    return float(lengths.max() / lengths.min())


def _remesh_pass(mesh: TriMesh) -> TriMesh | None:
    lengths = mesh.edge_lengths()
    mean = lengths.mean()
    hi, lo = 4.0 / 3.0 * mean, 4.0 / 5.0 * mean
    if lengths.max() <= hi and lengths.min() >= lo:
        return None
    # no edit may create an edge outside the pass's starting [min, max] range,
    # so the max/min ratio can only shrink as extreme edges are removed
    shortest, longest = lengths.min(), lengths.max()
    em = _EditMesh(mesh)
    changed = False
    # split long edges, longest first; new edges are re-examined in the same pass
    heap = [(-l, int(a), int(b)) for (a, b), l in zip(mesh.edges, lengths) if l > hi]
    heapq.heapify(heap)
    while heap:
        _, a, b = heapq.heappop(heap)
        if not em.edge_faces(a, b) or em.split_min_edge(a, b) < shortest:
            continue
        m = em.split(a, b)
        changed = True
        for u in em.neighbours(m):
            length = np.linalg.norm(em.pos[u] - em.pos[m])
            if length > hi:
                heapq.heappush(heap, (-length, min(u, m), max(u, m)))
    # collapse short edges to their midpoint, shortest first
    heap = []
    for a, b in em.edges():
        length = np.linalg.norm(em.pos[a] - em.pos[b])
        if length < lo:
            heap.append((length, a, b))
    heapq.heapify(heap)
    while heap:
        length, a, b = heapq.heappop(heap)
        if not em.vfaces[a] or not em.vfaces[b] or not em.edge_faces(a, b):
            continue
        current = np.linalg.norm(em.pos[a] - em.pos[b])
        if current >= lo or abs(current - length) > 1e-12:
            continue
        mid = 0.5 * (em.pos[a] + em.pos[b])
        if not em.can_collapse(a, b, mid, max_len=min(hi, longest), min_len=shortest):
            continue
        em.collapse(a, b, mid)
        changed = True
        for u in em.neighbours(a):
            length = np.linalg.norm(em.pos[u] - em.pos[a])
            if length < lo:
                heapq.heappush(heap, (length, min(u, a), max(u, a)))
    return em.to_mesh() if changed else None


def remesh_optimize(mesh: TriMesh, iterations: int) -> TriMesh:
    """Split edges longer than 4/3 and collapse edges shorter than 4/5 of the mean length.

    Splits happen at edge midpoints and collapses merge both endpoints at the
    midpoint. Within a pass no edit may create an edge shorter than the
    pass's starting minimum, and no collapse may create one longer than
    ``min(4/3 mean, starting maximum)``, so the max/min edge-length ratio
    never increases. The loop stops early once a pass changes nothing.
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    current = mesh
    for _ in range(iterations):
        nxt = _remesh_pass(current)
        if nxt is None:
            break
        before = edge_length_ratio(current)
        if before > 2.0 and edge_length_ratio(nxt) > before:
            break
        current = nxt
    return current
