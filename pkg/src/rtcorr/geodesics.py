"""Graph geodesic distances over mesh edges."""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import dijkstra

from .meshkit import TriMesh

CACHE_MAGIC = b"RTGEO001"


@dataclass(frozen=True, eq=False)
class GeodesicTable:
    """All-pairs distances (mm); ``inf`` marks vertices in different components."""

    d: np.ndarray

    @property
    def n(self) -> int:
        return len(self.d)


def edge_graph(mesh: TriMesh) -> sparse.csr_matrix:
    e = mesh.edges
    w = mesh.edge_lengths()
    n = mesh.n_vertices
    g = sparse.coo_matrix((np.concatenate([w, w]), (np.concatenate([e[:, 0], e[:, 1]]),
                                                   np.concatenate([e[:, 1], e[:, 0]]))), shape=(n, n))
    return g.tocsr()


def geodesic_all_pairs(mesh: TriMesh) -> GeodesicTable:
    """Dijkstra from every vertex over Euclidean-weighted mesh edges."""
    d = dijkstra(edge_graph(mesh), directed=False)
    # symmetrise away last-ulp differences between the two traversal directions
    d = np.minimum(d, d.T)
    np.fill_diagonal(d, 0.0)
    return GeodesicTable(d)


def sample_pairs(n: int, k: int, seed: int) -> np.ndarray:
    """``k`` ordered pairs ``(i, j)`` with ``i != j``, uniform with replacement."""
    if n < 2 or k < 1:
        raise ValueError("sample_pairs needs n >= 2 and k >= 1")
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, size=k)
    # shifting by 1..n-1 keeps j uniform over the n-1 other vertices
    j = (i + rng.integers(1, n, size=k)) % n
    return np.stack([i, j], axis=1)


def save_table(table: GeodesicTable, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CACHE_MAGIC + struct.pack("<I", table.n))
        fh.write(np.ascontiguousarray(table.d, dtype="<f4").tobytes())
    os.replace(tmp, path)


def load_table(path) -> GeodesicTable:
    data = Path(path).read_bytes()
    if not data.startswith(CACHE_MAGIC):
        raise ValueError(f"{path}: not a geodesic cache file")
    (n,) = struct.unpack_from("<I", data, len(CACHE_MAGIC))
    d = np.frombuffer(data, dtype="<f4", count=n * n, offset=len(CACHE_MAGIC) + 4)
    return GeodesicTable(d.reshape(n, n).astype(np.float64))


def cached_geodesics(mesh: TriMesh, cache_dir=None) -> GeodesicTable:
    """Load the table for ``mesh`` from ``cache_dir`` or compute and store it.

    Cached tables are float32 on disk; a freshly computed table is rounded
    the same way so cache hits and misses return identical values.
    """
    if cache_dir is None:
        return geodesic_all_pairs(mesh)
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"geo_{mesh.content_hash()[:24]}.bin"
    if path.exists():
        return load_table(path)
    table = geodesic_all_pairs(mesh)
    save_table(table, path)
    return GeodesicTable(table.d.astype(np.float32).astype(np.float64))
