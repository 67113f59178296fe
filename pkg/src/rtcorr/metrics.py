"""Correspondence evaluation: geodesic error, chamfer distance, conformal
distortion, landmark error, the nearest-neighbour baseline and the Wilcoxon
signed-rank test."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .meshkit import TriMesh, surface_area

DEGENERATE_DISTORTION = 1e9
LANDMARKS = ("pineal_gland", "spinal_cord_C1", "styloid_process", "mandible_lingula")


class TooFewSamples(ValueError):
    pass


class EmptyInput(ValueError):
    pass


class DegenerateSource(ValueError):
    pass


@dataclass
class MetricReport:
    """Raw per-sample values for one evaluated source, keyed by pair id.

    Landmark errors are keyed ``"<pair_id>|<landmark>"``.
    """

    source: str
    organs: dict[str, str] = field(default_factory=dict)
    geodesic_errors: dict[str, np.ndarray] = field(default_factory=dict)
    chamfer: dict[str, float] = field(default_factory=dict)
    distortion: dict[str, np.ndarray] = field(default_factory=dict)
    gt_errors: dict[str, np.ndarray] = field(default_factory=dict)
    landmark_errors: dict[str, float] = field(default_factory=dict)

    _ARRAYS = ("geodesic_errors", "distortion", "gt_errors")

    def check(self) -> None:
        for name in self._ARRAYS:
            for pid, v in getattr(self, name).items():
                if not (np.all(np.isfinite(v)) and np.all(np.asarray(v) >= 0)):
                    raise ValueError(f"{name}[{pid}] has negative or non-finite values")
        for name in ("chamfer", "landmark_errors"):
            for pid, v in getattr(self, name).items():
                if not (math.isfinite(v) and v >= 0):
                    raise ValueError(f"{name}[{pid}] = {v} is negative or non-finite")

    def to_json(self) -> dict:
        out = {"source": self.source, "organs": self.organs, "chamfer": self.chamfer,
               "landmark_errors": self.landmark_errors}
        for name in self._ARRAYS:
            out[name] = {k: np.asarray(v).tolist() for k, v in getattr(self, name).items()}
        return out

    @classmethod
    def from_json(cls, raw: dict) -> MetricReport:
        arrays = {name: {k: np.asarray(v, dtype=np.float64) for k, v in raw.get(name, {}).items()}
                  for name in cls._ARRAYS}
        return cls(source=raw["source"], organs=dict(raw.get("organs", {})),
                   chamfer={k: float(v) for k, v in raw.get("chamfer", {}).items()},
                   landmark_errors={k: float(v) for k, v in raw.get("landmark_errors", {}).items()},
                   **arrays)


@dataclass
class LandmarkSet:
    """Named landmark points (mm) of one patient and the organ each belongs to."""

    points: dict[str, np.ndarray]
    organs: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for name, p in list(self.points.items()):
            p = np.asarray(p, dtype=np.float64)
            if p.shape != (3,) or not np.all(np.isfinite(p)):
                raise ValueError(f"landmark {name!r} must be a finite 3D point")
            self.points[name] = p

    def for_organ(self, organ: str) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.points.items() if self.organs.get(k) == organ}


# -- nearest neighbours -----------------------------------------------------

def _brute_nearest(points: np.ndarray, targets: np.ndarray) -> np.ndarray:
    d2 = ((points[:, None, :] - targets[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def nearest_vertices(points, targets, k: int = 8) -> np.ndarray:
    """Index of the nearest target for every point; ties go to the lowest index.

    A k-d tree proposes ``k`` candidates which are re-ranked with the same
    squared-distance arithmetic as brute force; rows whose candidate list
    might be truncated inside a tie fall back to an exhaustive scan.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if len(targets) == 0:
        raise EmptyInput("no target points")
    if len(points) == 0:
        return np.zeros(0, dtype=np.int64)
    k = min(k, len(targets))
    _, cand = cKDTree(targets).query(points, k=k)
    cand = np.asarray(cand).reshape(len(points), k)
    d2 = ((points[:, None, :] - targets[cand]) ** 2).sum(axis=2)
    best = d2.min(axis=1, keepdims=True)
    tie = d2 == best
    idx = np.where(tie, cand, np.iinfo(np.int64).max).min(axis=1)
    if k < len(targets):
        # every candidate ties or the k-th candidate is within rounding of the best
        unsure = d2.max(axis=1) <= best[:, 0] * (1 + 1e-9) + 1e-300
        if np.any(unsure):
            idx[unsure] = _brute_nearest(points[unsure], targets)
    return idx.astype(np.int64)


def nn_baseline(deformed_a: TriMesh, b: TriMesh) -> np.ndarray:
    """Map each vertex of a registered source mesh to its nearest target vertex."""
    return nearest_vertices(deformed_a.vertices, b.vertices)


def chamfer(points, target: TriMesh) -> float:
    """Mean distance from each point to its nearest target vertex (one-sided, mm)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if len(points) == 0:
        raise EmptyInput("chamfer needs at least one point")
    tv = target.vertices if isinstance(target, TriMesh) else np.asarray(target, dtype=np.float64)
    idx = nearest_vertices(points, tv)
    return float(np.sqrt(((points - tv[idx]) ** 2).sum(axis=1)).mean())


# -- geodesic error ---------------------------------------------------------

def geodesic_error(pi_hard, mesh_x: TriMesh, mesh_y: TriMesh, d_x, d_y, pairs,
                   normalise_by: str = "target") -> np.ndarray:
    """``|D_Y(pi(i), pi(j)) - D_X(i, j)| / sqrt(area)`` for each sampled pair."""
    d_x = getattr(d_x, "d", d_x)
    d_y = getattr(d_y, "d", d_y)
    pi_hard = np.asarray(pi_hard, dtype=np.int64)
    pairs = np.asarray(pairs, dtype=np.int64)
    i, j = pairs[:, 0], pairs[:, 1]
    area = surface_area(mesh_y if normalise_by == "target" else mesh_x)
    return np.abs(d_y[pi_hard[i], pi_hard[j]] - d_x[i, j]) / math.sqrt(area)


# -- conformal distortion ---------------------------------------------------

def _planar_frames(tri: np.ndarray) -> np.ndarray:
    """2x2 matrices whose columns are the two edge vectors of each triangle
    expressed in an isometric 2D frame."""
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    l1 = np.linalg.norm(e1, axis=1)
    safe = np.where(l1 > 0, l1, 1.0)
    u = e1 / safe[:, None]
    x2 = np.einsum("ij,ij->i", e2, u)
    y2 = np.linalg.norm(e2 - x2[:, None] * u, axis=1)
    out = np.zeros((len(tri), 2, 2))
    out[:, 0, 0] = l1
    out[:, 0, 1] = x2
    out[:, 1, 1] = y2
    return out


def triangle_distortion(source_vertices, target_vertices, faces) -> np.ndarray:
    """Per-triangle ``s1/s2 + s2/s1 - 2`` of the linear map between two triangulations."""
    faces = np.asarray(faces, dtype=np.int64)
    src = np.asarray(source_vertices, dtype=np.float64)[faces]
    dst = np.asarray(target_vertices, dtype=np.float64)[faces]
    a = _planar_frames(src)
    b = _planar_frames(dst)
    src_area = 0.5 * np.abs(a[:, 0, 0] * a[:, 1, 1])
    if np.any(src_area < 1e-12):
        raise DegenerateSource("source triangle with area < 1e-12 mm^2")
    jac = b @ np.linalg.inv(a)
    s = np.linalg.svd(jac, compute_uv=False)
    s1, s2 = s[:, 0], s[:, 1]
    ok = s2 >= 1e-9
    out = np.full(len(faces), DEGENERATE_DISTORTION)
    out[ok] = s1[ok] / s2[ok] + s2[ok] / s1[ok] - 2.0
    return np.maximum(out, 0.0)


def conformal_distortion(mesh_x: TriMesh, sequence, per_step: bool = False) -> np.ndarray:
    """Distortion of every triangle from the source to the final frame.

    With ``per_step`` the distortion of each consecutive frame pair is
    returned instead, shape (T, f).
    """
    frames = sequence.frames if hasattr(sequence, "frames") else np.asarray(sequence)
    if frames.ndim == 2:
        frames = frames[None]
    if not per_step:
        return triangle_distortion(mesh_x.vertices, frames[-1], mesh_x.faces)
    prev = mesh_x.vertices
    rows = []
    for frame in frames:
        rows.append(triangle_distortion(prev, frame, mesh_x.faces))
        prev = frame
    return np.array(rows)


# -- landmarks --------------------------------------------------------------

def landmark_error(landmark_target, landmark_source, mesh_y: TriMesh, mesh_x: TriMesh, pi_hard_yx) -> float:
    """Distance between the predicted and annotated source landmark vertices (mm).

    The target landmark is snapped to its nearest target vertex, carried to
    the source through ``pi_hard_yx`` and compared with the source vertex
    nearest to the source landmark.
    """
    y_star = nearest_vertices(np.asarray(landmark_target, dtype=np.float64).reshape(1, 3), mesh_y.vertices)[0]
    x_true = nearest_vertices(np.asarray(landmark_source, dtype=np.float64).reshape(1, 3), mesh_x.vertices)[0]
    predicted = mesh_x.vertices[int(np.asarray(pi_hard_yx)[y_star])]
    return float(np.linalg.norm(predicted - mesh_x.vertices[x_true]))


# -- statistics -------------------------------------------------------------

def _rank_with_ties(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_null_counts(doubled_ranks: np.ndarray) -> np.ndarray:
    """Number of sign assignments giving each value of 2 * W+."""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled_ranks.astype(np.int64):
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:len(counts) - r]
        counts = counts + shifted
    return counts


@dataclass
class WilcoxonResult:
    statistic: float
    p_value: float
    n: int
    method: str


def wilcoxon_signed_rank(a, b, exact_max_n: int = 25) -> WilcoxonResult:
    """Two-sided paired signed-rank test; zero differences are dropped.

    Uses the exact permutation distribution for up to ``exact_max_n``
    non-zero differences, otherwise a normal approximation with tie and
    continuity corrections.
    """
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    d = d[d != 0]
    n = len(d)
    if n < 5:
        raise TooFewSamples(f"{n} non-zero differences; at least 5 are required")
    ranks = _rank_with_ties(np.abs(d))
    w_plus = ranks[d > 0].sum()
    w_minus = ranks[d < 0].sum()
    stat = min(w_plus, w_minus)
    if n <= exact_max_n:
        doubled = np.rint(2 * ranks)
        counts = _exact_null_counts(doubled)
        total = counts.sum()
        k = int(round(2 * w_plus))
        lower = counts[:k + 1].sum() / total
        upper = counts[k:].sum() / total
        p = min(1.0, 2.0 * min(lower, upper))
        return WilcoxonResult(stat, p, n, "exact")
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - (tie_counts ** 3 - tie_counts).sum() / 48.0
    z = (abs(w_plus - mean) - 0.5) / math.sqrt(var)
    p = min(1.0, math.erfc(max(z, 0.0) / math.sqrt(2.0)))
    return WilcoxonResult(stat, p, n, "normal")


def significance_marker(p: float) -> str:
    """Marker for the four significance bands of the landmark table."""
    if p < 0.00005:
        return "‡"
    if p < 0.0005:
        return "†"
    if p < 0.005:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def cumulative_curve(values, n_points: int = 101) -> np.ndarray:
    """Rows ``(threshold, fraction <= threshold)`` on an even grid over [0, max]."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise EmptyInput("cumulative_curve needs at least one value")
    thresholds = np.linspace(0.0, v.max(), n_points)
    s = np.sort(v)
    frac = np.searchsorted(s, thresholds, side="right") / v.size
    frac[-1] = 1.0
    return np.stack([thresholds, frac], axis=1)
