"""Unsupervised training losses.

All terms take tape tensors (or arrays) and return scalar tensors, so they
can be differentiated through :mod:`rtcorr.autodiff`.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeMismatch, Tensor
from .autodiff.ops import scatter_add_rows
from .meshkit import TriMesh
from .volumes import PatchSet

BASE_ARAP_WEIGHT = 10.0


@dataclass
class LossWeights:
    w_reg: float = 1.0
    w_arap: float = 10.0 * BASE_ARAP_WEIGHT
    w_geo: float = 1.0
    lambda_imaging: float = 1000.0

    def __post_init__(self):
        if min(self.w_reg, self.w_arap, self.w_geo, self.lambda_imaging) < 0:
            raise ValueError("loss weights must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossBreakdown:
    reg: float
    arap: float
    geo: float
    imaging: float
    total: float


def registration_loss(final_frame, pi, v_y: np.ndarray) -> Tensor:
    """Mean squared distance between the final frame and ``Pi V_Y``."""
    final_frame, pi = ad.ops.as_tensor(final_frame), ad.ops.as_tensor(pi)
    n = final_frame.shape[0]
    if pi.shape != (n, len(v_y)) or final_frame.shape != (n, 3):
        raise ShapeMismatch("registration_loss: inconsistent shapes")
    diff = ad.sub(final_frame, ad.matmul(pi, v_y))
    return ad.scalar_mul(ad.squared_norm(diff), 1.0 / n)


def _edge_lists(mesh: TriMesh) -> tuple[np.ndarray, np.ndarray]:
    offsets, dst = mesh.adjacency_csr
    src = np.repeat(np.arange(mesh.n_vertices), np.diff(offsets))
    return src, dst


def procrustes_rotations(prev_edges: np.ndarray, cur_edges: np.ndarray, src: np.ndarray, n: int) -> np.ndarray:
    """Per-vertex rotations best mapping one-ring edge vectors of ``prev`` onto ``cur``.

    Solves ``min_R sum_j ||e'_ij - R e_ij||^2`` with an SVD of the edge
    covariance, flipping the last singular vector when needed so det(R) = +1.
    """
    cov = scatter_add_rows(src, cur_edges[:, :, None] * prev_edges[:, None, :], n)
    u, _, vt = np.linalg.svd(cov)
    det = np.linalg.det(u @ vt)
    u[:, :, 2] *= np.where(det < 0, -1.0, 1.0)[:, None]
    return u @ vt


def arap_energy(prev, cur, mesh: TriMesh, edges=None) -> Tensor:
    """ARAP energy between two frames of the same mesh, rotations held constant."""
    prev, cur = ad.ops.as_tensor(prev), ad.ops.as_tensor(cur)
    src, dst = edges if edges is not None else _edge_lists(mesh)
    n = mesh.n_vertices
    e_prev = ad.sub(ad.gather_rows(prev, src), ad.gather_rows(prev, dst))
    e_cur = ad.sub(ad.gather_rows(cur, src), ad.gather_rows(cur, dst))
    rot = procrustes_rotations(e_prev.value, e_cur.value, src, n)
    resid = ad.sub(e_cur, ad.rowwise_matvec(e_prev, rot[src]))
    return ad.scalar_mul(ad.squared_norm(resid), 1.0 / n)


def arap_loss(mesh_x: TriMesh, displacements, time_steps: int | None = None) -> Tensor:
    """Sum of ARAP energies over consecutive frames, starting from the source mesh.

    ``displacements`` is either an :class:`~rtcorr.corrnet.InterpolationSequence`,
    a (T, n, 3) array, or a time-major (T * n, 3) tensor.
    """
    if hasattr(displacements, "displacements"):
        displacements = displacements.displacements
    disp = ad.ops.as_tensor(displacements)
    n = mesh_x.n_vertices
    if disp.value.ndim == 3:
        disp = ad.reshape(disp, (-1, 3))
    steps = time_steps or disp.shape[0] // n
    if disp.shape != (steps * n, 3):
        raise ShapeMismatch("arap_loss: displacements do not match the mesh")
    edges = _edge_lists(mesh_x)
    v_x = mesh_x.vertices
    prev = Tensor(v_x)
    total = None
    for k in range(steps):
        frame = ad.add(ad.gather_rows(disp, np.arange(k * n, (k + 1) * n)), v_x)
        e = arap_energy(prev, frame, mesh_x, edges)
        total = e if total is None else ad.add(total, e)
        prev = frame
    return total


def geodesic_loss(pi, d_x: np.ndarray, d_y: np.ndarray, pairs: np.ndarray) -> Tensor:
    """Mean squared gap between ``(Pi D_Y Pi^T)_ij`` and ``D_X[i, j]`` over sampled pairs.

    Only the sampled entries of the transported distance matrix are formed.
    """
    pi = ad.ops.as_tensor(pi)
    d_x = getattr(d_x, "d", d_x)
    d_y = getattr(d_y, "d", d_y)
    n, m = pi.shape
    if d_x.shape != (n, n) or d_y.shape != (m, m):
        raise ShapeMismatch("geodesic_loss: distance tables do not match Pi")
    pairs = np.asarray(pairs, dtype=np.int64)
    i, j = pairs[:, 0], pairs[:, 1]
    rows_i = ad.matmul(ad.gather_rows(pi, i), d_y)
    transported = ad.rowwise_sum(ad.elementwise_mul(rows_i, ad.gather_rows(pi, j)))
    diff = ad.sub(transported, d_x[i, j][:, None])
    return ad.scalar_mul(ad.squared_norm(diff), 1.0 / len(pairs))


def imaging_loss(pi, x_patches, y_patches) -> Tensor:
    """Mean squared difference between ``Pi Y_patches`` and ``X_patches`` (before lambda)."""
    pi = ad.ops.as_tensor(pi)
    xp = x_patches.data if isinstance(x_patches, PatchSet) else np.asarray(x_patches)
    yp = y_patches.data if isinstance(y_patches, PatchSet) else np.asarray(y_patches)
    n, m = pi.shape
    if len(xp) != n or len(yp) != m or xp.shape[1] != yp.shape[1]:
        raise ShapeMismatch("imaging_loss: patch sets do not match Pi")
    diff = ad.sub(ad.matmul(pi, yp), xp)
    return ad.scalar_mul(ad.squared_norm(diff), 1.0 / xp.size)


def total_loss(reg, arap, geo, imaging, weights: LossWeights, use_imaging: bool = True):
    """Weighted sum of the components.

    Returns ``(total_tensor, breakdown)``; ``imaging`` may be ``None`` (or
    ``use_imaging`` False) to drop the image term.
    """
    terms = [(reg, weights.w_reg), (arap, weights.w_arap), (geo, weights.w_geo)]
    if use_imaging and imaging is not None:
        terms.append((imaging, weights.lambda_imaging))
    total = None
    for value, w in terms:
        if value is None:
            continue
        t = ad.scalar_mul(ad.ops.as_tensor(value), w)
        total = t if total is None else ad.add(total, t)
    if total is None:
        total = Tensor(0.0)

    def scalar(x):
        return 0.0 if x is None else float(ad.ops.as_tensor(x).value.reshape(-1)[0])

    breakdown = LossBreakdown(
        reg=scalar(reg), arap=scalar(arap), geo=scalar(geo),
        imaging=scalar(imaging) if use_imaging else 0.0, total=total.item(),
    )
    return total, breakdown
