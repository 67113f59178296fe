"""Siamese residual-EdgeConv correspondence network with a time-stepped interpolator.

Two meshes pass through the same feature extractor; the product of their
feature matrices, softmax-normalised per row, gives a soft correspondence
matrix. Offsets from each source vertex to its soft target position, the
source positions and a time value feed an interpolator of the same graph
architecture that predicts one displacement field per time step.

Parameters live in a plain ``dict[str, ndarray]``. Forward functions accept
either arrays or tracked :class:`~rtcorr.autodiff.Tensor` values, so the same
code runs for inference and under a training tape.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeMismatch, Tensor
from .meshkit import TriMesh
from .volumes import PATCH_SHAPE, PatchSet

IMG_CHANNELS = (8, 16, 32)


class MissingPatches(ValueError):
    """Image features are enabled but no patch set was supplied."""


@dataclass
class ModelConfig:
    geo_width: int = 128
    geo_depth: int = 6
    use_image_features: bool = False
    img_width: int = 64
    time_steps: int = 5
    softmax_temperature: float | None = None
    # coordinates are centred on the mesh centroid and divided by this (mm)
    input_scale: float = 10.0

    def __post_init__(self):
        if self.geo_width < 1 or self.img_width < 1:
            raise ValueError("widths must be >= 1")
        if self.geo_depth < 1:
            raise ValueError("depth must be >= 1")
        if self.time_steps < 1:
            raise ValueError("time_steps must be >= 1")

    @property
    def feature_dim(self) -> int:
        return self.geo_width + (self.img_width if self.use_image_features else 0)

    @property
    def temperature(self) -> float:
        if self.softmax_temperature is not None:
            return float(self.softmax_temperature)
        return math.sqrt(self.feature_dim)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class CorrespondenceMatrix:
    """Row-stochastic soft map from source rows to target columns."""

    pi: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.pi.shape


@dataclass(frozen=True, eq=False)
class InterpolationSequence:
    """Displacements ``d(t_k)`` of the source vertices for ``t_k = k / T``."""

    source_vertices: np.ndarray
    displacements: np.ndarray  # (T, n, 3)
    times: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.times is None:
            t = len(self.displacements)
            object.__setattr__(self, "times", np.arange(1, t + 1) / t)

    @property
    def frames(self) -> np.ndarray:
        """Vertex positions at every time step, shape (T, n, 3)."""
        return self.source_vertices[None] + self.displacements

    @property
    def final_frame(self) -> np.ndarray:
        return self.source_vertices + self.displacements[-1]


# -- graph plumbing ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Graph:
    """Directed edge lists sorted by source, with CSR offsets."""

    n: int
    offsets: np.ndarray
    src: np.ndarray
    dst: np.ndarray

    @classmethod
    def from_mesh(cls, mesh: TriMesh) -> Graph:
        offsets, dst = mesh.adjacency_csr
        n = mesh.n_vertices
        deg = np.diff(offsets)
        if np.any(deg == 0):
            # isolated vertices aggregate over a self-loop
            lists = [dst[offsets[i]:offsets[i + 1]] if deg[i] else np.array([i]) for i in range(n)]
            deg = np.array([len(x) for x in lists])
            dst = np.concatenate(lists) if lists else np.zeros(0, dtype=np.int64)
            offsets = np.concatenate([[0], np.cumsum(deg)])
        src = np.repeat(np.arange(n), deg)
        return cls(n, offsets.astype(np.int64), src, dst.astype(np.int64))

    def tiled(self, copies: int) -> Graph:
        """Disjoint union of ``copies`` identical graphs."""
        e = len(self.src)
        shift_v = np.repeat(np.arange(copies) * self.n, e)
        offsets = np.concatenate([(self.offsets[:-1][None, :] + e * np.arange(copies)[:, None]).ravel(),
                                  [copies * e]])
        return Graph(self.n * copies, offsets.astype(np.int64),
                     np.tile(self.src, copies) + shift_v, np.tile(self.dst, copies) + shift_v)


# -- parameters -------------------------------------------------------------

def _uniform(rng, fan_in, shape):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _edgeconv_params(rng, prefix: str, width: int, depth: int) -> dict[str, np.ndarray]:
    p = {}
    for k in range(depth):
        # first MLP layer acting on [h_i || h_j - h_i], stored as its two row blocks
        p[f"{prefix}.block{k}.w_self"] = _uniform(rng, 2 * width, (width, width))
        p[f"{prefix}.block{k}.w_nbr"] = _uniform(rng, 2 * width, (width, width))
        p[f"{prefix}.block{k}.b1"] = np.zeros(width)
        p[f"{prefix}.block{k}.w2"] = _uniform(rng, width, (width, width))
        p[f"{prefix}.block{k}.b2"] = np.zeros(width)
    return p


def init_params(config: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Seeded fan-in uniform initialisation; the interpolator head starts at zero."""
    rng = np.random.default_rng(seed)
    w = config.geo_width
    p = {"feat.lift.w": _uniform(rng, 3, (3, w)), "feat.lift.b": np.zeros(w)}
    p.update(_edgeconv_params(rng, "feat", w, config.geo_depth))
    p["interp.lift.w"] = _uniform(rng, 7, (7, w))
    p["interp.lift.b"] = np.zeros(w)
    p.update(_edgeconv_params(rng, "interp", w, config.geo_depth))
    p["interp.head.w"] = np.zeros((w, 3))
    p["interp.head.b"] = np.zeros(3)
    if config.use_image_features:
        c_in = 1
        for k, c_out in enumerate(IMG_CHANNELS):
            p[f"img.conv{k}.w"] = _uniform(rng, 27 * c_in, (c_out, c_in, 3, 3, 3))
            p[f"img.conv{k}.b"] = np.zeros(c_out)
            c_in = c_out
        flat = IMG_CHANNELS[-1] * _encoded_spatial_size()
        p["img.fc.w"] = _uniform(rng, flat, (flat, config.img_width))
        p["img.fc.b"] = np.zeros(config.img_width)
    return p


def parameter_count(params: dict[str, np.ndarray]) -> int:
    return int(sum(v.size for v in params.values()))


def _encoded_spatial_size() -> int:
    d, h, w = PATCH_SHAPE
    for _ in range(len(IMG_CHANNELS) - 1):
        h, w = (h + 1) // 2, (w + 1) // 2
    return d * h * w


# -- network pieces ---------------------------------------------------------

def edgeconv_block(h, graph: Graph, params, prefix: str) -> Tensor:
    """``h_i + max_j MLP([h_i || h_j - h_i])`` over the neighbours ``j`` of ``i``."""
    h = ad.ops.as_tensor(h)
    if h.shape[0] != graph.n:
        raise ShapeMismatch(f"edgeconv_block: {h.shape[0]} feature rows for a {graph.n}-vertex graph")
    a = ad.matmul(h, params[f"{prefix}.w_self"])
    b = ad.matmul(h, params[f"{prefix}.w_nbr"])
    hidden = ad.add(ad.gather_rows(ad.sub(a, b), graph.src), ad.gather_rows(b, graph.dst))
    hidden = ad.relu(ad.bias_add(hidden, params[f"{prefix}.b1"]))
    msg = ad.bias_add(ad.matmul(hidden, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])
    return ad.add(h, ad.segment_max(msg, graph.offsets))


def _normalised_coords(vertices: np.ndarray, config: ModelConfig) -> np.ndarray:
    return (vertices - vertices.mean(axis=0)) / config.input_scale


def image_encoder(patches, params, chunk: int = 64) -> Tensor:
    """Per-vertex 3D CNN over the 7x19x19 patches -> (n, img_width)."""
    data = patches.data if isinstance(patches, PatchSet) else patches
    data = ad.ops.as_tensor(data)
    n = data.shape[0]
    outs = []
    for start in range(0, n, chunk):
        rows = np.arange(start, min(n, start + chunk))
        x = ad.reshape(ad.gather_rows(data, rows), (len(rows), 1) + PATCH_SHAPE)
        for k in range(len(IMG_CHANNELS)):
            if k:
                x = ad.subsample_inplane(x)
            x = ad.conv3d(x, params[f"img.conv{k}.w"])
            x = ad.relu(ad.channel_bias_add(x, params[f"img.conv{k}.b"]))
        x = ad.reshape(x, (len(rows), -1))
        outs.append(ad.bias_add(ad.matmul(x, params["img.fc.w"]), params["img.fc.b"]))
    return outs[0] if len(outs) == 1 else ad.concat_rows(outs)


def extract_features(mesh: TriMesh, patchset, params, config: ModelConfig, graph: Graph | None = None) -> Tensor:
    """Per-vertex features (n, D) from the shared extractor."""
    if config.use_image_features:
        if patchset is None:
            raise MissingPatches("image features enabled but no patches supplied")
        count = patchset.count if isinstance(patchset, PatchSet) else len(patchset)
        if count != mesh.n_vertices:
            raise ShapeMismatch("patch rows must match mesh vertex count")
    graph = graph or Graph.from_mesh(mesh)
    x = _normalised_coords(mesh.vertices, config)
    h = ad.bias_add(ad.matmul(x, params["feat.lift.w"]), params["feat.lift.b"])
    for k in range(config.geo_depth):
        h = edgeconv_block(h, graph, params, f"feat.block{k}")
    if config.use_image_features:
        h = ad.concat_cols([h, image_encoder(patchset, params)])
    return h


def match(f_x, f_y, temperature: float) -> Tensor:
    """Row-softmax of ``F_X F_Y^T / temperature``."""
    f_x, f_y = ad.ops.as_tensor(f_x), ad.ops.as_tensor(f_y)
    if f_x.shape[1] != f_y.shape[1]:
        raise ShapeMismatch(f"match: feature widths {f_x.shape[1]} and {f_y.shape[1]} differ")
    return ad.row_softmax(ad.matmul(f_x, ad.transpose(f_y)), temperature)


def compute_offsets(pi, v_y: np.ndarray, v_x: np.ndarray) -> Tensor:
    """``Pi V_Y - V_X``: from each source vertex to its soft counterpart."""
    pi = ad.ops.as_tensor(pi)
    if pi.shape[1] != len(v_y):
        raise ShapeMismatch("compute_offsets: Pi columns must match target vertex count")
    if pi.shape[0] != len(v_x):
        raise ShapeMismatch("compute_offsets: Pi rows must match source vertex count")
    return ad.sub(ad.matmul(pi, v_y), v_x)


def interpolate_displacements(mesh_x: TriMesh, delta, params, config: ModelConfig,
                              graph: Graph | None = None) -> Tensor:
    """Displacements for all time steps stacked as (T * n, 3), time-major."""
    delta = ad.ops.as_tensor(delta)
    n = mesh_x.n_vertices
    if delta.shape != (n, 3):
        raise ShapeMismatch("interpolate: delta must have one row per source vertex")
    steps = config.time_steps
    graph = (graph or Graph.from_mesh(mesh_x)).tiled(steps)
    x = _normalised_coords(mesh_x.vertices, config)
    times = np.repeat(np.arange(1, steps + 1) / steps, n)[:, None]
    rows = np.arange(n)
    tiled = np.tile(rows, steps)
    coords = np.tile(x, (steps, 1))
    d_in = ad.scalar_mul(ad.gather_rows(delta, tiled), 1.0 / config.input_scale)
    inp = ad.concat_cols([coords, d_in, times])
    h = ad.bias_add(ad.matmul(inp, params["interp.lift.w"]), params["interp.lift.b"])
    for k in range(config.geo_depth):
        h = edgeconv_block(h, graph, params, f"interp.block{k}")
    out = ad.bias_add(ad.matmul(h, params["interp.head.w"]), params["interp.head.b"])
    return ad.scalar_mul(out, config.input_scale)


def interpolate(mesh_x: TriMesh, delta, params, config: ModelConfig) -> InterpolationSequence:
    disp = interpolate_displacements(mesh_x, delta, params, config).value
    return InterpolationSequence(mesh_x.vertices.copy(), disp.reshape(config.time_steps, mesh_x.n_vertices, 3))


@dataclass
class PairOutput:
    """Tensors of one forward pass (tracked when a tape is active)."""

    pi: Tensor
    displacements: Tensor  # (T * n, 3), time-major
    features_x: Tensor
    features_y: Tensor


def forward_pair_tensors(mesh_x: TriMesh, mesh_y: TriMesh, params, config: ModelConfig,
                         patches_x=None, patches_y=None, graph_x: Graph | None = None,
                         graph_y: Graph | None = None) -> PairOutput:
    f_x = extract_features(mesh_x, patches_x, params, config, graph_x)
    if mesh_y is mesh_x and patches_y is patches_x:
        f_y = f_x
    else:
        f_y = extract_features(mesh_y, patches_y, params, config, graph_y)
    pi = match(f_x, f_y, config.temperature)
    delta = compute_offsets(pi, mesh_y.vertices, mesh_x.vertices)
    disp = interpolate_displacements(mesh_x, delta, params, config, graph_x)
    return PairOutput(pi, disp, f_x, f_y)


def forward_pair(mesh_x: TriMesh, mesh_y: TriMesh, params, config: ModelConfig,
                 patches_x=None, patches_y=None) -> tuple[CorrespondenceMatrix, InterpolationSequence]:
    out = forward_pair_tensors(mesh_x, mesh_y, params, config, patches_x, patches_y)
    seq = InterpolationSequence(mesh_x.vertices.copy(),
                                out.displacements.value.reshape(config.time_steps, mesh_x.n_vertices, 3))
    return CorrespondenceMatrix(out.pi.value), seq


def hard_correspondence(pi) -> np.ndarray:
    """Row-wise argmax, ties going to the lowest column."""
    m = pi.pi if isinstance(pi, CorrespondenceMatrix) else np.asarray(pi)
    return np.argmax(m, axis=1)
