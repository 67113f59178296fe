"""Differentiable operations.

No implicit broadcasting: binary element-wise ops need equal shapes, except
``scalar_mul`` and ``bias_add`` which broadcast a scalar or a row vector.
"""
from __future__ import annotations

import numpy as np
from scipy import sparse

from .tape import EmptySegment, ShapeMismatch, Tensor, active_tape, as_tensor


def _record(op, value, inputs, fn):
    tape = active_tape()
    if tape is None:
        return Tensor(value)
    return tape.record(op, value, inputs, fn)


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} differ")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value
    return _record("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.value.ndim != 2:
        raise ShapeMismatch("transpose expects a matrix")
    return _record("transpose", a.value.T.copy(), (a,), lambda g: (g.T,))


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return _record("add", a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "sub")
    return _record("sub", a.value - b.value, (a, b), lambda g: (g, -g))


def elementwise_mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "elementwise_mul")
    av, bv = a.value, b.value
    return _record("mul", av * bv, (a, b), lambda g: (g * bv, g * av))


def scalar_mul(a, s: float) -> Tensor:
    a = as_tensor(a)
    s = float(s)
    return _record("scalar_mul", a.value * s, (a,), lambda g: (g * s,))


def bias_add(x, b) -> Tensor:
    """Add a length-``d`` vector to every row of an ``(n, d)`` matrix."""
    x, b = as_tensor(x), as_tensor(b)
    if x.value.ndim != 2 or b.value.shape != (x.shape[1],):
        raise ShapeMismatch(f"bias_add: bias {b.shape} does not match rows of {x.shape}")
    return _record("bias_add", x.value + b.value, (x, b), lambda g: (g, g.sum(axis=0)))


def concat_cols(tensors) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    rows = {t.shape[0] for t in tensors}
    if len(rows) != 1 or any(t.value.ndim != 2 for t in tensors):
        raise ShapeMismatch("concat_cols: all inputs must be 2D with equal row counts")
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]
    value = np.concatenate([t.value for t in tensors], axis=1)
    return _record("concat_cols", value, tensors, lambda g: tuple(np.split(g, splits, axis=1)))


def concat_rows(tensors) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if len({t.shape[1:] for t in tensors}) != 1:
        raise ShapeMismatch("concat_rows: trailing shapes differ")
    splits = np.cumsum([t.shape[0] for t in tensors])[:-1]
    value = np.concatenate([t.value for t in tensors], axis=0)
    return _record("concat_rows", value, tensors, lambda g: tuple(np.split(g, splits, axis=0)))


def scatter_add_rows(idx: np.ndarray, values: np.ndarray, n: int) -> np.ndarray:
    """``out[idx[k]] += values[k]`` for an ``n``-row output.

    Done as a product with a sparse 0/1 incidence matrix, which is much
    faster than ``np.add.at`` or a row-wise ``reduceat``.
    """
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        return np.zeros((n,) + values.shape[1:])
    flat = values.reshape(len(idx), -1)
    inc = sparse.csr_matrix((np.ones(len(idx)), (idx, np.arange(len(idx)))), shape=(n, len(idx)))
    return np.asarray(inc @ flat).reshape((n,) + values.shape[1:])


def gather_rows(x, indices) -> Tensor:
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    n = x.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeMismatch("gather_rows: index out of range")

    def fn(g):
        return (scatter_add_rows(idx, g, n),)

    return _record("gather_rows", x.value[idx], (x,), fn)


def segment_max(x, offsets) -> Tensor:
    """Column-wise max over consecutive row segments.

    ``offsets`` has one entry per segment start plus the total row count, as
    in CSR storage. The gradient of each output goes to the first row that
    attains the maximum.
    """
    x = as_tensor(x)
    off = np.asarray(offsets, dtype=np.int64)
    if off[0] != 0 or off[-1] != x.shape[0]:
        raise ShapeMismatch("segment_max: offsets must span all rows")
    starts, lengths = off[:-1], np.diff(off)
    if np.any(lengths <= 0):
        raise EmptySegment("segment_max: every segment needs at least one row")
    xv = x.value
    # pad short segments by repeating their last row; repeats never change a max
    padded = starts[:, None] + np.minimum(np.arange(lengths.max())[None, :], lengths[:, None] - 1)
    out = xv[padded].max(axis=1)

    def fn(g):
        seg = np.repeat(np.arange(len(starts)), lengths)
        hit = xv == out[seg]
        if scatter_add_rows(seg, hit.astype(np.float64), len(starts)).max() > 1:
            # a tie inside some segment: keep only the first attaining row
            rows = np.arange(xv.shape[0])[:, None]
            first = np.minimum.reduceat(np.where(hit, rows, xv.shape[0]), starts, axis=0)
            hit = rows == first[seg]
        return (np.where(hit, g[seg], 0.0),)

    return _record("segment_max", out, (x,), fn)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.value > 0
    return _record("relu", np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def row_softmax(x, temperature: float = 1.0) -> Tensor:
    x = as_tensor(x)
    if x.value.ndim != 2:
        raise ShapeMismatch("row_softmax expects a matrix")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    z = x.value / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def fn(g):
        return ((g - (g * p).sum(axis=1, keepdims=True)) * p / temperature,)

    return _record("row_softmax", p, (x,), fn)


def sum(x) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    return _record("sum", np.array([x.value.sum()]), (x,), lambda g: (np.full_like(x.value, g[0]),))


def mean(x) -> Tensor:
    x = as_tensor(x)
    n = x.value.size
    return _record("mean", np.array([x.value.sum() / n]), (x,), lambda g: (np.full_like(x.value, g[0] / n),))


def squared_norm(x) -> Tensor:
    """Sum of squares of all entries."""
    x = as_tensor(x)
    xv = x.value
    return _record("squared_norm", np.array([np.dot(xv.ravel(), xv.ravel())]), (x,), lambda g: (2.0 * g[0] * xv,))


def rowwise_sum(x) -> Tensor:
    """Sum across columns, returning an ``(n, 1)`` column."""
    x = as_tensor(x)
    return _record("rowwise_sum", x.value.sum(axis=1, keepdims=True), (x,),
                   lambda g: (np.broadcast_to(g, x.shape).copy(),))


def rowwise_matvec(x, mats) -> Tensor:
    """``out[k] = mats[k] @ x[k]`` with constant per-row matrices ``mats`` (n, p, q)."""
    x = as_tensor(x)
    m = np.asarray(mats, dtype=np.float64)
    if m.ndim != 3 or m.shape[0] != x.shape[0] or m.shape[2] != x.shape[1]:
        raise ShapeMismatch(f"rowwise_matvec: {m.shape} incompatible with {x.shape}")
    out = np.einsum("kpq,kq->kp", m, x.value)
    return _record("rowwise_matvec", out, (x,), lambda g: (np.einsum("kpq,kp->kq", m, g),))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _record("reshape", x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def conv3d(x, w) -> Tensor:
    """Zero-padded 'same' 3D convolution (cross-correlation).

    ``x`` has shape (n, c_in, d, h, w); ``w`` has shape (c_out, c_in, k, k, k)
    with odd ``k``.
    """
    x, w = as_tensor(x), as_tensor(w)
    xv, wv = x.value, w.value
    if xv.ndim != 5 or wv.ndim != 5 or xv.shape[1] != wv.shape[1]:
        raise ShapeMismatch(f"conv3d: input {xv.shape} incompatible with kernel {wv.shape}")
    k = wv.shape[2]
    if wv.shape[2:] != (k, k, k) or k % 2 != 1:
        raise ShapeMismatch("conv3d: kernels must be cubic with odd size")
    p = k // 2
    n, c, d, h, wd = xv.shape
    padded = np.pad(xv, ((0, 0), (0, 0), (p, p), (p, p), (p, p)))
    win = np.lib.stride_tricks.sliding_window_view(padded, (k, k, k), axis=(2, 3, 4))
    # win: (n, c, d, h, w, k, k, k)
    out = np.einsum("ncdhwxyz,ocxyz->nodhw", win, wv, optimize=True)

    def fn(g):
        gw = np.einsum("nodhw,ncdhwxyz->ocxyz", g, win, optimize=True)
        # input gradient is a full correlation of g with the flipped kernel
        gp = np.pad(g, ((0, 0), (0, 0), (p, p), (p, p), (p, p)))
        gwin = np.lib.stride_tricks.sliding_window_view(gp, (k, k, k), axis=(2, 3, 4))
        gx = np.einsum("nodhwxyz,ocxyz->ncdhw", gwin, wv[:, :, ::-1, ::-1, ::-1], optimize=True)
        return gx, gw

    return _record("conv3d", out, (x, w), fn)


def channel_bias_add(x, b) -> Tensor:
    """Add one bias per channel of an (n, c, ...) tensor."""
    x, b = as_tensor(x), as_tensor(b)
    if b.value.shape != (x.shape[1],):
        raise ShapeMismatch("channel_bias_add: bias length must match channel count")
    shape = (1, -1) + (1,) * (x.value.ndim - 2)
    axes = (0,) + tuple(range(2, x.value.ndim))
    return _record("channel_bias_add", x.value + b.value.reshape(shape), (x, b), lambda g: (g, g.sum(axis=axes)))


def subsample_inplane(x) -> Tensor:
    """Keep every second sample along the last two axes of (n, c, d, h, w)."""
    x = as_tensor(x)
    xv = x.value

    def fn(g):
        gx = np.zeros_like(xv)
        gx[..., ::2, ::2] = g
        return (gx,)

    return _record("subsample_inplane", xv[..., ::2, ::2].copy(), (x,), fn)
