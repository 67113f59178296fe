"""Binary parameter checkpoints.

Layout (little-endian)::

    b"RTCKPT01"  u32 count
    count x { u16 name_len, utf-8 name, u8 ndim, ndim x u32 dim }
    concatenated float64 buffers in manifest order
    u8 has_adam
    [ f64 lr, f64 beta1, f64 beta2, f64 eps, u64 t,
      m buffers (manifest order), v buffers (manifest order) ]
"""
from __future__ import annotations

import io
import os
import struct
from pathlib import Path

import numpy as np

from .adam import AdamState

MAGIC = b"RTCKPT01"


def save_checkpoint(path, params: dict[str, np.ndarray], adam: AdamState | None = None) -> None:
    buf = io.BytesIO()
    names = list(params)
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(names)))
    for name in names:
        raw = name.encode("utf-8")
        shape = params[name].shape
        buf.write(struct.pack("<H", len(raw)) + raw)
        buf.write(struct.pack("<B", len(shape)) + struct.pack(f"<{len(shape)}I", *shape))
    for name in names:
        buf.write(np.ascontiguousarray(params[name], dtype="<f8").tobytes())
    if adam is None:
        buf.write(struct.pack("<B", 0))
    else:
        buf.write(struct.pack("<B", 1))
        buf.write(struct.pack("<ddddQ", adam.lr, adam.beta1, adam.beta2, adam.eps, adam.t))
        for moments in (adam.m, adam.v):
            for name in names:
                arr = moments.get(name, np.zeros_like(params[name]))
                buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], AdamState | None]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ValueError(f"{path}: not a parameter checkpoint")
    pos = len(MAGIC)
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    manifest = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        manifest.append((name, shape))

    def read_buffers():
        nonlocal pos
        out = {}
        for name, shape in manifest:
            size = int(np.prod(shape))
            out[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * size
        return out

    params = read_buffers()
    (has_adam,) = struct.unpack_from("<B", data, pos)
    pos += 1
    adam = None
    if has_adam:
        lr, b1, b2, eps, t = struct.unpack_from("<ddddQ", data, pos)
        pos += struct.calcsize("<ddddQ")
        m = read_buffers()
        v = read_buffers()
        adam = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps, t=t, m=m, v=v)
    return params, adam
