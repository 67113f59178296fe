"""ASCII OFF and binary little-endian PLY mesh files."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .mesh import TriMesh


def save_off(mesh: TriMesh, path) -> None:
    lines = ["OFF", f"{mesh.n_vertices} {mesh.n_faces} 0"]
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.faces.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_off(path) -> TriMesh:
    text = "\n".join(line.split("#", 1)[0] for line in Path(path).read_text().splitlines())
    tokens = text.split()
    if not tokens or tokens[0] != "OFF":
        raise ValueError(f"{path}: not an OFF file")
    nv, nf = int(tokens[1]), int(tokens[2])
    pos = 4
    verts = np.array(tokens[pos:pos + 3 * nv], dtype=np.float64).reshape(nv, 3)
    pos += 3 * nv
    faces = np.empty((nf, 3), dtype=np.int64)
    for k in range(nf):
        if tokens[pos] != "3":
            raise ValueError(f"{path}: only triangle faces are supported")
        faces[k] = [int(t) for t in tokens[pos + 1:pos + 4]]
        pos += 4
    return TriMesh(verts, faces)


def save_ply(mesh: TriMesh, path) -> None:
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {mesh.n_vertices}\n"
        "property float x\nproperty float y\nproperty float z\n"
        f"element face {mesh.n_faces}\n"
        "property list uchar uint vertex_indices\nend_header\n"
    )
    face_dtype = np.dtype([("n", "u1"), ("idx", "<u4", (3,))])
    faces = np.empty(mesh.n_faces, dtype=face_dtype)
    faces["n"] = 3
    faces["idx"] = mesh.faces
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(mesh.vertices.astype("<f4").tobytes())
        fh.write(faces.tobytes())


def load_ply(path) -> TriMesh:
    data = Path(path).read_bytes()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise ValueError(f"{path}: not a PLY file")
    header = data[:end].decode("ascii").splitlines()
    if "format binary_little_endian 1.0" not in header:
        raise ValueError(f"{path}: only binary little-endian PLY is supported")
    nv = nf = 0
    for line in header:
        if line.startswith("element vertex"):
            nv = int(line.split()[-1])
        elif line.startswith("element face"):
            nf = int(line.split()[-1])
    offset = end + len(b"end_header\n")
    verts = np.frombuffer(data, dtype="<f4", count=3 * nv, offset=offset).reshape(nv, 3)
    offset += 12 * nv
    face_dtype = np.dtype([("n", "u1"), ("idx", "<u4", (3,))])
    faces = np.frombuffer(data, dtype=face_dtype, count=nf, offset=offset)
    if nf and np.any(faces["n"] != 3):
        raise ValueError(f"{path}: only triangle faces are supported")
    return TriMesh(verts.astype(np.float64), faces["idx"].astype(np.int64))


def load_mesh(path) -> TriMesh:
    suffix = Path(path).suffix.lower()
    if suffix == ".off":
        return load_off(path)
    if suffix == ".ply":
        return load_ply(path)
    raise ValueError(f"unsupported mesh format: {suffix}")


def save_mesh(mesh: TriMesh, path) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".off":
        save_off(mesh, path)
    elif suffix == ".ply":
        save_ply(mesh, path)
    else:
        raise ValueError(f"unsupported mesh format: {suffix}")
