"""Readers/writers for OBJ, PLY (ASCII and binary) and XYZ files. Units are mm."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .surface import SurfaceError, TriangleMesh, clean_mesh

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _fan(poly: list[int]) -> list[tuple[int, int, int]]:
    return [(poly[0], poly[i], poly[i + 1]) for i in range(1, len(poly) - 1)]


def read_obj(path) -> tuple[np.ndarray, np.ndarray]:
    verts, faces = [], []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                poly = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    poly.append(i - 1 if i > 0 else len(verts) + i)
                faces.extend(_fan(poly))
    return np.asarray(verts, dtype=float).reshape(-1, 3), np.asarray(faces, dtype=np.int64).reshape(-1, 3)


def _parse_ply_header(fh):
    if fh.readline().strip() != b"ply":
        raise SurfaceError("not a PLY file")
    fmt, elements = None, []
    while True:
        line = fh.readline()
        if not line:
            raise SurfaceError("truncated PLY header")
        parts = line.decode("ascii", errors="replace").split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if parts[1] == "list":
                elements[-1][2].append((parts[4], "list", parts[2], parts[3]))
            else:
                elements[-1][2].append((parts[2], parts[1], None, None))
        elif parts[0] == "end_header":
            return fmt, elements


def _read_ply_binary(fh, elements, endian):
    data = {}
    for name, count, props in elements:
        if all(kind != "list" for _, kind, _, _ in props):
            dt = np.dtype([(p, endian + _PLY_TYPES[kind]) for p, kind, _, _ in props])
            arr = np.frombuffer(fh.read(dt.itemsize * count), dtype=dt, count=count)
            data[name] = {p: arr[p].astype(float) for p, *_ in props}
            continue
        cols = {p: [] for p, *_ in props}
        for _ in range(count):
            for p, kind, ctype, itype in props:
                if kind == "list":
                    cdt = np.dtype(endian + _PLY_TYPES[ctype])
                    n = int(np.frombuffer(fh.read(cdt.itemsize), dtype=cdt)[0])
                    idt = np.dtype(endian + _PLY_TYPES[itype])
                    cols[p].append(np.frombuffer(fh.read(idt.itemsize * n), dtype=idt).astype(np.int64).tolist())
                else:
                    sdt = np.dtype(endian + _PLY_TYPES[kind])
                    cols[p].append(float(np.frombuffer(fh.read(sdt.itemsize), dtype=sdt)[0]))
        data[name] = cols
    return data


def _read_ply_ascii(fh, elements):
    tokens = fh.read().decode("ascii", errors="replace").split()
    pos = 0
    data = {}
    for name, count, props in elements:
        cols = {p: [] for p, *_ in props}
        for _ in range(count):
            for p, kind, _, _ in props:
                if kind == "list":
                    n = int(tokens[pos])
                    cols[p].append([int(t) for t in tokens[pos + 1: pos + 1 + n]])
                    pos += 1 + n
                else:
                    cols[p].append(float(tokens[pos]))
                    pos += 1
        data[name] = cols
    return data


def read_ply(path) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Return ``(vertices, faces, normals_or_None)``; polygons are fan-triangulated."""
    with open(path, "rb") as fh:
        fmt, elements = _parse_ply_header(fh)
        if fmt == "ascii":
            data = _read_ply_ascii(fh, elements)
        elif fmt in ("binary_little_endian", "binary_big_endian"):
            data = _read_ply_binary(fh, elements, "<" if fmt == "binary_little_endian" else ">")
        else:
            raise SurfaceError(f"unsupported PLY format {fmt!r}")
    vert = data.get("vertex")
    if vert is None:
        raise SurfaceError("PLY file has no vertex element")
    xyz = np.column_stack([np.asarray(vert[c], dtype=float) for c in ("x", "y", "z")])
    normals = None
    if all(c in vert for c in ("nx", "ny", "nz")):
        normals = np.column_stack([np.asarray(vert[c], dtype=float) for c in ("nx", "ny", "nz")])
    faces = []
    face = data.get("face")
    if face is not None:
        key = "vertex_indices" if "vertex_indices" in face else "vertex_index"
        for poly in face[key]:
            faces.extend(_fan([int(i) for i in poly]))
    return xyz, np.asarray(faces, dtype=np.int64).reshape(-1, 3), normals


def read_xyz(path) -> tuple[np.ndarray, np.ndarray | None]:
    arr = np.loadtxt(path, ndmin=2)
    if arr.shape[1] < 3:
        raise SurfaceError("XYZ file needs at least three columns")
    return arr[:, :3], (arr[:, 3:6] if arr.shape[1] >= 6 else None)


def load_mesh(path) -> TriangleMesh:
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".obj":
        v, f = read_obj(path)
    elif ext == ".ply":
        v, f, _ = read_ply(path)
    else:
        raise SurfaceError(f"unsupported mesh format {ext!r}")
    if len(f) == 0:
        raise SurfaceError("empty surface")
    return clean_mesh(v, f)


def load_point_cloud(path) -> tuple[np.ndarray, np.ndarray | None]:
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".ply":
        v, _, n = read_ply(path)
        return v, n
    if ext in (".xyz", ".txt", ".pts"):
        return read_xyz(path)
    raise SurfaceError(f"unsupported point-cloud format {ext!r}")


def write_ply(path, points, normals=None, faces=None) -> None:
    """Write an ASCII PLY with full round-trip float precision."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(pts)}",
             "property double x", "property double y", "property double z"]
    if normals is not None:
        lines += ["property double nx", "property double ny", "property double nz"]
    if faces is not None:
        lines += [f"element face {len(faces)}", "property list uchar int vertex_indices"]
    lines.append("end_header")
    cols = pts if normals is None else np.hstack([pts, np.asarray(normals, dtype=float)])
    body = [" ".join(repr(float(x)) for x in row) for row in cols]
    if faces is not None:
        body += ["3 " + " ".join(str(int(i)) for i in tri) for tri in faces]
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines + body) + "\n")
    os.replace(tmp, path)


def write_obj(path, mesh: TriangleMesh) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for v in mesh.vertices:
            fh.write("v " + " ".join(repr(float(x)) for x in v) + "\n")
        for f in mesh.faces:
            fh.write("f " + " ".join(str(int(i) + 1) for i in f) + "\n")
