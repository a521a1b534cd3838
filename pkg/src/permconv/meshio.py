"""Read and write OBJ, OFF, and ASCII PLY triangle meshes.

Quads are split by the fixed (0,1,2)/(0,2,3) rule at load time so
downstream code only ever sees triangles. Coordinates are emitted with
%.17g, enough digits that a save/load round trip is bit-exact.
"""
from __future__ import annotations

import os

import numpy as np

from .mesh import MeshError, MeshTopology

_EXT_FORMATS = {".obj": "obj", ".off": "off", ".ply": "ply"}


def load_mesh(path, fmt: str | None = None) -> MeshTopology:
    """Parse a mesh file into a :class:`MeshTopology`.

    ``fmt`` is one of {"obj", "off", "ply"}; inferred from the extension
    when omitted.
    """
    path = str(path)
    if fmt is None:
        fmt = _EXT_FORMATS.get(os.path.splitext(path)[1].lower())
        if fmt is None:
            raise MeshError(f"cannot infer mesh format from {path!r}")
    fmt = fmt.lower()
    with open(path) as fh:
        text = fh.read()
    if fmt == "obj":
        positions, polys = _parse_obj(text, path)
    elif fmt == "off":
        positions, polys = _parse_off(text, path)
    elif fmt == "ply":
        positions, polys = _parse_ply(text, path)
    else:
        raise MeshError(f"unsupported mesh format {fmt!r}")
    faces = _triangulate(polys, path)
    return MeshTopology(len(positions), faces, vertex_positions=positions)


def save_mesh(topology: MeshTopology, path, fmt: str | None = None) -> None:
    path = str(path)
    if fmt is None:
        fmt = _EXT_FORMATS.get(os.path.splitext(path)[1].lower())
        if fmt is None:
            raise MeshError(f"cannot infer mesh format from {path!r}")
    if topology.vertex_positions is None:
        raise MeshError("cannot save a mesh without vertex positions")
    fmt = fmt.lower()
    if fmt == "obj":
        text = _emit_obj(topology)
    elif fmt == "off":
        text = _emit_off(topology)
    elif fmt == "ply":
        text = emit_ply(topology.vertex_positions, topology.faces)
    else:
        raise MeshError(f"unsupported mesh format {fmt!r}")
    with open(path, "w") as fh:
        fh.write(text)


def _triangulate(polys, path):
    faces = []
    for poly in polys:
        if len(poly) == 3:
            faces.append(poly)
        elif len(poly) == 4:
            faces.append((poly[0], poly[1], poly[2]))
            faces.append((poly[0], poly[2], poly[3]))
        else:
            raise MeshError(f"{path}: only triangle and quad faces supported, "
                            f"got a {len(poly)}-gon")
    return np.array(faces, dtype=np.int64) if faces else np.zeros((0, 3), dtype=np.int64)


def _parse_obj(text, path):
    positions, polys = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise MeshError(f"{path}:{lineno}: short vertex record")
            positions.append([float(p) for p in parts[1:4]])
        elif tag == "f":
            corners = []
            for token in parts[1:]:
                raw = token.split("/")[0]
                idx = int(raw)
                # OBJ indices are 1-based; negative values count from the end
                corners.append(idx - 1 if idx > 0 else len(positions) + idx)
            polys.append(tuple(corners))
        # vt/vn/usemtl/etc. carry no topology and are skipped
    _check_indices(polys, len(positions), path)
    return np.array(positions, dtype=np.float64).reshape(-1, 3), polys


def _parse_off(text, path):
    tokens = []
    for line in text.splitlines():
        line = line.split("#")[0]
        tokens.extend(line.split())
    if not tokens or tokens[0] != "OFF":
        raise MeshError(f"{path}: missing OFF header")
    try:
        nv, nf = int(tokens[1]), int(tokens[2])
        pos = 4  # skip edge count
        positions = []
        for _ in range(nv):
            positions.append([float(t) for t in tokens[pos : pos + 3]])
            pos += 3
        polys = []
        for _ in range(nf):
            arity = int(tokens[pos])
            polys.append(tuple(int(t) for t in tokens[pos + 1 : pos + 1 + arity]))
            pos += 1 + arity
    except (ValueError, IndexError) as exc:
        raise MeshError(f"{path}: malformed OFF data ({exc})") from exc
    _check_indices(polys, nv, path)
    return np.array(positions, dtype=np.float64).reshape(-1, 3), polys


def _parse_ply(text, path):
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise MeshError(f"{path}: missing ply header")
    elements = []  # (name, count, [property names])
    i = 1
    while i < len(lines):
        parts = lines[i].split()
        i += 1
        if not parts:
            continue
        if parts[0] == "format":
            if parts[1] != "ascii":
                raise MeshError(f"{path}: only ascii PLY is supported")
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise MeshError(f"{path}: property before element")
            elements[-1][2].append(parts[-1])
        elif parts[0] == "end_header":
            break
    else:
        raise MeshError(f"{path}: unterminated ply header")

    positions, polys = [], []
    for name, count, props in elements:
        if name == "vertex":
            try:
                ix, iy, iz = props.index("x"), props.index("y"), props.index("z")
            except ValueError as exc:
                raise MeshError(f"{path}: vertex element lacks x/y/z") from exc
            for _ in range(count):
                vals = lines[i].split()
                i += 1
                positions.append([float(vals[ix]), float(vals[iy]), float(vals[iz])])
        elif name == "face":
            for _ in range(count):
                vals = lines[i].split()
                i += 1
                arity = int(vals[0])
                polys.append(tuple(int(v) for v in vals[1 : 1 + arity]))
        else:
            i += count  # unknown element: skip its rows
    _check_indices(polys, len(positions), path)
    return np.array(positions, dtype=np.float64).reshape(-1, 3), polys


def _check_indices(polys, nv, path):
    for poly in polys:
        for c in poly:
            if c < 0 or c >= nv:
                raise MeshError(f"{path}: face index {c} out of range (N={nv})")


def _fmt(x: float) -> str:
    return format(x, ".17g")


def _emit_obj(topology):
    out = []
    for p in topology.vertex_positions:
        out.append(f"v {_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}")
    for f in topology.faces:
        out.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    return "\n".join(out) + "\n"


def _emit_off(topology):
    out = [
        "OFF",
        f"{topology.num_vertices} {topology.num_faces} 0",
    ]
    for p in topology.vertex_positions:
        out.append(f"{_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}")
    for f in topology.faces:
        out.append(f"3 {f[0]} {f[1]} {f[2]}")
    return "\n".join(out) + "\n"


def emit_ply(positions, faces, scalars: dict[str, np.ndarray] | None = None) -> str:
    """ASCII PLY text, optionally with extra per-vertex scalar properties."""
    positions = np.asarray(positions, dtype=np.float64)
    scalars = scalars or {}
    out = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(positions)}",
        "property double x",
        "property double y",
        "property double z",
    ]
    for name in scalars:
        out.append(f"property double {name}")
    out.append(f"element face {len(faces)}")
    out.append("property list uchar int vertex_indices")
    out.append("end_header")
    cols = [positions[:, 0], positions[:, 1], positions[:, 2]]
    cols += [np.asarray(scalars[name], dtype=np.float64) for name in scalars]
    for row in zip(*cols):
        out.append(" ".join(_fmt(v) for v in row))
    for f in faces:
        out.append(f"3 {f[0]} {f[1]} {f[2]}")
    return "\n".join(out) + "\n"
