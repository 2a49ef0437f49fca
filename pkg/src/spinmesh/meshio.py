"""Mesh files (OBJ, OFF, PLY ascii/binary) and curvature-map sidecars.

Only closed triangle meshes are of interest, so polygons with more than
three corners are rejected rather than triangulated.  Floats are written with
17 significant digits, which makes write -> read lossless for float64.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .flows import CurvatureMap

SIDECAR_VERSION = 1

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


class MeshFormatError(ValueError):
    pass


class SidecarError(ValueError):
    pass


@dataclass
class MeshData:
    positions: np.ndarray
    faces: np.ndarray
    face_properties: dict = field(default_factory=dict)


def _triangles(faces) -> np.ndarray:
    return np.asarray(faces, dtype=np.int64).reshape(-1, 3)


def _check(md: MeshData, path) -> MeshData:
    nV = len(md.positions)
    if md.faces.size and (md.faces.min() < 0 or md.faces.max() >= nV):
        raise MeshFormatError(f"{path}: face index out of range (0..{nV - 1})")
    if not np.all(np.isfinite(md.positions)):
        raise MeshFormatError(f"{path}: non-finite vertex coordinates")
    for k, v in md.face_properties.items():
        if len(v) != len(md.faces):
            raise MeshFormatError(f"{path}: face property {k!r} has {len(v)} entries for {len(md.faces)} faces")
    return md


# ---------------------------------------------------------------- OBJ


def read_obj(path) -> MeshData:
    V, F = [], []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for ln, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    V.append([float(t) for t in parts[1:4]])
                elif parts[0] == "f":
                    idx = [int(t.split("/")[0]) for t in parts[1:]]
                    if len(idx) != 3:
                        raise MeshFormatError(f"{path}:{ln}: non-triangular face ({len(idx)} corners)")
                    # OBJ indices are 1-based; negative ones count back from the last vertex
                    F.append([i - 1 if i > 0 else len(V) + i for i in idx])
            except (ValueError, IndexError) as exc:
                if isinstance(exc, MeshFormatError):
                    raise
                raise MeshFormatError(f"{path}:{ln}: cannot parse {line.strip()!r}") from exc
    return _check(MeshData(np.asarray(V, dtype=float).reshape(-1, 3), _triangles(F)), path)


def write_obj(path, positions, faces):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in np.asarray(positions, dtype=float):
            fh.write("v %.17g %.17g %.17g\n" % tuple(p))
        for f in np.asarray(faces, dtype=np.int64) + 1:
            fh.write("f %d %d %d\n" % tuple(f))


# ---------------------------------------------------------------- OFF


def read_off(path) -> MeshData:
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        lines = [ln.split("#", 1)[0].split() for ln in fh]
    lines = [t for t in lines if t]
    if not lines or not lines[0][0].endswith("OFF"):
        raise MeshFormatError(f"{path}: missing OFF header")
    head = lines[0][1:] or lines[1]
    body = lines[1:] if lines[0][1:] else lines[2:]
    try:
        nV, nF = int(head[0]), int(head[1])
        if len(body) < nV + nF:
            raise MeshFormatError(f"{path}: expected {nV} vertices and {nF} faces, found {len(body)} records")
        V = np.array([t[:3] for t in body[:nV]], dtype=float).reshape(nV, 3)
        F = []
        for t in body[nV:nV + nF]:
            # trailing values after the indices are per-face colours; ignored
            if int(t[0]) != 3:
                raise MeshFormatError(f"{path}: non-triangular face ({t[0]} corners)")
            F.append([int(v) for v in t[1:4]])
    except (ValueError, IndexError) as exc:
        if isinstance(exc, MeshFormatError):
            raise
        raise MeshFormatError(f"{path}: truncated or malformed OFF body") from exc
    return _check(MeshData(V, _triangles(F)), path)


def write_off(path, positions, faces):
    P = np.asarray(positions, dtype=float)
    F = np.asarray(faces, dtype=np.int64)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"OFF\n{len(P)} {len(F)} 0\n")
        for p in P:
            fh.write("%.17g %.17g %.17g\n" % tuple(p))
        for f in F:
            fh.write("3 %d %d %d\n" % tuple(f))


# ---------------------------------------------------------------- PLY


def _ply_header(fh, path):
    if fh.readline().strip() != b"ply":
        raise MeshFormatError(f"{path}: missing 'ply' magic")
    fmt = None
    elements = []  # [name, count, [(name, dtype) | (name, ("list", count_t, item_t))]]
    while True:
        raw = fh.readline()
        if not raw:
            raise MeshFormatError(f"{path}: unterminated PLY header")
        parts = raw.decode("ascii", errors="replace").split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "end_header":
            break
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append([parts[1], int(parts[2]), []])
        elif parts[0] == "property":
            if not elements:
                raise MeshFormatError(f"{path}: property before element")
            try:
                if parts[1] == "list":
                    elements[-1][2].append((parts[4], ("list", _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]])))
                else:
                    elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
            except (KeyError, IndexError) as exc:
                raise MeshFormatError(f"{path}: bad property line {raw!r}") from exc
    if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
        raise MeshFormatError(f"{path}: unsupported PLY format {fmt!r}")
    return fmt, elements


def _ply_binary_element(data, offset, count, props, endian, path):
    fields = []
    for name, t in props:
        if isinstance(t, tuple):
            # only fixed-length triangle lists can be read as a record array
            fields.append((name + "__n", endian + t[1]))
            fields.append((name, endian + t[2], (3,)))
        else:
            fields.append((name, endian + t))
    dt = np.dtype(fields)
    need = dt.itemsize * count
    if len(data) - offset < need:
        raise MeshFormatError(f"{path}: truncated PLY body")
    arr = np.frombuffer(data, dtype=dt, count=count, offset=offset)
    for name, t in props:
        if isinstance(t, tuple) and count and np.any(arr[name + "__n"] != 3):
            raise MeshFormatError(f"{path}: non-triangular face in PLY list property {name!r}")
    return arr, offset + need


def _require_xyz(props, path):
    names = {p for p, _ in props}
    if not {"x", "y", "z"} <= names:
        raise MeshFormatError(f"{path}: vertex element lacks x/y/z properties")


def read_ply(path) -> MeshData:
    with open(path, "rb") as fh:
        fmt, elements = _ply_header(fh, path)
        body = fh.read()
    verts = faces = None
    fprops = {}
    if fmt == "ascii":
        lines = body.decode("ascii", errors="replace").splitlines()
        li = 0
        for name, count, props in elements:
            rows = []
            for _ in range(count):
                while li < len(lines) and not lines[li].strip():
                    li += 1
                if li >= len(lines):
                    raise MeshFormatError(f"{path}: truncated PLY body in element {name!r}")
                toks = lines[li].split()
                li += 1
                rec, pos = {}, 0
                try:
                    for pname, t in props:
                        if isinstance(t, tuple):
                            n = int(toks[pos])
                            rec[pname] = [int(v) for v in toks[pos + 1:pos + 1 + n]]
                            if len(rec[pname]) != n:
                                raise IndexError
                            pos += 1 + n
                        else:
                            rec[pname] = float(toks[pos])
                            pos += 1
                except (ValueError, IndexError) as exc:
                    raise MeshFormatError(f"{path}: malformed {name!r} record {lines[li - 1]!r}") from exc
                rows.append(rec)
            if name == "vertex":
                _require_xyz(props, path)
                verts = np.array([[r["x"], r["y"], r["z"]] for r in rows], dtype=float).reshape(-1, 3)
            elif name == "face":
                key = next((p for p, t in props if isinstance(t, tuple)), None)
                if key is None:
                    raise MeshFormatError(f"{path}: face element has no index list")
                if any(len(r[key]) != 3 for r in rows):
                    raise MeshFormatError(f"{path}: non-triangular face")
                faces = np.array([r[key] for r in rows], dtype=np.int64).reshape(-1, 3)
                for p, t in props:
                    if not isinstance(t, tuple):
                        fprops[p] = np.array([r[p] for r in rows], dtype=float)
    else:
        endian = "<" if fmt == "binary_little_endian" else ">"
        off = 0
        for name, count, props in elements:
            arr, off = _ply_binary_element(body, off, count, props, endian, path)
            if name == "vertex":
                _require_xyz(props, path)
                verts = np.stack([arr["x"], arr["y"], arr["z"]], axis=1).astype(float)
            elif name == "face":
                key = next((p for p, t in props if isinstance(t, tuple)), None)
                if key is None:
                    raise MeshFormatError(f"{path}: face element has no index list")
                faces = arr[key].astype(np.int64)
                for p, t in props:
                    if not isinstance(t, tuple):
                        fprops[p] = arr[p].astype(float)
    if verts is None or faces is None:
        raise MeshFormatError(f"{path}: PLY lacks vertex or face element")
    return _check(MeshData(verts, faces, fprops), path)


def write_ply(path, positions, faces, face_properties=None, *, binary: bool = False):
    P = np.asarray(positions, dtype=float)
    F = np.asarray(faces, dtype=np.int64)
    props = {k: np.asarray(v, dtype=float) for k, v in (face_properties or {}).items()}
    for k, v in props.items():
        if v.shape != (len(F),):
            raise ValueError(f"face property {k!r} must have one value per face")
    fmt = "binary_little_endian" if binary else "ascii"
    head = ["ply", f"format {fmt} 1.0", f"element vertex {len(P)}",
            "property double x", "property double y", "property double z",
            f"element face {len(F)}", "property list uchar int vertex_indices"]
    head += [f"property double {k}" for k in props]
    head.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(head) + "\n").encode("ascii"))
        if binary:
            fh.write(P.astype("<f8").tobytes())
            dt = np.dtype([("n", "u1"), ("v", "<i4", (3,))] + [(k, "<f8") for k in props])
            rec = np.zeros(len(F), dtype=dt)
            rec["n"] = 3
            rec["v"] = F
            for k, v in props.items():
                rec[k] = v
            fh.write(rec.tobytes())
        else:
            lines = ["%.17g %.17g %.17g" % tuple(p) for p in P]
            cols = list(props.values())
            for i, f in enumerate(F):
                extra = "".join(" %.17g" % c[i] for c in cols)
                lines.append("3 %d %d %d%s" % (f[0], f[1], f[2], extra))
            fh.write(("\n".join(lines) + "\n").encode("ascii"))


# ---------------------------------------------------------------- dispatch


def mesh_format(path) -> str:
    ext = Path(path).suffix.lower()
    if ext not in (".obj", ".off", ".ply"):
        raise MeshFormatError(f"{path}: unknown mesh extension {ext!r} (expected .obj, .off or .ply)")
    return ext[1:]


def read_mesh(path) -> MeshData:
    fmt = mesh_format(path)
    try:
        return {"obj": read_obj, "off": read_off, "ply": read_ply}[fmt](path)
    except FileNotFoundError as exc:
        raise MeshFormatError(f"{path}: no such file") from exc


def write_mesh(path, positions, faces, face_properties=None, *, binary: bool = False):
    """Write by extension; face properties are only kept by PLY."""
    fmt = mesh_format(path)
    if fmt == "ply":
        write_ply(path, positions, faces, face_properties, binary=binary)
    elif fmt == "obj":
        write_obj(path, positions, faces)
    else:
        write_off(path, positions, faces)


# ---------------------------------------------------------------- sidecar


def sidecar_dict(cmap: CurvatureMap, source_id: str = "") -> dict:
    return {
        "format_version": SIDECAR_VERSION,
        "face_count": int(cmap.face_count),
        "total_area": float(cmap.total_area),
        "source_id": source_id or cmap.provenance,
        # float() keeps full precision: json writes the shortest round-tripping repr
        "h_star": [float(v) for v in cmap.h_star],
        "A_star": [float(v) for v in cmap.A_star],
    }


def write_sidecar(path, cmap: CurvatureMap, source_id: str = ""):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(sidecar_dict(cmap, source_id), fh, indent=1)
        fh.write("\n")


def sidecar_from_dict(doc) -> CurvatureMap:
    if not isinstance(doc, dict):
        raise SidecarError("sidecar must be a JSON object")
    missing = [k for k in ("format_version", "face_count", "h_star", "A_star", "total_area", "source_id") if k not in doc]
    if missing:
        raise SidecarError(f"sidecar missing fields: {', '.join(missing)}")
    if doc["format_version"] != SIDECAR_VERSION:
        raise SidecarError(f"unsupported sidecar format_version {doc['format_version']!r}")
    n = doc["face_count"]
    if not isinstance(n, int) or n < 1:
        raise SidecarError("face_count must be a positive integer")
    try:
        h = np.asarray(doc["h_star"], dtype=float)
        A = np.asarray(doc["A_star"], dtype=float)
        tot = float(doc["total_area"])
    except (TypeError, ValueError) as exc:
        raise SidecarError(f"non-numeric sidecar arrays: {exc}") from exc
    if h.shape != (n,) or A.shape != (n,):
        raise SidecarError(f"sidecar arrays must have face_count={n} entries (got {h.size}, {A.size})")
    if not (np.all(np.isfinite(h)) and np.all(np.isfinite(A))):
        raise SidecarError("sidecar arrays contain non-finite values")
    if np.any(A <= 0) or not tot > 0:
        raise SidecarError("sidecar areas must be positive")
    return CurvatureMap(h, A, tot, n, str(doc["source_id"]))


def read_sidecar(path) -> CurvatureMap:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise SidecarError(f"{path}: no such file") from exc
    except json.JSONDecodeError as exc:
        raise SidecarError(f"{path}: malformed JSON ({exc.msg} at line {exc.lineno})") from exc
    return sidecar_from_dict(doc)
