"""Reading and writing PCD (v0.7) and PLY point cloud files.

Both formats are handled in their ASCII and binary little-endian flavours.
Positions and normals are written as float32, colors as 8-bit RGB (packed
into a float ``rgb`` field for PCD, ``red/green/blue`` uchar for PLY).
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .cloud import PointCloud


class CloudFormatError(ValueError):
    def __init__(self, msg: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            msg = f"{msg} (at byte offset {offset})"
        super().__init__(msg)


_NORMAL_NAMES = {
    "pcd": ("normal_x", "normal_y", "normal_z"),
    "ply": ("nx", "ny", "nz"),
}


def _format_of(path, fmt):
    if fmt is not None:
        fmt = fmt.lower()
    else:
        fmt = Path(path).suffix.lower().lstrip(".")
    if fmt not in ("pcd", "ply"):
        raise ValueError(f"unknown cloud format {fmt!r}; expected 'pcd' or 'ply'")
    return fmt


def read_cloud(path, fmt: str | None = None) -> PointCloud:
    fmt = _format_of(path, fmt)
    data = Path(path).read_bytes()
    return _read_pcd(data) if fmt == "pcd" else _read_ply(data)


def write_cloud(cloud: PointCloud, path, fmt: str | None = None, binary: bool = True) -> None:
    fmt = _format_of(path, fmt)
    payload = _write_pcd(cloud, binary) if fmt == "pcd" else _write_ply(cloud, binary)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


# -- helpers ---------------------------------------------------------------


def _read_header(data: bytes, terminator) -> tuple[list[tuple[int, str]], int]:
    """Split header lines until ``terminator(line)`` is true.

    Returns ``[(offset, line)]`` including the terminating line and the
    offset of the first payload byte.
    """
    lines = []
    pos = 0
    while True:
        end = data.find(b"\n", pos)
        if end < 0:
            raise CloudFormatError("unterminated header", pos)
        raw = data[pos:end].rstrip(b"\r")
        try:
            line = raw.decode("ascii").strip()
        except UnicodeDecodeError:
            raise CloudFormatError("non-ASCII bytes in header", pos) from None
        lines.append((pos, line))
        pos = end + 1
        if terminator(line):
            return lines, pos


def _parse_ascii(data: bytes, start: int, n: int, ncols: int) -> np.ndarray:
    rows = data[start:].decode("ascii", errors="replace").split("\n")
    rows = [r for r in (r.strip() for r in rows) if r and not r.startswith("#")]
    if len(rows) < n:
        raise CloudFormatError(f"expected {n} data rows, found {len(rows)}", len(data))
    out = np.empty((n, ncols), dtype=np.float64)
    offset = start
    for i in range(n):
        parts = rows[i].split()
        if len(parts) < ncols:
            raise CloudFormatError(f"row {i} has {len(parts)} values, expected {ncols}", offset)
        try:
            out[i] = [float(v) for v in parts[:ncols]]
        except ValueError:
            raise CloudFormatError(f"row {i} contains a non-numeric value", offset) from None
        offset += len(rows[i]) + 1
    return out


def _split_columns(table: dict, fmt: str) -> PointCloud:
    pts = np.stack([table["x"], table["y"], table["z"]], axis=1).astype(np.float64)
    colors = None
    if "rgb" in table:
        packed = np.asarray(table["rgb"])
        if packed.dtype.kind == "f":
            packed = packed.astype(np.float32).view(np.uint32)
        packed = packed.astype(np.uint32)
        colors = np.stack([(packed >> 16) & 255, (packed >> 8) & 255, packed & 255], axis=1)
    elif "red" in table:
        colors = np.stack([table["red"], table["green"], table["blue"]], axis=1)
    normals = None
    nx, ny, nz = _NORMAL_NAMES[fmt]
    if nx in table:
        normals = np.stack([table[nx], table[ny], table[nz]], axis=1).astype(np.float64)
    return PointCloud(pts, None if colors is None else colors.astype(np.uint8), normals)


# -- PCD -------------------------------------------------------------------

_PCD_KNOWN = {"x", "y", "z", "rgb", "rgba", "normal_x", "normal_y", "normal_z", "curvature"}
_PCD_TYPES = {("F", 4): "<f4", ("F", 8): "<f8", ("U", 1): "u1", ("U", 2): "<u2", ("U", 4): "<u4",
              ("U", 8): "<u8", ("I", 1): "i1", ("I", 2): "<i2", ("I", 4): "<i4", ("I", 8): "<i8"}


def _read_pcd(data: bytes) -> PointCloud:
    lines, start = _read_header(data, lambda ln: ln.upper().startswith("DATA"))
    hdr = {}
    for off, line in lines:
        if not line or line.startswith("#"):
            continue
        key, _, rest = line.partition(" ")
        hdr[key.upper()] = (off, rest.split())
    for key in ("FIELDS", "SIZE", "TYPE", "POINTS", "DATA"):
        if key not in hdr:
            raise CloudFormatError(f"PCD header is missing {key}", lines[-1][0])
    off_f, fields = hdr["FIELDS"]
    unknown = [f for f in fields if f not in _PCD_KNOWN and f != "_"]
    if unknown:
        raise CloudFormatError(f"unsupported PCD fields {unknown}", off_f)
    if not {"x", "y", "z"} <= set(fields):
        raise CloudFormatError("PCD must contain x, y and z fields", off_f)
    sizes, types = hdr["SIZE"][1], hdr["TYPE"][1]
    counts = hdr.get("COUNT", (0, ["1"] * len(fields)))[1]
    if not (len(sizes) == len(types) == len(counts) == len(fields)):
        raise CloudFormatError("FIELDS/SIZE/TYPE/COUNT lengths differ", hdr["SIZE"][0])
    try:
        n = int(hdr["POINTS"][1][0])
    except (ValueError, IndexError):
        raise CloudFormatError("invalid POINTS value", hdr["POINTS"][0]) from None
    encoding = hdr["DATA"][1][0].lower() if hdr["DATA"][1] else ""
    # padding columns are all named "_"
    fields = [f"_pad{i}" if f == "_" else f for i, f in enumerate(fields)]
    dtype_fields = []
    for name, size, typ, cnt in zip(fields, sizes, types, counts):
        key = (typ.upper(), int(size))
        if key not in _PCD_TYPES:
            raise CloudFormatError(f"unsupported type {typ}{size} for field {name}", hdr["TYPE"][0])
        if int(cnt) != 1 and not name.startswith("_pad"):
            raise CloudFormatError(f"field {name} has COUNT {cnt}; only 1 supported", off_f)
        dtype_fields.append((name, _PCD_TYPES[key], (int(cnt),)) if int(cnt) != 1 else (name, _PCD_TYPES[key]))
    dt = np.dtype(dtype_fields)
    if encoding == "ascii":
        arr = _parse_ascii(data, start, n, len(fields))
        table = {name: arr[:, i].astype(dt[name]) for i, name in enumerate(fields)}
    elif encoding == "binary":
        need = n * dt.itemsize
        if len(data) - start < need:
            raise CloudFormatError(f"truncated binary payload: need {need} bytes, have {len(data) - start}", start)
        rec = np.frombuffer(data, dtype=dt, count=n, offset=start)
        table = {name: rec[name] for name in fields}
    else:
        raise CloudFormatError(f"unsupported PCD DATA encoding {encoding!r}", hdr["DATA"][0])
    if "rgba" in table and "rgb" not in table:
        table["rgb"] = table.pop("rgba")
    return _split_columns(table, "pcd")


def _write_pcd(cloud: PointCloud, binary: bool) -> bytes:
    n = len(cloud)
    cols = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if cloud.colors is not None:
        cols.append(("rgb", "<f4"))
    if cloud.normals is not None:
        cols += [("normal_x", "<f4"), ("normal_y", "<f4"), ("normal_z", "<f4")]
    rec = np.zeros(n, dtype=np.dtype(cols))
    for i, name in enumerate("xyz"):
        rec[name] = cloud.points[:, i]
    if cloud.colors is not None:
        c = cloud.colors.astype(np.uint32)
        rec["rgb"] = ((c[:, 0] << 16) | (c[:, 1] << 8) | c[:, 2]).view(np.float32)
    if cloud.normals is not None:
        for i, name in enumerate(_NORMAL_NAMES["pcd"]):
            rec[name] = cloud.normals[:, i]
    names = [c[0] for c in cols]
    header = (
        "# .PCD v0.7 - Point Cloud Data file format\n"
        "VERSION 0.7\n"
        f"FIELDS {' '.join(names)}\n"
        f"SIZE {' '.join('4' for _ in names)}\n"
        f"TYPE {' '.join('F' for _ in names)}\n"
        f"COUNT {' '.join('1' for _ in names)}\n"
        f"WIDTH {n}\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS {n}\n"
        f"DATA {'binary' if binary else 'ascii'}\n"
    ).encode("ascii")
    if binary:
        return header + rec.tobytes()
    lines = []
    for r in rec:
        lines.append(" ".join(f"{float(r[name]):.9g}" for name in names))
    return header + ("\n".join(lines) + ("\n" if lines else "")).encode("ascii")


# -- PLY -------------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "<i2", "int16": "<i2", "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
}


def _read_ply(data: bytes) -> PointCloud:
    if not data.startswith(b"ply"):
        raise CloudFormatError("missing 'ply' magic", 0)
    lines, start = _read_header(data, lambda ln: ln == "end_header")
    encoding = None
    elements = []  # (name, count, [(prop, dtype)], offset)
    for off, line in lines[1:-1]:
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] not in ("ascii", "binary_little_endian"):
                raise CloudFormatError(f"unsupported PLY format {' '.join(parts[1:])!r}", off)
            encoding = parts[1]
        elif parts[0] == "element":
            try:
                elements.append((parts[1], int(parts[2]), [], off))
            except (IndexError, ValueError):
                raise CloudFormatError("malformed element line", off) from None
        elif parts[0] == "property":
            if not elements:
                raise CloudFormatError("property before any element", off)
            if parts[1] == "list":
                elements[-1][2].append((parts[-1], None))
                continue
            if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                raise CloudFormatError(f"unsupported property declaration {line!r}", off)
            elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
        else:
            raise CloudFormatError(f"unknown header keyword {parts[0]!r}", off)
    if encoding is None:
        raise CloudFormatError("PLY header has no format line", 0)
    if not elements or elements[0][0] != "vertex":
        raise CloudFormatError("first PLY element must be 'vertex'", lines[-1][0])
    _, n, props, off = elements[0]
    if any(dt is None for _, dt in props):
        raise CloudFormatError("list properties on vertex are not supported", off)
    names = [p for p, _ in props]
    if not {"x", "y", "z"} <= set(names):
        raise CloudFormatError("vertex element needs x, y and z", off)
    dt = np.dtype(props)
    if encoding == "ascii":
        arr = _parse_ascii(data, start, n, len(props))
        table = {name: arr[:, i].astype(dt[name]) for i, name in enumerate(names)}
    else:
        need = n * dt.itemsize
        if len(data) - start < need:
            raise CloudFormatError(f"truncated binary payload: need {need} bytes, have {len(data) - start}", start)
        rec = np.frombuffer(data, dtype=dt, count=n, offset=start)
        table = {name: rec[name] for name in names}
    return _split_columns(table, "ply")


def _write_ply(cloud: PointCloud, binary: bool) -> bytes:
    n = len(cloud)
    cols = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if cloud.normals is not None:
        cols += [("nx", "<f4"), ("ny", "<f4"), ("nz", "<f4")]
    if cloud.colors is not None:
        cols += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    rec = np.zeros(n, dtype=np.dtype(cols))
    for i, name in enumerate("xyz"):
        rec[name] = cloud.points[:, i]
    if cloud.normals is not None:
        for i, name in enumerate(_NORMAL_NAMES["ply"]):
            rec[name] = cloud.normals[:, i]
    if cloud.colors is not None:
        for i, name in enumerate(("red", "green", "blue")):
            rec[name] = cloud.colors[:, i]
    type_names = {"<f4": "float", "u1": "uchar"}
    header = "ply\n"
    header += f"format {'binary_little_endian' if binary else 'ascii'} 1.0\n"
    header += f"element vertex {n}\n"
    for name, t in cols:
        header += f"property {type_names[t]} {name}\n"
    header += "end_header\n"
    if binary:
        return header.encode("ascii") + rec.tobytes()
    lines = []
    for r in rec:
        lines.append(" ".join(f"{int(r[name])}" if t == "u1" else f"{float(r[name]):.9g}" for name, t in cols))
    return (header + "\n".join(lines) + ("\n" if lines else "")).encode("ascii")
