"""PLY and XYZ readers/writers.

Only the ``vertex`` element of a PLY file is read. Coordinates must be
``float`` or ``double``; ``red``/``green``/``blue`` (uchar) become colors and
an integer ``label`` property becomes per-point labels. Any other scalar
vertex property is skipped by its size. Big-endian files are rejected.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .geometry import PointCloud, PointLabel

LABEL_COLORS = {
    PointLabel.MATCHED: (160, 160, 160),
    PointLabel.UNMATCHED_CURRENT: (255, 0, 0),
    PointLabel.UNMATCHED_REFERENCE: (0, 255, 0),
}
WHITE = (255, 255, 255)

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}  # fmt: skip


class PlyError(ValueError):
    pass


class XyzError(ValueError):
    pass


@dataclass(frozen=True)
class PlyElement:
    name: str
    count: int
    properties: list  # (name, numpy type code)


@dataclass(frozen=True)
class PlyHeaderInfo:
    format: str
    vertex_count: int
    has_color: bool
    has_label: bool
    properties: list  # vertex property names in declared order
    elements: list
    body_offset: int


def label_colors(labels) -> np.ndarray:
    labels = np.asarray(labels)
    table = np.zeros((max(LABEL_COLORS) + 1, 3), dtype=np.uint8)
    for label, rgb in LABEL_COLORS.items():
        table[label] = rgb
    if len(labels) and (labels.min() < 0 or labels.max() >= len(table)):
        raise ValueError("unknown point label")
    return table[labels.astype(np.int64)]


def parse_ply_header(data: bytes) -> PlyHeaderInfo:
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise PlyError("ply parse error: line 1: missing 'ply' magic or 'end_header'")
    nl = data.find(b"\n", end)
    body_offset = len(data) if nl < 0 else nl + 1
    try:
        lines = data[:end].decode("ascii").splitlines()
    except UnicodeDecodeError as exc:
        raise PlyError(f"ply parse error: offset {exc.start}: non-ascii header") from exc

    fmt = None
    elements: list[PlyElement] = []
    for lineno, raw in enumerate(lines, start=1):
        tok = raw.split()
        if not tok or tok[0] in ("ply", "comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) != 3 or tok[2] != "1.0":
                raise PlyError(f"ply parse error: line {lineno}: bad format line {raw!r}")
            if tok[1] == "binary_big_endian":
                raise PlyError("ply parse error: binary_big_endian is not supported")
            if tok[1] not in ("ascii", "binary_little_endian"):
                raise PlyError(f"ply parse error: line {lineno}: unknown format {tok[1]!r}")
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise PlyError(f"ply parse error: line {lineno}: bad element line {raw!r}")
            elements.append(PlyElement(tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise PlyError(f"ply parse error: line {lineno}: property before element")
            if len(tok) >= 2 and tok[1] == "list":
                elements[-1].properties.append((tok[-1], "list"))
                continue
            if len(tok) != 3 or tok[1] not in _PLY_TYPES:
                raise PlyError(f"ply parse error: line {lineno}: bad property line {raw!r}")
            elements[-1].properties.append((tok[2], _PLY_TYPES[tok[1]]))
        else:
            raise PlyError(f"ply parse error: line {lineno}: unexpected keyword {tok[0]!r}")

    if fmt is None:
        raise PlyError("ply parse error: missing format line")
    vertex = next((e for e in elements if e.name == "vertex"), None)
    if vertex is None:
        raise PlyError("ply parse error: no vertex element")
    types = dict(vertex.properties)
    for axis in "xyz":
        if axis not in types:
            raise PlyError(f"ply parse error: vertex element lacks property {axis!r}")
        if types[axis] not in ("f4", "f8"):
            raise PlyError(f"unsupported coordinate type for {axis!r}")
    return PlyHeaderInfo(
        format=fmt,
        vertex_count=vertex.count,
        has_color=all(c in types for c in ("red", "green", "blue")),
        has_label="label" in types,
        properties=[name for name, _ in vertex.properties],
        elements=elements,
        body_offset=body_offset,
    )


def _scalar_dtype(element: PlyElement, order: str) -> np.dtype:
    for name, code in element.properties:
        if code == "list":
            raise PlyError(
                f"ply parse error: list property {name!r} in element {element.name!r} "
                "is not supported"
            )
    return np.dtype([(name, order + code) for name, code in element.properties])


def read_ply(data) -> PointCloud:
    """Parse PLY bytes (or a path) into a cloud."""
    if isinstance(data, (str, Path)):
        data = Path(data).read_bytes()
    data = bytes(data)
    header = parse_ply_header(data)
    body = data[header.body_offset:]

    if header.format == "binary_little_endian":
        offset = 0
        vertex = None
        for element in header.elements:
            dtype = _scalar_dtype(element, "<")
            need = dtype.itemsize * element.count
            if len(body) - offset < need:
                raise PlyError(
                    f"unexpected end of data in element {element.name!r} "
                    f"(offset {header.body_offset + offset})"
                )
            if element.name == "vertex":
                vertex = np.frombuffer(body, dtype=dtype, count=element.count, offset=offset)
                break
            offset += need
    else:
        tokens = body.split()
        pos = 0
        vertex = None
        for element in header.elements:
            dtype = _scalar_dtype(element, "<")
            width = len(element.properties)
            need = width * element.count
            if len(tokens) - pos < need:
                raise PlyError(f"unexpected end of data in element {element.name!r}")
            if element.name == "vertex":
                rows = tokens[pos:pos + need]
                vertex = np.empty(element.count, dtype=dtype)
                try:
                    table = np.array(rows, dtype=object).reshape(element.count, width)
                    for j, (name, code) in enumerate(element.properties):
                        col = table[:, j].astype(str)
                        if code.startswith("f"):
                            vertex[name] = col.astype(np.float64)
                        else:
                            vertex[name] = col.astype(np.int64)
                except ValueError as exc:
                    raise PlyError(f"ply parse error: bad vertex value ({exc})") from exc
                break
            pos += need

    pts = np.column_stack([vertex[a].astype(np.float64) for a in "xyz"])
    if not np.all(np.isfinite(pts)):
        bad = int(np.nonzero(~np.all(np.isfinite(pts), axis=1))[0][0])
        raise PlyError(f"non-finite coordinate at vertex {bad}")
    colors = None
    if header.has_color:
        colors = np.column_stack([vertex[c] for c in ("red", "green", "blue")])
        if np.any(colors < 0) or np.any(colors > 255):
            raise PlyError("color value out of range")
    labels = vertex["label"].astype(np.int64) if header.has_label else None
    return PointCloud(pts, colors, labels)


def write_ply(
    cloud: PointCloud, labels=None, format: str = "binary", with_labels: Optional[bool] = None
) -> bytes:
    """Serialise a cloud as PLY.

    With ``labels`` the vertex colors come from :data:`LABEL_COLORS` and the
    label itself is stored as a ``uchar label`` property. Otherwise the
    cloud's own colors are written, or white. Binary output stores doubles
    and is bit-exact; ascii output keeps 9 significant digits.
    """
    if format in ("binary", "binary_little_endian"):
        fmt = "binary_little_endian"
    elif format == "ascii":
        fmt = "ascii"
    else:
        raise ValueError(f"unknown ply format {format!r}")

    n = len(cloud)
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (n,):
            raise ValueError("labels must match the cloud length")
        colors = label_colors(labels)
    elif cloud.colors is not None:
        colors = cloud.colors
    else:
        colors = np.tile(np.array(WHITE, dtype=np.uint8), (n, 1))
    if with_labels is None:
        with_labels = labels is not None
    if with_labels and labels is None:
        labels = cloud.labels
        if labels is None:
            raise ValueError("no labels to write")

    fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8"),
              ("red", "u1"), ("green", "u1"), ("blue", "u1")]  # fmt: skip
    if with_labels:
        fields.append(("label", "u1"))
    header = [
        "ply",
        f"format {fmt} 1.0",
        f"element vertex {n}",
        "property double x",
        "property double y",
        "property double z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
    ]
    if with_labels:
        header.append("property uchar label")
    header.append("end_header")
    head = ("\n".join(header) + "\n").encode("ascii")

    if fmt == "binary_little_endian":
        rec = np.empty(n, dtype=np.dtype(fields))
        for i, a in enumerate("xyz"):
            rec[a] = cloud.points[:, i]
        for i, c in enumerate(("red", "green", "blue")):
            rec[c] = colors[:, i]
        if with_labels:
            rec["label"] = labels
        return head + rec.tobytes()

    buf = io.StringIO()
    cols = [cloud.points.astype(object), colors.astype(np.int64).astype(object)]
    fmt_row = "%.9g %.9g %.9g %d %d %d"
    if with_labels:
        cols.append(np.asarray(labels, dtype=np.int64).reshape(-1, 1).astype(object))
        fmt_row += " %d"
    if n:
        np.savetxt(buf, np.hstack(cols), fmt=fmt_row)
    return head + buf.getvalue().encode("ascii")


def read_xyz(text) -> PointCloud:
    """Parse whitespace-separated ``x y z`` lines; ``#`` lines and blanks skipped."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        tok = s.split()
        if len(tok) < 3:
            raise XyzError(f"xyz parse error: line {lineno}: expected 3 coordinates")
        try:
            xyz = [float(v) for v in tok[:3]]
        except ValueError:
            raise XyzError(f"xyz parse error: line {lineno}: non-numeric token") from None
        if not all(math.isfinite(v) for v in xyz):
            raise XyzError(f"xyz parse error: line {lineno}: non-finite coordinate")
        rows.append(xyz)
    return PointCloud(np.array(rows, dtype=np.float64).reshape(-1, 3))


def write_xyz(cloud: PointCloud) -> str:
    # repr() is the shortest string that round-trips a double exactly
    return "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in cloud.points.tolist())


def load_cloud(path) -> PointCloud:
    path = Path(path)
    data = path.read_bytes()
    if path.suffix.lower() == ".ply":
        return read_ply(data)
    if path.suffix.lower() in (".xyz", ".txt"):
        return read_xyz(data)
    raise ValueError(f"unrecognised point cloud extension {path.suffix!r}")


def save_cloud(path, cloud: PointCloud, labels=None, format: str = "binary") -> None:
    path = Path(path)
    if path.suffix.lower() == ".ply":
        path.write_bytes(write_ply(cloud, labels, format))
    elif path.suffix.lower() in (".xyz", ".txt"):
        path.write_text(write_xyz(cloud))
    else:
        raise ValueError(f"unrecognised point cloud extension {path.suffix!r}")
