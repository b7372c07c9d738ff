"""Colored point clouds and PLY 1.0 reading/writing."""
from __future__ import annotations

import hashlib
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MalformedHeader, NonFiniteCoordinate, TruncatedBody, UnsupportedFormat

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
_COLOR_NAMES = (("red", "green", "blue"), ("r", "g", "b"))


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    @property
    def center(self) -> np.ndarray:
        return (self.min + self.max) / 2.0

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.all((points >= self.min) & (points <= self.max), axis=1)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """N points with float64 positions and uint8 RGB colors.

    Arrays are copied and made read-only on construction so instances can be
    shared freely between threads.
    """

    positions: np.ndarray
    colors: np.ndarray
    name: str = "cloud"
    _hash: list = field(default_factory=list, init=False, repr=False)

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64, copy=True)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise ValueError(f"positions must be (N, 3) with N >= 1, got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise NonFiniteCoordinate(f"{self.name}: non-finite coordinate")
        col = np.asarray(self.colors)
        if col.shape != pos.shape:
            raise ValueError(f"colors shape {col.shape} does not match positions {pos.shape}")
        if col.dtype != np.uint8:
            if np.any(col < 0) or np.any(col > 255):
                raise ValueError("color channels must lie in [0, 255]")
            col = col.astype(np.uint8)
        col = np.array(col, copy=True)
        pos.setflags(write=False)
        col.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "colors", col)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def content_hash(self) -> str:
        """SHA-256 over positions and colors (name excluded)."""
        if not self._hash:
            h = hashlib.sha256()
            h.update(np.ascontiguousarray(self.positions).tobytes())
            h.update(np.ascontiguousarray(self.colors).tobytes())
            self._hash.append(h.hexdigest())
        return self._hash[0]

    def with_positions(self, positions: np.ndarray, name: str | None = None) -> "PointCloud":
        return PointCloud(positions, self.colors, self.name if name is None else name)


def bounding_box(pc: PointCloud) -> Aabb:
    return Aabb(pc.positions.min(axis=0).copy(), pc.positions.max(axis=0).copy())


@dataclass
class _Element:
    name: str
    count: int
    props: list  # (name, dtype-code) or (name, ("list", count_code, item_code))


def _parse_header(fh) -> tuple[str, list[_Element]]:
    magic = fh.readline()
    if magic.strip() != b"ply":
        raise MalformedHeader("missing 'ply' magic line")
    fmt = None
    elements: list[_Element] = []
    while True:
        raw = fh.readline()
        if not raw:
            raise MalformedHeader("header ended without end_header")
        try:
            line = raw.decode("ascii").strip()
        except UnicodeDecodeError as exc:
            raise MalformedHeader("non-ascii bytes in header") from exc
        if not line or line.startswith(("comment", "obj_info")):
            continue
        parts = line.split()
        key = parts[0]
        if key == "end_header":
            break
        if key == "format":
            if len(parts) != 3:
                raise MalformedHeader(f"bad format line: {line!r}")
            if parts[2] != "1.0":
                raise UnsupportedFormat(f"PLY version {parts[2]}")
            fmt = parts[1]
        elif key == "element":
            if len(parts) != 3 or not re.fullmatch(r"\d+", parts[2]):
                raise MalformedHeader(f"bad element line: {line!r}")
            elements.append(_Element(parts[1], int(parts[2]), []))
        elif key == "property":
            if not elements:
                raise MalformedHeader("property before any element")
            if len(parts) >= 2 and parts[1] == "list":
                if len(parts) != 5 or parts[2] not in _PLY_TYPES or parts[3] not in _PLY_TYPES:
                    raise MalformedHeader(f"bad list property: {line!r}")
                elements[-1].props.append((parts[4], ("list", _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]])))
            else:
                if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                    raise MalformedHeader(f"bad property line: {line!r}")
                elements[-1].props.append((parts[2], _PLY_TYPES[parts[1]]))
        else:
            raise MalformedHeader(f"unknown header keyword {key!r}")
    if fmt is None:
        raise MalformedHeader("no format line")
    if fmt == "binary_big_endian":
        raise UnsupportedFormat("binary_big_endian PLY is not supported")
    if fmt not in ("ascii", "binary_little_endian"):
        raise MalformedHeader(f"unknown PLY format {fmt!r}")
    return fmt, elements


def _vertex_columns(el: _Element) -> tuple[list[str], list[str]]:
    names = {name.lower(): name for name, _ in el.props}
    types = {name: t for name, t in el.props}
    xyz = []
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise MalformedHeader(f"vertex element lacks property {axis!r}")
        if types[names[axis]] not in ("f4", "f8"):
            raise UnsupportedFormat(f"coordinate {axis!r} must be float or double")
        xyz.append(names[axis])
    for candidate in _COLOR_NAMES:
        if all(c in names for c in candidate):
            rgb = [names[c] for c in candidate]
            break
    else:
        raise UnsupportedFormat("vertex colors must be red/green/blue or r/g/b")
    for c in rgb:
        if types[c] != "u1":
            raise UnsupportedFormat(f"color property {c!r} must be uchar")
    return xyz, rgb


def load_ply(path: str | os.PathLike, name: str | None = None) -> PointCloud:
    """Read the vertex element of an ascii or binary_little_endian PLY file.

    Properties other than coordinates and colors are skipped. Elements other
    than ``vertex`` are ignored when they follow it.
    """
    path = Path(path)
    name = path.stem if name is None else name
    with open(path, "rb") as fh:
        fmt, elements = _parse_header(fh)
        body = fh.read()

    vertex_pos = next((i for i, el in enumerate(elements) if el.name == "vertex"), None)
    if vertex_pos is None:
        raise MalformedHeader("no vertex element")
    vertex = elements[vertex_pos]
    xyz, rgb = _vertex_columns(vertex)
    if vertex.count < 1:
        raise TruncatedBody("vertex element declares zero points")

    if fmt == "ascii":
        positions, colors = _read_ascii(body, elements, vertex_pos, xyz, rgb)
    else:
        positions, colors = _read_binary(body, elements, vertex_pos, xyz, rgb)
    return PointCloud(positions, colors, name)


def _read_ascii(body, elements, vertex_pos, xyz, rgb):
    lines = [ln for ln in body.decode("ascii", errors="replace").splitlines() if ln.strip()]
    start = sum(el.count for el in elements[:vertex_pos])
    vertex = elements[vertex_pos]
    if any(isinstance(t, tuple) for _, t in vertex.props):
        raise UnsupportedFormat("list properties inside the vertex element")
    rows = lines[start:start + vertex.count]
    if len(rows) < vertex.count:
        raise TruncatedBody(f"expected {vertex.count} vertex rows, found {len(rows)}")
    width = len(vertex.props)
    tokens = [r.split() for r in rows]
    if any(len(t) != width for t in tokens):
        raise TruncatedBody(f"vertex row does not have {width} values")
    try:
        table = np.array(tokens, dtype=np.float64)
    except ValueError as exc:
        raise TruncatedBody(f"unparseable vertex value: {exc}") from exc
    col = {name: i for i, (name, _) in enumerate(vertex.props)}
    positions = table[:, [col[c] for c in xyz]]
    colors = table[:, [col[c] for c in rgb]]
    if not np.all(np.isfinite(positions)):
        raise NonFiniteCoordinate("non-finite coordinate in vertex rows")
    if np.any(colors < 0) or np.any(colors > 255) or np.any(colors != np.round(colors)):
        raise UnsupportedFormat("color values must be integers in [0, 255]")
    return positions, colors.astype(np.uint8)


def _read_binary(body, elements, vertex_pos, xyz, rgb):
    offset = 0
    for el in elements[:vertex_pos]:
        if any(isinstance(t, tuple) for _, t in el.props):
            raise UnsupportedFormat(f"variable-size element {el.name!r} precedes vertex data")
        offset += el.count * np.dtype([(f"p{i}", "<" + t) for i, (_, t) in enumerate(el.props)]).itemsize
    vertex = elements[vertex_pos]
    if any(isinstance(t, tuple) for _, t in vertex.props):
        raise UnsupportedFormat("list properties inside the vertex element")
    dtype = np.dtype([(name, "<" + t) for name, t in vertex.props])
    need = offset + vertex.count * dtype.itemsize
    if len(body) < need:
        raise TruncatedBody(f"binary body has {len(body)} bytes, vertex data needs {need}")
    rec = np.frombuffer(body, dtype=dtype, count=vertex.count, offset=offset)
    positions = np.stack([rec[c].astype(np.float64) for c in xyz], axis=1)
    colors = np.stack([rec[c] for c in rgb], axis=1).astype(np.uint8)
    if not np.all(np.isfinite(positions)):
        raise NonFiniteCoordinate("non-finite coordinate in vertex data")
    return positions, colors


def write_ply(pc: PointCloud, path: str | os.PathLike, binary: bool = True,
              coord_type: str = "double") -> None:
    """Write ``pc`` as a PLY file with x,y,z and red,green,blue.

    ``coord_type`` is ``"double"`` (lossless) or ``"float"``.
    """
    if coord_type not in ("float", "double"):
        raise ValueError("coord_type must be 'float' or 'double'")
    code = _PLY_TYPES[coord_type]
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        "ply\n"
        f"format {fmt} 1.0\n"
        f"element vertex {pc.n}\n"
        f"property {coord_type} x\nproperty {coord_type} y\nproperty {coord_type} z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            dtype = np.dtype([("x", "<" + code), ("y", "<" + code), ("z", "<" + code),
                              ("red", "u1"), ("green", "u1"), ("blue", "u1")])
            rec = np.empty(pc.n, dtype=dtype)
            for i, c in enumerate("xyz"):
                rec[c] = pc.positions[:, i]
            for i, c in enumerate(("red", "green", "blue")):
                rec[c] = pc.colors[:, i]
            fh.write(rec.tobytes())
        else:
            pos = pc.positions.astype(np.float32) if coord_type == "float" else pc.positions
            lines = [
                f"{p[0]!r} {p[1]!r} {p[2]!r} {c[0]} {c[1]} {c[2]}"
                for p, c in zip(pos.tolist(), pc.colors.tolist())
            ]
            fh.write(("\n".join(lines) + "\n").encode("ascii"))
