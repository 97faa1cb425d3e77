"""Point cloud ingest, normalization, quantization and PLY I/O."""

from __future__ import annotations

import csv
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from olc.errors import (
    DegenerateExtentError,
    EmptyCloudError,
    MalformedHeaderError,
    MissingCoordinateError,
)

# PLY scalar type name -> little-endian numpy dtype
_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "<i2", "int16": "<i2",
    "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4",
    "uint": "<u4", "uint32": "<u4",
    "float": "<f4", "float32": "<f4",
    "double": "<f8", "float64": "<f8",
}


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        if len(pts) == 0:
            raise EmptyCloudError("point cloud has no points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        if pts is self.points:
            pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def bbox_min(self) -> np.ndarray:
        return self.points.min(axis=0)

    @property
    def bbox_max(self) -> np.ndarray:
        return self.points.max(axis=0)

    @property
    def extent(self) -> float:
        """Largest single-axis extent (edge of the cubic bounding box)."""
        return float(np.max(self.bbox_max - self.bbox_min))

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class NormalizationRecord:
    """``p_norm = (p - offset) * scale - 1``."""

    scale: float
    offset: np.ndarray


@dataclass(frozen=True)
class QuantizedCloud:
    coords: np.ndarray
    depth: int
    qs: float
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    source_count: int = 0

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.int64).reshape(-1, 3)
        if len(c) and (c.min() < 0 or c.max() >= (1 << self.depth)):
            raise ValueError(f"coords outside [0, 2^{self.depth} - 1]")
        c = np.unique(c, axis=0)
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        if self.source_count < len(c):
            object.__setattr__(self, "source_count", len(c))

    def __len__(self) -> int:
        return len(self.coords)

    def coord_set(self) -> set[tuple[int, int, int]]:
        return set(map(tuple, self.coords.tolist()))


# ---------------------------------------------------------------------------
# PLY


def _parse_header(fh) -> tuple[str, list[tuple[str, int, list]]]:
    magic = fh.readline()
    if magic.strip() != b"ply":
        raise MalformedHeaderError("missing 'ply' magic line")
    fmt = None
    elements: list[tuple[str, int, list]] = []
    while True:
        line = fh.readline()
        if not line:
            raise MalformedHeaderError("header not terminated by end_header")
        tokens = line.decode("ascii", errors="replace").split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        key = tokens[0]
        if key == "end_header":
            break
        if key == "format":
            if len(tokens) < 2:
                raise MalformedHeaderError("format line incomplete")
            fmt = tokens[1]
        elif key == "element":
            if len(tokens) != 3:
                raise MalformedHeaderError(f"bad element line: {line!r}")
            try:
                count = int(tokens[2])
            except ValueError:
                raise MalformedHeaderError(f"bad element count: {tokens[2]!r}") from None
            elements.append((tokens[1], count, []))
        elif key == "property":
            if not elements:
                raise MalformedHeaderError("property before any element")
            if len(tokens) >= 5 and tokens[1] == "list":
                elements[-1][2].append((tokens[4], ("list", tokens[2], tokens[3])))
            elif len(tokens) == 3:
                if tokens[1] not in _PLY_TYPES:
                    raise MalformedHeaderError(f"unknown property type {tokens[1]!r}")
                elements[-1][2].append((tokens[2], tokens[1]))
            else:
                raise MalformedHeaderError(f"bad property line: {line!r}")
        else:
            raise MalformedHeaderError(f"unexpected header keyword {key!r}")
    if fmt not in ("ascii", "binary_little_endian"):
        raise MalformedHeaderError(f"unsupported PLY format {fmt!r}")
    return fmt, elements


def load_ply(path: str | Path) -> PointCloud:
    """Read vertex positions from a text or binary little-endian PLY file."""
    with open(path, "rb") as fh:
        fmt, elements = _parse_header(fh)
        vertex = next((e for e in elements if e[0] == "vertex"), None)
        if vertex is None:
            raise MalformedHeaderError("no vertex element")
        names = [p[0] for p in vertex[2]]
        missing = [a for a in "xyz" if a not in names]
        if missing:
            raise MissingCoordinateError(f"missing coordinate property: {', '.join(missing)}")
        if any(isinstance(p[1], tuple) for p in vertex[2]):
            raise MalformedHeaderError("list properties on vertex element are not supported")
        if vertex[1] == 0:
            raise EmptyCloudError("PLY declares zero vertices")
        others = [e[0] for e in elements if e[0] != "vertex"]
        if others:
            warnings.warn(f"ignoring PLY elements: {', '.join(others)}", stacklevel=2)

        before = elements[: elements.index(vertex)]
        if fmt == "ascii":
            skip = sum(e[1] for e in before)
            for _ in range(skip):
                fh.readline()
            rows = []
            for i in range(vertex[1]):
                line = fh.readline()
                if not line:
                    raise MalformedHeaderError(f"file ends after {i} of {vertex[1]} vertices")
                rows.append(line.split()[: len(names)])
            try:
                data = np.array(rows, dtype=np.float64)
            except ValueError as exc:
                raise MalformedHeaderError(f"bad vertex row: {exc}") from None
            cols = [names.index(a) for a in "xyz"]
            pts = data[:, cols]
        else:
            for name, count, props in before:
                if any(isinstance(p[1], tuple) for p in props):
                    raise MalformedHeaderError(f"cannot skip binary list element {name!r} before vertex")
                dt = np.dtype([(p[0], _PLY_TYPES[p[1]]) for p in props])
                fh.seek(dt.itemsize * count, 1)
            dt = np.dtype([(p[0], _PLY_TYPES[p[1]]) for p in vertex[2]])
            buf = fh.read(dt.itemsize * vertex[1])
            if len(buf) < dt.itemsize * vertex[1]:
                raise MalformedHeaderError("binary vertex data truncated")
            rec = np.frombuffer(buf, dtype=dt)
            pts = np.stack([rec[a].astype(np.float64) for a in "xyz"], axis=1)
    return PointCloud(pts)


def write_ply(path: str | Path, pc: PointCloud | np.ndarray, binary: bool = False) -> None:
    """Write positions as ``double`` x/y/z; text mode uses round-trip float repr."""
    pts = pc.points if isinstance(pc, PointCloud) else np.asarray(pc, dtype=np.float64)
    header = (
        "ply\n"
        f"format {'binary_little_endian' if binary else 'ascii'} 1.0\n"
        f"element vertex {len(pts)}\n"
        "property double x\nproperty double y\nproperty double z\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            fh.write(np.ascontiguousarray(pts, dtype="<f8").tobytes())
        else:
            fh.write("".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in pts.tolist()).encode("ascii"))


# ---------------------------------------------------------------------------
# normalization / quantization


def normalize(pc: PointCloud) -> tuple[PointCloud, NormalizationRecord]:
    """Uniformly scale into [-1, 1]^3; the longest axis spans exactly [-1, 1]."""
    extent = pc.extent
    if not extent > 0:
        raise DegenerateExtentError("all points identical; cannot normalize")
    rec = NormalizationRecord(scale=2.0 / extent, offset=pc.bbox_min.copy())
    return PointCloud((pc.points - rec.offset) * rec.scale - 1.0), rec


def denormalize(pc: PointCloud, rec: NormalizationRecord) -> PointCloud:
    return PointCloud((pc.points + 1.0) / rec.scale + rec.offset)


def compute_qs(bbox_extent: float, depth: int) -> float:
    """Quantization step that maps ``bbox_extent`` onto ``2**depth - 1`` cells."""
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    if not bbox_extent > 0:
        raise DegenerateExtentError(f"bbox extent must be positive, got {bbox_extent}")
    return bbox_extent / ((1 << depth) - 1)


def round_half_away(v: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def quantize(pc: PointCloud, qs: float, origin: Sequence[float] | None = None) -> QuantizedCloud:
    if not qs > 0:
        raise ValueError(f"qs must be positive, got {qs}")
    origin = pc.bbox_min if origin is None else np.asarray(origin, dtype=np.float64)
    grid = round_half_away((pc.points - origin) / qs)
    if grid.min() < 0:
        raise ValueError("origin lies above some points; coordinates would be negative")
    coords = grid.astype(np.int64)
    depth = max(1, int(coords.max()).bit_length())
    return QuantizedCloud(coords, depth=depth, qs=float(qs), origin=origin, source_count=len(pc))


def dequantize(qc: QuantizedCloud) -> PointCloud:
    return PointCloud(qc.origin + qc.coords.astype(np.float64) * qc.qs)


def remaining_ratio(pc: PointCloud, qs_values: Iterable[float]) -> list[float]:
    """Fraction of points that survive quantization at each step size."""
    return [len(quantize(pc, qs)) / len(pc) for qs in qs_values]


def write_ratio_csv(path_or_file, qs_values: Sequence[float], ratios: Sequence[float]) -> None:
    own = isinstance(path_or_file, (str, Path))
    fh = open(path_or_file, "w", newline="") if own else (path_or_file or sys.stdout)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["qs", "remaining_ratio"])
        for qs, r in zip(qs_values, ratios):
            w.writerow([repr(float(qs)), repr(float(r))])
    finally:
        if own:
            fh.close()
