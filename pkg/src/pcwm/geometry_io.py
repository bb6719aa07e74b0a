"""Mesh parsing, surface sampling, normalization and cloud serialization.

Point clouds are plain ``(N, 3)`` float64 numpy arrays throughout the package.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng as _rng
from .errors import (
    CountMismatch,
    DegenerateCloud,
    EmptyCloud,
    IndexOutOfRange,
    MalformedHeader,
    MalformedRecord,
    NonFiniteCoordinate,
    UnsupportedEncoding,
    ZeroAreaMesh,
)

PCB_MAGIC = b"PCB1"
XYZ_DIGITS = 9


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray  # (F, 3) int64

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise NonFiniteCoordinate("mesh has non-finite vertex coordinates")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise IndexOutOfRange("face index outside vertex range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


@dataclass(frozen=True)
class NormalizationRecord:
    centroid: np.ndarray
    scale: float

    def invert(self, cloud: np.ndarray) -> np.ndarray:
        return np.asarray(cloud) * self.scale + self.centroid


def as_cloud(points) -> np.ndarray:
    """Validate and coerce ``points`` to an ``(N, 3)`` float64 array."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise MalformedRecord(f"expected an (N, 3) array, got shape {arr.shape}")
    if len(arr) == 0:
        raise EmptyCloud("point cloud is empty")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteCoordinate("point cloud has non-finite coordinates")
    return arr


# -- parsing -----------------------------------------------------------------

def _decode_lines(raw: bytes) -> list[str]:
    if isinstance(raw, str):
        text = raw
    else:
        try:
            text = bytes(raw).decode("ascii")
        except UnicodeDecodeError as exc:
            raise MalformedHeader(f"file is not ASCII text: {exc}") from None
    lines = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            lines.append(line)
    return lines


def _ints(tokens: list[str], what: str) -> list[int]:
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise MalformedRecord(f"non-integer token in {what}: {tokens!r}") from None


def _floats(tokens: list[str], what: str) -> list[float]:
    try:
        vals = [float(t) for t in tokens]
    except ValueError:
        raise MalformedRecord(f"non-numeric token in {what}: {tokens!r}") from None
    if not all(math.isfinite(v) for v in vals):
        raise NonFiniteCoordinate(f"non-finite coordinate in {what}")
    return vals


def _fan(poly: list[int], n_vertices: int) -> list[tuple[int, int, int]]:
    if len(poly) < 3:
        raise MalformedRecord(f"face with fewer than 3 vertices: {poly}")
    for i in poly:
        if i < 0 or i >= n_vertices:
            raise IndexOutOfRange(f"face index {i} outside [0, {n_vertices})")
    return [(poly[0], poly[j], poly[j + 1]) for j in range(1, len(poly) - 1)]


def _build_mesh(verts: list[list[float]], tris: list[tuple[int, int, int]]) -> TriangleMesh:
    v = np.array(verts, dtype=np.float64).reshape(-1, 3)
    f = np.array(tris, dtype=np.int64).reshape(-1, 3)
    return TriangleMesh(v, f)


def parse_off(raw: bytes) -> TriangleMesh:
    """Parse an ASCII OFF mesh; polygons are fan-triangulated."""
    lines = _decode_lines(raw)
    if not lines:
        raise MalformedHeader("empty OFF file")
    first = lines[0]
    if first.startswith("OFF"):
        # Some ModelNet files glue the counts onto the keyword ("OFF490 518 0").
        rest = first[3:].strip()
        body = ([rest] if rest else []) + lines[1:]
    else:
        body = lines
    if not body:
        raise MalformedHeader("OFF file has no count line")
    counts = body[0].split()
    if len(counts) < 2:
        raise MalformedHeader(f"bad OFF count line: {body[0]!r}")
    try:
        n_v, n_f = int(counts[0]), int(counts[1])
    except ValueError:
        raise MalformedHeader(f"bad OFF count line: {body[0]!r}") from None
    if n_v < 0 or n_f < 0:
        raise MalformedHeader("negative element count")
    data = body[1:]
    if len(data) != n_v + n_f:
        raise CountMismatch(
            f"header declares {n_v} vertices + {n_f} faces, file has {len(data)} data lines")
    verts = []
    for line in data[:n_v]:
        toks = line.split()
        if len(toks) < 3:
            raise MalformedRecord(f"vertex line needs 3 coordinates: {line!r}")
        verts.append(_floats(toks[:3], "vertex"))
    tris = []
    for line in data[n_v:]:
        toks = _ints(line.split(), "face") if line else []
        if not toks or len(toks) < toks[0] + 1:
            raise MalformedRecord(f"truncated face line: {line!r}")
        tris.extend(_fan(toks[1:toks[0] + 1], n_v))
    return _build_mesh(verts, tris)


def parse_ply(raw: bytes) -> TriangleMesh:
    """Parse an ASCII PLY mesh with ``vertex`` (x, y, z) and ``face`` elements."""
    if isinstance(raw, (bytes, bytearray, memoryview)):
        raw = bytes(raw)
        end = raw.find(b"end_header")
        if end < 0:
            raise MalformedHeader("PLY header has no end_header")
        try:
            header_text = raw[:end].decode("ascii")
        except UnicodeDecodeError:
            raise MalformedHeader("PLY header is not ASCII") from None
    else:
        end = raw.find("end_header")
        if end < 0:
            raise MalformedHeader("PLY header has no end_header")
        header_text = raw[:end]
    header = [ln.strip() for ln in header_text.splitlines() if ln.strip()]
    if not header or header[0] != "ply":
        raise MalformedHeader("missing 'ply' magic")
    elements: list[list] = []  # [name, count, [(prop_name, is_list)]]
    fmt = None
    for line in header[1:]:
        toks = line.split()
        if toks[0] == "format":
            if len(toks) < 2:
                raise MalformedHeader("bad format line")
            fmt = toks[1]
        elif toks[0] == "element":
            if len(toks) != 3:
                raise MalformedHeader(f"bad element line: {line!r}")
            try:
                count = int(toks[2])
            except ValueError:
                raise MalformedHeader(f"bad element count: {line!r}") from None
            if count < 0:
                raise MalformedHeader("negative element count")
            elements.append([toks[1], count, []])
        elif toks[0] == "property":
            if not elements:
                raise MalformedHeader("property before any element")
            is_list = len(toks) >= 2 and toks[1] == "list"
            if (is_list and len(toks) != 5) or (not is_list and len(toks) != 3):
                raise MalformedHeader(f"bad property line: {line!r}")
            elements[-1][2].append((toks[-1], is_list))
        elif toks[0] in ("comment", "obj_info"):
            continue
        else:
            raise MalformedHeader(f"unknown header keyword: {toks[0]!r}")
    if fmt is None:
        raise MalformedHeader("PLY header lacks a format line")
    if fmt != "ascii":
        raise UnsupportedEncoding(f"only ASCII PLY is supported, got {fmt!r}")
    names = [e[0] for e in elements]
    if "vertex" not in names:
        raise MalformedHeader("PLY has no vertex element")

    body = raw[end:]
    body_text = body.decode("ascii", errors="strict") if isinstance(body, bytes) else body
    lines = _decode_lines(body_text)[1:]  # drop the end_header line itself

    verts: list[list[float]] = []
    tris: list[tuple[int, int, int]] = []
    n_vertices = dict((e[0], e[1]) for e in elements)["vertex"]
    pos = 0
    for name, count, props in elements:
        if pos + count > len(lines):
            raise CountMismatch(f"element {name!r} declares {count} records, file is short")
        rows = lines[pos:pos + count]
        pos += count
        if name == "vertex":
            pnames = [p[0] for p in props]
            try:
                ix = [pnames.index(c) for c in ("x", "y", "z")]
            except ValueError:
                raise MalformedHeader("vertex element lacks x/y/z properties") from None
            if any(p[1] for p in props):
                raise MalformedHeader("list properties on vertex are not supported")
            for row in rows:
                toks = row.split()
                if len(toks) != len(props):
                    raise MalformedRecord(f"vertex record has {len(toks)} fields: {row!r}")
                vals = _floats([toks[i] for i in ix], "vertex")
                verts.append(vals)
        elif name == "face":
            if not props or not props[0][1]:
                raise MalformedHeader("face element must start with a list property")
            for row in rows:
                toks = _ints(row.split()[: None], "face") if all(
                    _is_int(t) for t in row.split()[:1]) else None
                if toks is None:
                    raise MalformedRecord(f"bad face record: {row!r}")
                k = toks[0]
                if len(toks) < k + 1:
                    raise MalformedRecord(f"truncated face record: {row!r}")
                tris.extend(_fan(toks[1:k + 1], n_vertices))
    if pos != len(lines):
        raise CountMismatch(f"{len(lines) - pos} trailing records after declared elements")
    return _build_mesh(verts, tris)


def _is_int(tok: str) -> bool:
    try:
        int(tok)
    except ValueError:
        return False
    return True


def load_mesh(path: str | os.PathLike) -> TriangleMesh:
    path = Path(path)
    raw = path.read_bytes()
    suffix = path.suffix.lower()
    if suffix == ".off":
        return parse_off(raw)
    if suffix == ".ply":
        return parse_ply(raw)
    raise UnsupportedEncoding(f"unknown mesh extension: {suffix!r}")


# -- sampling and normalization ----------------------------------------------

def sample_surface(mesh: TriangleMesh, count: int, seed: int, *labels: object) -> np.ndarray:
    """Draw ``count`` points uniformly by area from the mesh surface.

    The triangle is chosen with probability proportional to its area and the
    point is placed with the square-root barycentric rule.  ``labels`` select
    an independent random stream (e.g. the source file path).
    """
    if count < 1:
        raise ValueError("count must be positive")
    areas = mesh.triangle_areas()
    total = float(areas.sum()) if areas.size else 0.0
    if not total > 0.0:
        raise ZeroAreaMesh("mesh has no triangle with positive area")
    gen = _rng.stream(seed, "sample_surface", *labels)
    cdf = np.cumsum(areas)
    cdf /= cdf[-1]
    pick = np.searchsorted(cdf, gen.random(count), side="right")
    pick = np.minimum(pick, len(areas) - 1)
    r1 = np.sqrt(gen.random(count))[:, None]
    r2 = gen.random(count)[:, None]
    tri = mesh.faces[pick]
    a, b, c = (mesh.vertices[tri[:, i]] for i in range(3))
    return (1.0 - r1) * a + r1 * (1.0 - r2) * b + r1 * r2 * c


def lex_order(points: np.ndarray) -> np.ndarray:
    """Indices sorting points by (x, y, z), ties broken by original index."""
    pts = np.asarray(points)
    return np.lexsort((np.arange(len(pts)), pts[:, 2], pts[:, 1], pts[:, 0]))


def centroid(points: np.ndarray) -> np.ndarray:
    """Mean of the points, summed in lexicographic order.

    Summing in a canonical order makes the result independent of how the
    points are permuted, down to the last bit.
    """
    pts = np.asarray(points, dtype=np.float64)
    return pts[lex_order(pts)].mean(axis=0)


def normalize(cloud) -> tuple[np.ndarray, NormalizationRecord]:
    """Center at zero mean and scale to unit maximum Euclidean norm."""
    pts = as_cloud(cloud)
    c = centroid(pts)
    centered = pts - c
    scale = float(np.sqrt((centered * centered).sum(axis=1)).max())
    if not scale > 0.0:
        raise DegenerateCloud("all points coincide; cannot normalize")
    return centered / scale, NormalizationRecord(centroid=c, scale=scale)


# -- cloud files -------------------------------------------------------------

def _format_for(path: Path, fmt: str | None) -> str:
    if fmt:
        fmt = fmt.lower()
    else:
        fmt = path.suffix.lower().lstrip(".")
    if fmt not in ("pcb", "xyz"):
        raise UnsupportedEncoding(f"unknown cloud format: {fmt!r}")
    return fmt


def encode_pcb(cloud: np.ndarray) -> bytes:
    pts = np.ascontiguousarray(cloud, dtype="<f8")
    return PCB_MAGIC + struct.pack("<I", len(pts)) + pts.tobytes()


def decode_pcb(raw: bytes) -> np.ndarray:
    if len(raw) < 8 or raw[:4] != PCB_MAGIC:
        raise MalformedRecord("missing PCB1 magic")
    (n,) = struct.unpack("<I", raw[4:8])
    expected = 8 + 24 * n
    if len(raw) != expected:
        raise MalformedRecord(f"PCB payload is {len(raw)} bytes, expected {expected}")
    pts = np.frombuffer(raw, dtype="<f8", offset=8).reshape(n, 3).astype(np.float64)
    if not np.all(np.isfinite(pts)):
        raise NonFiniteCoordinate("cloud file has non-finite coordinates")
    return pts


def encode_xyz(cloud: np.ndarray) -> str:
    return "".join(
        " ".join(f"{v:.{XYZ_DIGITS}g}" for v in p) + "\n" for p in np.asarray(cloud))


def decode_xyz(text: str) -> np.ndarray:
    rows = []
    for line in _decode_lines(text):
        toks = line.split()
        if len(toks) != 3:
            raise MalformedRecord(f"XYZ line must have 3 fields: {line!r}")
        rows.append(_floats(toks, "XYZ record"))
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def write_cloud(cloud, path: str | os.PathLike, fmt: str | None = None) -> None:
    path = Path(path)
    pts = as_cloud(cloud)
    if _format_for(path, fmt) == "pcb":
        path.write_bytes(encode_pcb(pts))
    else:
        path.write_text(encode_xyz(pts))


def read_cloud(path: str | os.PathLike, fmt: str | None = None) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if _format_for(path, fmt) == "pcb":
        return decode_pcb(raw)
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError:
        raise MalformedRecord("XYZ file is not ASCII") from None
    return decode_xyz(text)
