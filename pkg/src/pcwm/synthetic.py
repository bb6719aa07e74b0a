"""Procedural ModelNet-style mesh corpus for tests and offline demos.

Builds a ``class/{train,test}/*.off`` tree of simple parametric shapes
(boxes, cylinders, tori, furniture-like assemblies, ...) with per-instance
random proportions.  Most files are written as OFF with quad and n-gon faces
so the fan triangulation path is exercised; every fifth file is ASCII PLY.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from . import rng as _rng

CLASSES = ("airplane", "bottle", "box", "chair", "cone", "cylinder",
           "ellipsoid", "lamp", "table", "torus")


class PolyMesh:
    """Vertex list plus polygon faces of arbitrary arity."""

    def __init__(self, vertices=None, faces=None):
        self.vertices = [] if vertices is None else list(vertices)
        self.faces = [] if faces is None else list(faces)

    def extend(self, other: "PolyMesh") -> "PolyMesh":
        off = len(self.vertices)
        self.vertices.extend(other.vertices)
        self.faces.extend([[i + off for i in f] for f in other.faces])
        return self

    def transformed(self, matrix=None, shift=(0.0, 0.0, 0.0)) -> "PolyMesh":
        v = np.asarray(self.vertices, dtype=np.float64)
        if matrix is not None:
            v = v @ np.asarray(matrix, dtype=np.float64).T
        v = v + np.asarray(shift, dtype=np.float64)
        return PolyMesh([tuple(p) for p in v], [list(f) for f in self.faces])


def box(size, center=(0.0, 0.0, 0.0)) -> PolyMesh:
    sx, sy, sz = (0.5 * s for s in size)
    v = [(x, y, z) for x in (-sx, sx) for y in (-sy, sy) for z in (-sz, sz)]
    quads = [[0, 1, 3, 2], [4, 6, 7, 5], [0, 4, 5, 1],
             [2, 3, 7, 6], [0, 2, 6, 4], [1, 5, 7, 3]]
    return PolyMesh(v, quads).transformed(shift=center)


def lathe(profile, segments: int = 24) -> PolyMesh:
    """Revolve ``[(radius, z), ...]`` about the z axis; zero radii become poles."""
    verts, rings = [], []
    for r, z in profile:
        if r <= 0.0:
            rings.append([len(verts)])
            verts.append((0.0, 0.0, z))
            continue
        ring = []
        for j in range(segments):
            t = 2.0 * math.pi * j / segments
            ring.append(len(verts))
            verts.append((r * math.cos(t), r * math.sin(t), z))
        rings.append(ring)
    faces = []
    for a, b in zip(rings[:-1], rings[1:]):
        if len(a) == 1 and len(b) == 1:
            continue
        for j in range(segments):
            k = (j + 1) % segments
            if len(a) == 1:
                faces.append([a[0], b[k], b[j]])
            elif len(b) == 1:
                faces.append([a[j], a[k], b[0]])
            else:
                faces.append([a[j], a[k], b[k], b[j]])
    # Cap open ends with a single n-gon.
    if len(rings[0]) > 1:
        faces.append(list(reversed(rings[0])))
    if len(rings[-1]) > 1:
        faces.append(list(rings[-1]))
    return PolyMesh(verts, faces)


def cylinder(radius, height, segments=24) -> PolyMesh:
    return lathe([(radius, -0.5 * height), (radius, 0.5 * height)], segments)


def ellipsoid(radii, rings=12, segments=24) -> PolyMesh:
    prof = [(math.sin(math.pi * i / rings), -math.cos(math.pi * i / rings))
            for i in range(rings + 1)]
    prof[0] = (0.0, -1.0)
    prof[-1] = (0.0, 1.0)
    return lathe(prof, segments).transformed(np.diag(radii))


def torus(major, minor, rings=16, segments=24) -> PolyMesh:
    verts = []
    for i in range(segments):
        phi = 2.0 * math.pi * i / segments
        for j in range(rings):
            th = 2.0 * math.pi * j / rings
            rr = major + minor * math.cos(th)
            verts.append((rr * math.cos(phi), rr * math.sin(phi), minor * math.sin(th)))
    faces = []
    for i in range(segments):
        for j in range(rings):
            a = i * rings + j
            b = ((i + 1) % segments) * rings + j
            c = ((i + 1) % segments) * rings + (j + 1) % rings
            d = i * rings + (j + 1) % rings
            faces.append([a, b, c, d])
    return PolyMesh(verts, faces)


def _rot_y(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_x(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def make_shape(kind: str, gen: np.random.Generator) -> PolyMesh:
    u = gen.uniform
    if kind == "box":
        return box(u(0.3, 1.5, 3))
    if kind == "cylinder":
        return cylinder(u(0.15, 0.6), u(0.6, 2.0), int(gen.integers(12, 33)))
    if kind == "cone":
        r = u(0.3, 0.8)
        return lathe([(r, 0.0), (0.0, u(0.8, 2.0))], int(gen.integers(12, 33)))
    if kind == "ellipsoid":
        return ellipsoid(u(0.3, 1.2, 3))
    if kind == "torus":
        major = u(0.5, 1.0)
        return torus(major, u(0.1, 0.45) * major)
    if kind == "table":
        w, d, h, t = u(1.0, 2.0), u(0.6, 1.2), u(0.6, 1.0), u(0.04, 0.1)
        m = box((w, d, t), (0, 0, h))
        leg = u(0.04, 0.1)
        for sx in (-1, 1):
            for sy in (-1, 1):
                m.extend(box((leg, leg, h), (sx * (0.5 * w - leg), sy * (0.5 * d - leg), 0.5 * h)))
        return m
    if kind == "chair":
        w, h, t = u(0.4, 0.6), u(0.4, 0.5), 0.05
        back = u(0.4, 0.8)
        m = box((w, w, t), (0, 0, h))
        m.extend(box((w, t, back), (0, 0.5 * w - 0.5 * t, h + 0.5 * back)))
        for sx in (-1, 1):
            for sy in (-1, 1):
                m.extend(box((0.05, 0.05, h), (sx * (0.5 * w - 0.03), sy * (0.5 * w - 0.03), 0.5 * h)))
        return m
    if kind == "lamp":
        base = cylinder(u(0.2, 0.35), 0.05).transformed(shift=(0, 0, 0.025))
        pole_h = u(0.8, 1.4)
        m = base.extend(cylinder(0.025, pole_h, 12).transformed(shift=(0, 0, 0.5 * pole_h)))
        r0, r1 = u(0.1, 0.2), u(0.25, 0.45)
        m.extend(lathe([(r1, 0.0), (r0, u(0.25, 0.45))]).transformed(shift=(0, 0, pole_h)))
        return m
    if kind == "airplane":
        length = u(1.6, 2.4)
        fus = ellipsoid((0.12, 0.12, 0.5 * length)).transformed(_rot_y(0.5 * math.pi))
        span = u(1.4, 2.2)
        fus.extend(box((u(0.25, 0.45), span, 0.03), (u(-0.1, 0.2), 0, 0)))
        fus.extend(box((0.18, 0.5 * span * u(0.3, 0.45), 0.02), (-0.45 * length, 0, 0.02)))
        fus.extend(box((0.16, 0.02, u(0.2, 0.35)), (-0.45 * length, 0, 0.15)))
        return fus
    if kind == "bottle":
        r, h = u(0.2, 0.4), u(0.8, 1.4)
        neck = u(0.06, 0.12)
        prof = [(r, 0.0), (r, 0.6 * h), (neck, 0.8 * h), (neck, h)]
        return lathe(prof)
    raise ValueError(f"unknown shape kind: {kind!r}")


def random_pose(mesh: PolyMesh, gen: np.random.Generator) -> PolyMesh:
    """Small random tilt and offset so instances are not axis-perfect."""
    tilt = _rot_x(gen.uniform(-0.3, 0.3)) @ _rot_y(gen.uniform(-0.3, 0.3))
    return mesh.transformed(tilt, gen.uniform(-0.5, 0.5, 3))


def off_text(mesh: PolyMesh) -> str:
    lines = ["OFF", f"{len(mesh.vertices)} {len(mesh.faces)} 0"]
    lines += [f"{x:.6f} {y:.6f} {z:.6f}" for x, y, z in mesh.vertices]
    lines += [" ".join(map(str, [len(f), *f])) for f in mesh.faces]
    return "\n".join(lines) + "\n"


def ply_text(mesh: PolyMesh) -> str:
    lines = ["ply", "format ascii 1.0", "comment synthetic",
             f"element vertex {len(mesh.vertices)}",
             "property float x", "property float y", "property float z",
             f"element face {len(mesh.faces)}",
             "property list uchar int vertex_indices", "end_header"]
    lines += [f"{x:.6f} {y:.6f} {z:.6f}" for x, y, z in mesh.vertices]
    lines += [" ".join(map(str, [len(f), *f])) for f in mesh.faces]
    return "\n".join(lines) + "\n"


def write_dataset(root, per_class_train: int = 8, per_class_test: int = 2,
                  seed: int = 0, classes=CLASSES) -> Path:
    """Write a synthetic ``class/{train,test}/name_XXXX.{off,ply}`` tree."""
    root = Path(root)
    for kind in classes:
        counter = 0
        for split, count in (("train", per_class_train), ("test", per_class_test)):
            folder = root / kind / split
            folder.mkdir(parents=True, exist_ok=True)
            for _ in range(count):
                counter += 1
                gen = _rng.stream(seed, "synthetic", kind, counter)
                mesh = random_pose(make_shape(kind, gen), gen)
                if counter % 5 == 0:
                    (folder / f"{kind}_{counter:04d}.ply").write_text(ply_text(mesh))
                else:
                    (folder / f"{kind}_{counter:04d}.off").write_text(off_text(mesh))
    return root
