"""Seeded point-cloud corruptions used in the robustness benchmark.

Every attack is a pure function of ``(cloud, AttackSpec)``: the spec's seed
and kind select an independent Philox stream, so results do not depend on
call order or threading.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from . import rng as _rng
from .errors import EmptyResult, InvalidAttack
from .geometry_io import as_cloud

# kind -> default parameters
DEFAULTS: dict[str, dict[str, float]] = {
    "clean": {},
    "gaussian_noise": {"sigma": 0.01},
    "smoothing": {"k": 16, "sigma": 0.05},
    "isotropic_scale": {"low": 0.8, "high": 1.2},
    "rotation_z": {},
    "rotation_arbitrary": {},
    "translation": {"max_shift": 0.05},
    "dropout": {"fraction": 0.10, "uniform_fraction": 0},
    "shuffle": {},
    "crop": {"retain": 0.70},
    "affine": {"low": 0.9, "high": 1.1},
    "quantization": {"step": 0.01},
    "jitter": {"sigma": 0.005},
    "chunk_removal": {"fraction": 0.20},
    "combined": {"sigma": 0.02, "fraction": 0.15},
}
KINDS = tuple(DEFAULTS)


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    label: str | None = None

    def __post_init__(self):
        if self.kind not in DEFAULTS:
            raise InvalidAttack(f"unknown attack kind {self.kind!r}; choose from {', '.join(KINDS)}")
        extra = set(self.params) - set(DEFAULTS[self.kind])
        if extra:
            raise InvalidAttack(f"{self.kind}: unknown parameters {sorted(extra)}")
        merged = {**DEFAULTS[self.kind], **self.params}
        for name, value in merged.items():
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise InvalidAttack(f"{self.kind}.{name} must be a finite number")
        _validate(self.kind, merged)
        object.__setattr__(self, "params", merged)
        if self.label is None:
            object.__setattr__(self, "label", self.kind)

    def with_seed(self, seed: int) -> "AttackSpec":
        return AttackSpec(self.kind, dict(self.params), int(seed), self.label)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params), "seed": int(self.seed)}

    @classmethod
    def from_dict(cls, data: dict) -> "AttackSpec":
        if not isinstance(data, dict) or "kind" not in data or set(data) - {"kind", "params", "seed", "label"}:
            raise InvalidAttack('attack spec must be {"kind": str, "params": {...}, "seed": int}')
        params = data.get("params") or {}
        if not isinstance(params, dict):
            raise InvalidAttack("attack params must be an object")
        seed = data.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise InvalidAttack("attack seed must be an integer")
        return cls(data["kind"], params, seed, data.get("label"))

    @classmethod
    def load(cls, path) -> "AttackSpec":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise InvalidAttack(f"attack file is not valid JSON: {exc}") from None


def _validate(kind: str, p: dict) -> None:
    def bad(msg):
        raise InvalidAttack(f"{kind}: {msg}")

    if "sigma" in p and p["sigma"] < 0:
        bad("sigma must be non-negative")
    if kind == "smoothing":
        if p["k"] < 1 or p["k"] != int(p["k"]):
            bad("k must be a positive integer")
        if p["sigma"] <= 0:
            bad("sigma must be positive")
    if "low" in p and not 0 < p["low"] <= p["high"]:
        bad("need 0 < low <= high")
    if "fraction" in p and not 0 <= p["fraction"] < 1:
        bad("fraction must lie in [0, 1)")
    if kind == "crop" and not 0 < p["retain"] <= 1:
        bad("retain must lie in (0, 1]")
    if kind == "quantization" and p["step"] <= 0:
        bad("step must be positive")
    if kind == "translation" and p["max_shift"] < 0:
        bad("max_shift must be non-negative")


def attack_catalogue(seed: int = 0) -> list[AttackSpec]:
    """The fifteen benchmark attacks, in table order."""
    return [
        AttackSpec("gaussian_noise", {"sigma": 0.01}, seed, "noise_0.01"),
        AttackSpec("gaussian_noise", {"sigma": 0.03}, seed, "noise_0.03"),
        AttackSpec("smoothing", {"k": 16, "sigma": 0.05}, seed, "smoothing"),
        AttackSpec("isotropic_scale", {"low": 0.8, "high": 1.2}, seed, "scale"),
        AttackSpec("rotation_z", {}, seed, "rotation_z"),
        AttackSpec("rotation_arbitrary", {}, seed, "rotation_arbitrary"),
        AttackSpec("translation", {"max_shift": 0.05}, seed, "translation"),
        AttackSpec("dropout", {"fraction": 0.10}, seed, "dropout"),
        AttackSpec("shuffle", {}, seed, "shuffle"),
        AttackSpec("crop", {"retain": 0.70}, seed, "crop"),
        AttackSpec("affine", {"low": 0.9, "high": 1.1}, seed, "affine"),
        AttackSpec("quantization", {"step": 0.01}, seed, "quantization"),
        AttackSpec("jitter", {"sigma": 0.005}, seed, "jitter"),
        AttackSpec("chunk_removal", {"fraction": 0.20}, seed, "chunk_removal"),
        AttackSpec("combined", {"sigma": 0.02, "fraction": 0.15}, seed, "combined"),
    ]


# -- primitives ---------------------------------------------------------------

def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return (diff * diff).sum(axis=-1)


def knn_indices(points: np.ndarray, k: int, chunk: int = 256) -> np.ndarray:
    """``(N, k)`` nearest-neighbour indices (self included), ties by index."""
    n = len(points)
    k = min(int(k), n)
    out = np.empty((n, k), dtype=np.int64)
    for lo in range(0, n, chunk):
        d = _sq_dists(points[lo:lo + chunk], points)
        out[lo:lo + chunk] = np.argsort(d, axis=1, kind="stable")[:, :k]
    return out


def gaussian_smooth(points: np.ndarray, k: int, sigma: float) -> np.ndarray:
    nbr = knn_indices(points, k)
    diff = points[nbr] - points[:, None, :]
    w = np.exp(-(diff * diff).sum(-1) / (2.0 * sigma * sigma))
    return (w[..., None] * points[nbr]).sum(1) / w.sum(1, keepdims=True)


def quantize(points: np.ndarray, step: float) -> np.ndarray:
    """Round to the nearest multiple of ``step``, halves away from zero."""
    # copysign keeps the sign of zero, so quantizing twice is bit-identical.
    return step * np.copysign(np.floor(np.abs(points) / step + 0.5), points)


def _drop(points: np.ndarray, count: int, gen: np.random.Generator) -> np.ndarray:
    if count <= 0:
        return points.copy()
    removed = gen.choice(len(points), size=count, replace=False)
    keep = np.ones(len(points), dtype=bool)
    keep[removed] = False
    return points[keep]


def _count(fraction: float, n: int, ceil: bool = False) -> int:
    # Round first so that e.g. 0.7 * 10 counts as exactly 7.
    x = round(fraction * n, 9)
    return math.ceil(x) if ceil else math.floor(x)


def random_rotation(gen: np.random.Generator) -> np.ndarray:
    """Uniform rotation matrix from a normalized Gaussian quaternion."""
    q = gen.standard_normal(4)
    return Rotation.from_quat(q / np.linalg.norm(q)).as_matrix()


def rotation_z(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def apply_attack(cloud, spec: AttackSpec) -> np.ndarray:
    """Apply ``spec`` to ``cloud`` and return a new array.

    Raises:
        EmptyResult: the attack would remove every point.
    """
    pts = as_cloud(cloud)
    p = spec.params
    gen = _rng.stream(spec.seed, "attack", spec.kind)
    n = len(pts)
    kind = spec.kind

    if kind == "clean":
        out = pts.copy()
    elif kind in ("gaussian_noise", "jitter"):
        out = pts + gen.normal(0.0, p["sigma"], pts.shape)
    elif kind == "smoothing":
        out = gaussian_smooth(pts, int(p["k"]), p["sigma"])
    elif kind == "isotropic_scale":
        out = pts * gen.uniform(p["low"], p["high"])
    elif kind == "rotation_z":
        out = pts @ rotation_z(gen.uniform(0.0, 2.0 * math.pi)).T
    elif kind == "rotation_arbitrary":
        out = pts @ random_rotation(gen).T
    elif kind == "translation":
        out = pts + gen.uniform(-p["max_shift"], p["max_shift"], 3)
    elif kind == "dropout":
        frac = p["fraction"]
        if p["uniform_fraction"]:
            frac = frac * (1.0 - gen.random())  # U(0, fraction]
        out = _drop(pts, _count(frac, n), gen)
    elif kind == "shuffle":
        out = pts[gen.permutation(n)]
    elif kind == "crop":
        d = gen.standard_normal(3)
        d /= np.linalg.norm(d)
        keep = np.argsort(pts @ d, kind="stable")[: _count(p["retain"], n, ceil=True)]
        out = pts[np.sort(keep)]
    elif kind == "affine":
        out = pts * gen.uniform(p["low"], p["high"], 3)
    elif kind == "quantization":
        out = quantize(pts, p["step"])
    elif kind == "chunk_removal":
        count = _count(p["fraction"], n)
        out = pts.copy()
        if count > 0:
            seed_idx = int(gen.integers(n))
            order = np.argsort(_sq_dists(pts[seed_idx:seed_idx + 1], pts)[0], kind="stable")
            nbrs = order[order != seed_idx][: count - 1]
            keep = np.ones(n, dtype=bool)
            keep[seed_idx] = False
            keep[nbrs] = False
            out = pts[keep]
    elif kind == "combined":
        noisy = pts + gen.normal(0.0, p["sigma"], pts.shape)
        out = _drop(noisy, _count(p["fraction"], n), gen)
    else:  # pragma: no cover - rejected by AttackSpec
        raise InvalidAttack(kind)

    if len(out) == 0:
        raise EmptyResult(f"{spec.label} left no points")
    return out
