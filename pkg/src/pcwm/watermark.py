"""Block-SVD watermark: embed one bit per lexicographic block in its dominant singular value.

The cloud is sorted lexicographically, cut into ``n`` contiguous blocks and
each centered block ``X`` is decomposed as ``X = U S V^T``.  A bit is written
by moving ``sigma_1`` to a target value with the rank-1 update
``X' = X + (t - sigma_1) u_1 v_1^T``, i.e. by stretching the block along its
principal axis.

Singular values are measured in a canonical frame: after centering, the cloud
is scaled so that the RMS of the point components orthogonal to each block's
principal axis equals :data:`FRAME_RMS`.  A principal-axis stretch leaves
those components untouched, so the frame scale does not react to the
embedding itself, while any similarity transform of the cloud is still
factored out.  (Scaling to unit max norm instead would undo the stretch of
whichever block holds the farthest point.)
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateCloud,
    EmbedNonConvergent,
    InvalidKey,
    NonNormalizedInput,
    TooFewPoints,
)
from .geometry_io import as_cloud, centroid, lex_order

log = logging.getLogger(__name__)

DEFAULT_ALPHA = 2.0
DEFAULT_BITS = 3
# Median orthogonal RMS of unit-max-norm surface clouds; puts frame sigmas on
# the same scale as singular values of unit-max-norm blocks.
FRAME_RMS = 0.34
MAX_ITER = 20
NORMALIZED_TOL = 1e-6


class Mode(str, enum.Enum):
    REFERENCE = "reference"
    QIM = "qim"


def as_bits(bits) -> np.ndarray:
    """Coerce ``"101"``, ``[1, 0, 1]`` or an int array to a uint8 bit vector."""
    if isinstance(bits, str):
        if not bits or set(bits) - {"0", "1"}:
            raise ValueError(f"watermark must be a non-empty 0/1 string, got {bits!r}")
        return np.array([int(c) for c in bits], dtype=np.uint8)
    arr = np.asarray(bits).reshape(-1)
    if arr.size == 0 or not np.all((arr == 0) | (arr == 1)):
        raise ValueError("watermark must be a non-empty sequence of 0/1 values")
    return arr.astype(np.uint8)


def bits_str(bits) -> str:
    return "".join(str(int(b)) for b in np.asarray(bits).reshape(-1))


@dataclass(frozen=True)
class EmbedKey:
    mode: Mode = Mode.REFERENCE
    alpha: float = DEFAULT_ALPHA
    n_bits: int = DEFAULT_BITS
    reference_sigmas: tuple[float, ...] | None = None
    normalized_embedding: bool = True

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not (isinstance(self.alpha, (int, float)) and np.isfinite(self.alpha) and self.alpha > 0):
            raise InvalidKey(f"alpha must be a positive finite number, got {self.alpha!r}")
        if not isinstance(self.n_bits, (int, np.integer)) or self.n_bits < 1:
            raise InvalidKey(f"n_bits must be a positive integer, got {self.n_bits!r}")
        ref = self.reference_sigmas
        if self.mode is Mode.REFERENCE:
            if ref is None or len(ref) != self.n_bits:
                raise InvalidKey("reference mode needs one reference sigma per bit")
            ref = tuple(float(s) for s in ref)
            if not all(np.isfinite(s) and s >= 0 for s in ref):
                raise InvalidKey("reference sigmas must be finite and non-negative")
            object.__setattr__(self, "reference_sigmas", ref)
        elif ref is not None:
            raise InvalidKey("reference sigmas are only valid in reference mode")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "alpha": float(self.alpha),
            "n_bits": int(self.n_bits),
            "reference_sigmas": None if self.reference_sigmas is None else list(self.reference_sigmas),
            "normalized_embedding": bool(self.normalized_embedding),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EmbedKey":
        expected = {"mode", "alpha", "n_bits", "reference_sigmas", "normalized_embedding"}
        if not isinstance(data, dict) or set(data) - expected or not {"mode", "alpha", "n_bits"} <= set(data):
            raise InvalidKey(f"key must be an object with fields {sorted(expected)}")
        try:
            return cls(
                mode=Mode(data["mode"]),
                alpha=float(data["alpha"]),
                n_bits=int(data["n_bits"]),
                reference_sigmas=data.get("reference_sigmas"),
                normalized_embedding=bool(data.get("normalized_embedding", True)),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, InvalidKey):
                raise
            raise InvalidKey(str(exc)) from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "EmbedKey":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise InvalidKey(f"key file is not valid JSON: {exc}") from None
        return cls.from_dict(data)


# -- kernels -----------------------------------------------------------------

def lex_sort(cloud) -> np.ndarray:
    """Permutation sorting points by (x, y, z), ties broken by original index."""
    return lex_order(np.asarray(cloud, dtype=np.float64).reshape(-1, 3))


def block_ranges(n_points: int, n_blocks: int) -> list[tuple[int, int]]:
    """Half-open ranges ``[floor(iN/n), floor((i+1)N/n))`` covering ``[0, N)``."""
    return [((i * n_points) // n_blocks, ((i + 1) * n_points) // n_blocks)
            for i in range(n_blocks)]


def block_svd(block) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Singular values (padded to 3) and sign-fixed leading singular vectors.

    The sign of ``v1`` is chosen so its largest-magnitude component is
    positive (first such component on ties); ``u1`` is then ``X v1 / s1``.
    A zero block yields ``s = 0``, ``v1 = e1`` and ``u1 = e1``.
    """
    x = np.asarray(block, dtype=np.float64)
    m = x.shape[0]
    sig = np.zeros(3)
    _, s, vt = np.linalg.svd(x, full_matrices=False)
    sig[: len(s)] = s
    if sig[0] == 0.0:
        u = np.zeros(m)
        u[0] = 1.0
        return sig, u, np.array([1.0, 0.0, 0.0])
    v = vt[0].copy()
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    u = (x @ v) / sig[0]
    return sig, u, v


def rank1_update(block, target: float):
    """Move the block's leading singular value to ``target``.

    Returns ``(new_block, delta)`` with ``delta = target - sigma_1``; the
    Frobenius norm of the change is ``|delta|``.
    """
    x = np.asarray(block, dtype=np.float64)
    sig, u, v = block_svd(x)
    delta = float(target) - sig[0]
    return x + delta * np.outer(u, v), delta


@dataclass
class Frame:
    """Canonical block decomposition of a cloud (see module docstring)."""

    order: np.ndarray  # lexicographic order of the centered cloud
    ranges: list[tuple[int, int]]
    centered: np.ndarray
    scale: float  # multiply centered units by this to get frame units
    sigmas: np.ndarray  # (n, 3), frame units
    u: list[np.ndarray] = field(repr=False)
    v: list[np.ndarray] = field(repr=False)

    def block_indices(self, i: int) -> np.ndarray:
        lo, hi = self.ranges[i]
        return self.order[lo:hi]


def canonical_frame(cloud, n_blocks: int) -> Frame:
    pts = as_cloud(cloud)
    n_points = len(pts)
    if n_points < n_blocks:
        raise TooFewPoints(f"{n_points} points cannot hold {n_blocks} blocks")
    centered = pts - centroid(pts)
    # Sort centered coordinates, breaking exact ties by the raw lexicographic
    # rank so the result does not depend on the input permutation.
    raw = lex_order(pts)
    sub = centered[raw]
    order = raw[np.lexsort((sub[:, 2], sub[:, 1], sub[:, 0]))]
    ranges = block_ranges(n_points, n_blocks)
    sigmas, us, vs = np.zeros((n_blocks, 3)), [], []
    for i, (lo, hi) in enumerate(ranges):
        sigmas[i], u, v = block_svd(centered[order[lo:hi]])
        us.append(u)
        vs.append(v)
    perp = float(np.sqrt((sigmas[:, 1] ** 2 + sigmas[:, 2] ** 2).sum() / n_points))
    spread = float(np.abs(centered).max())
    if not perp > 1e-12 * max(spread, 1e-300):
        raise DegenerateCloud("blocks are collinear; cloud has no off-axis extent")
    scale = FRAME_RMS / perp
    return Frame(order, ranges, centered, scale, sigmas * scale, us, vs)


def block_sigmas(cloud, n_blocks: int) -> np.ndarray:
    """Leading singular value of each block, in frame units."""
    return canonical_frame(cloud, n_blocks).sigmas[:, 0]


# -- embed / extract ---------------------------------------------------------

def qim_target(sigma: float, bit: int, alpha: float) -> float:
    return alpha * (np.floor(sigma / alpha) + 0.25 + 0.5 * bit)


def decode(sigmas, key: EmbedKey) -> np.ndarray:
    s = np.asarray(sigmas, dtype=np.float64)
    if key.mode is Mode.REFERENCE:
        return ((s - np.asarray(key.reference_sigmas)) / key.alpha >= 0.5).astype(np.uint8)
    return (np.mod(s / key.alpha, 1.0) >= 0.5).astype(np.uint8)


def check_normalized(cloud: np.ndarray, tol: float = NORMALIZED_TOL) -> None:
    c = cloud.mean(axis=0)
    r = float(np.sqrt((cloud * cloud).sum(axis=1)).max())
    if np.abs(c).max() > tol or abs(r - 1.0) > tol:
        raise NonNormalizedInput(
            f"cloud must be centered with unit max norm (centroid {c}, max norm {r:.6g})")


def _targets(frame: Frame, wm: np.ndarray, alpha: float, mode: Mode) -> np.ndarray:
    s1 = frame.sigmas[:, 0]
    if mode is Mode.REFERENCE:
        return s1 + alpha * wm
    t = np.array([qim_target(s, b, alpha) for s, b in zip(s1, wm)])
    # A target close to sigma_2 would make the leading axis ambiguous; move it
    # up one lattice period instead.
    return np.where(t < frame.sigmas[:, 1] + 0.25 * alpha, t + alpha, t)


def embed(cloud, wm, alpha: float = DEFAULT_ALPHA, mode: Mode | str = Mode.REFERENCE,
          *, require_normalized: bool = True, max_iter: int = MAX_ITER,
          tol: float = 1e-4) -> tuple[np.ndarray, EmbedKey]:
    """Embed ``wm`` into ``cloud`` and return ``(watermarked, key)``.

    The per-block targets are fixed from the input's spectrum; the rank-1
    update is then re-applied on the current cloud until its own canonical
    frame (recomputed from scratch, as extraction does) decodes the bits and
    every block sits within ``tol * alpha`` of its target.  The best
    decoding iterate is returned if the loop stalls.

    Raises:
        NonNormalizedInput: ``require_normalized`` and the cloud is not
            centered with unit max norm.
        TooFewPoints: fewer points than bits.
        EmbedNonConvergent: no iterate decodes correctly within ``max_iter``.
    """
    mode = Mode(mode)
    wm = as_bits(wm)
    if not (np.isfinite(alpha) and alpha > 0):
        raise InvalidKey(f"alpha must be positive, got {alpha!r}")
    pts = as_cloud(cloud)
    n = len(wm)
    if len(pts) < n:
        raise TooFewPoints(f"{len(pts)} points cannot carry {n} bits")
    if require_normalized:
        check_normalized(pts)

    frame = canonical_frame(pts, n)
    targets = _targets(frame, wm, alpha, mode)
    key = EmbedKey(
        mode=mode, alpha=float(alpha), n_bits=n,
        reference_sigmas=tuple(frame.sigmas[:, 0]) if mode is Mode.REFERENCE else None,
        normalized_embedding=require_normalized,
    )
    if np.all(targets == frame.sigmas[:, 0]):
        return pts.copy(), key

    work = pts.copy()
    best, best_err = None, np.inf
    for it in range(max_iter + 1):
        if it:
            frame = canonical_frame(work, n)
        err = float(np.abs(frame.sigmas[:, 0] - targets).max())
        if it and np.array_equal(decode(frame.sigmas[:, 0], key), wm):
            if err < best_err:
                best, best_err = work.copy(), err
            if err <= tol * alpha:
                break
        if it == max_iter:
            break
        for i in range(n):
            idx = frame.block_indices(i)
            delta = (targets[i] - frame.sigmas[i, 0]) / frame.scale
            work[idx] += delta * np.outer(frame.u[i], frame.v[i])
    if best is None:
        raise EmbedNonConvergent(f"watermark not recoverable after {max_iter} iterations")
    log.debug("embed converged with residual %.3g (alpha units)", best_err / alpha)
    return best, key


def extract(cloud, key: EmbedKey) -> np.ndarray:
    """Recover the watermark bits from a (possibly attacked) cloud."""
    pts = as_cloud(cloud)
    if len(pts) < key.n_bits:
        raise TooFewPoints(f"{len(pts)} points cannot carry {key.n_bits} bits")
    return decode(block_sigmas(pts, key.n_bits), key)
