"""Training-time augmentation: noise, scaling, rotation and dropout in random order."""

from __future__ import annotations

import math

import numpy as np

from .. import rng as _rng
from ..attacks import apply_attack, attack_catalogue
from ..geometry_io import as_cloud, normalize

NOISE_SIGMA = 0.01
SCALE_RANGE = (0.95, 1.05)
DROPOUT = 0.10
P_APPLY = 0.5
TRANSFORMS = ("noise", "scale", "rotation", "dropout")


def axis_rotation(axis: str, theta: float) -> np.ndarray:
    i = "xyz".index(axis)
    j, k = [a for a in range(3) if a != i]
    c, s = math.cos(theta), math.sin(theta)
    r = np.eye(3)
    r[j, j], r[j, k], r[k, j], r[k, k] = c, -s, s, c
    return r


def augment(cloud, seed: int, *labels, with_attacks: bool = False,
            rotation_axis: str = "z") -> np.ndarray:
    """Randomly augment ``cloud`` and re-normalize it.

    Each transform is included with probability 0.5 and the included ones are
    applied in a random order.  Rotation is about ``rotation_axis``; about x
    it leaves the x coordinates, hence the lexicographic blocks and their
    singular values, unchanged.  With
    ``with_attacks`` a random benchmark attack is additionally applied first,
    also with probability 0.5.
    """
    pts = as_cloud(cloud)
    gen = _rng.stream(seed, "augment", *labels)
    if with_attacks and gen.random() < P_APPLY:
        catalogue = attack_catalogue()
        spec = catalogue[int(gen.integers(len(catalogue)))]
        pts = apply_attack(pts, spec.with_seed(int(gen.integers(2**63))))
    chosen = [t for t in TRANSFORMS if gen.random() < P_APPLY]
    for name in gen.permutation(np.array(chosen, dtype=object)) if chosen else ():
        if name == "noise":
            pts = pts + gen.normal(0.0, NOISE_SIGMA, pts.shape)
        elif name == "scale":
            pts = pts * gen.uniform(*SCALE_RANGE)
        elif name == "rotation":
            pts = pts @ axis_rotation(rotation_axis, gen.uniform(0.0, 2.0 * math.pi)).T
        else:
            drop = math.floor(DROPOUT * len(pts))
            if drop:
                keep = np.ones(len(pts), dtype=bool)
                keep[gen.choice(len(pts), drop, replace=False)] = False
                pts = pts[keep]
    return normalize(pts)[0]
