"""Farthest-point sampling and k-nearest-neighbour grouping.

Both routines work on a lexicographically sorted copy of the points and
break every distance tie towards the lexicographically smaller point, so the
selected coordinates do not depend on the input order.  Squared distances
are accumulated per axis (x, then y, then z) rather than through a matrix
product, keeping each value independent of its neighbours in memory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import TooFewPoints
from ..geometry_io import lex_order


def _sq_norm(d: np.ndarray) -> np.ndarray:
    return d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]


def fps(points, m: int) -> np.ndarray:
    """Greedy farthest-point sampling of ``m`` indices.

    Starts from the point of largest norm; every later pick maximizes the
    distance to the already selected set.  Ties go to the lexicographically
    smallest candidate.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if m > n:
        raise TooFewPoints(f"cannot sample {m} centroids from {n} points")
    if m <= 0:
        return np.empty(0, dtype=np.int64)
    order = lex_order(pts)
    sp = pts[order]
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = int(np.argmax(_sq_norm(sp)))  # argmax returns the first maximum
    dist = _sq_norm(sp - sp[chosen[0]])
    for i in range(1, m):
        chosen[i] = int(np.argmax(dist))
        np.minimum(dist, _sq_norm(sp - sp[chosen[i]]), out=dist)
    return order[chosen]


def knn_group(points, centroids, k: int) -> np.ndarray:
    """``(len(centroids), k)`` neighbour indices into ``points``, nearest first."""
    pts = np.asarray(points, dtype=np.float64)
    cen = np.asarray(centroids, dtype=np.float64).reshape(-1, 3)
    if k > len(pts):
        raise TooFewPoints(f"cannot take {k} neighbours from {len(pts)} points")
    order = lex_order(pts)
    sp = pts[order]
    d = _sq_norm(cen[:, None, :] - sp[None, :, :])
    if k == len(pts):
        return order[np.argsort(d, axis=1, kind="stable")]
    # Rows whose k-th distance is not tied take exactly the entries <= it; a
    # stable sort of those (already in lexicographic order) fixes the order.
    # Rows with a tie at the cut fall back to a full stable sort.
    kth = np.partition(d, k - 1, axis=1)[:, k - 1:k]
    inside = d <= kth
    nearest = np.empty((len(cen), k), dtype=np.int64)
    exact = inside.sum(axis=1) == k
    if exact.any():
        cols = np.nonzero(inside[exact])[1].reshape(-1, k)
        dist = np.take_along_axis(d[exact], cols, axis=1)
        nearest[exact] = np.take_along_axis(cols, np.argsort(dist, axis=1, kind="stable"), axis=1)
    if not exact.all():
        nearest[~exact] = np.argsort(d[~exact], axis=1, kind="stable")[:, :k]
    return order[nearest]


@dataclass
class Grouping:
    """Geometry-only inputs of the decoder for one cloud."""

    rel1: np.ndarray  # (c1, k1, 3) neighbour minus centroid
    centers1: np.ndarray  # (c1, 3)
    nbr2: np.ndarray  # (c2, k2) indices into centers1
    rel2: np.ndarray  # (c2, k2, 3)


def build_grouping(points, c1: int, k1: int, c2: int, k2: int) -> Grouping:
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < c1:
        raise TooFewPoints(f"decoder needs at least {c1} points, got {len(pts)}")
    idx1 = fps(pts, c1)
    centers1 = pts[idx1]
    nbr1 = knn_group(pts, centers1, k1)
    rel1 = pts[nbr1] - centers1[:, None, :]
    idx2 = fps(centers1, c2)
    centers2 = centers1[idx2]
    nbr2 = knn_group(centers1, centers2, k2)
    rel2 = centers1[nbr2] - centers2[:, None, :]
    return Grouping(rel1, centers1, nbr2, rel2)
