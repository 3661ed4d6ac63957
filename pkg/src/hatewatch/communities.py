"""Community detection over channel embeddings: 2-D reduction plus DBSCAN.

The default reducer is a principal-component projection (deterministic; the
reducer is an interface so a nonlinear method can be plugged in). DBSCAN
includes the outlier class (-1); per-community hater proportions and seed
counts are reported.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from . import HATER

logger = logging.getLogger(__name__)

Reducer = Callable[[np.ndarray], np.ndarray]


def reduce_2d(embeddings: np.ndarray) -> np.ndarray:
    """Project rows onto the top-2 principal components, centered at origin.

    Deterministic: component signs are fixed so the largest-magnitude loading
    of each component is positive. Rank-0 input collapses to the origin with
    a warning.
    """
    x = np.asarray(embeddings, dtype=float)
    if x.ndim != 2 or x.shape[0] < 3:
        raise ValueError("need an n x d matrix with n >= 3")
    centered = x - x.mean(axis=0)
    if not np.any(centered):
        logger.warning("all embeddings identical; projecting to origin")
        return np.zeros((x.shape[0], 2))
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:2]
    if components.shape[0] < 2:
        components = np.vstack([components, np.zeros(x.shape[1])])
    for i in range(2):
        j = int(np.argmax(np.abs(components[i])))
        if components[i, j] < 0:
            components[i] = -components[i]
    return centered @ components.T


def dbscan(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Density-based clustering; returns per-point community ids, -1 = noise.

    Core points have >= min_pts neighbors within eps (self included);
    clusters grow by density reachability in index order, and border points
    stay with the first cluster that claims them. Community ids are
    contiguous from 0.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    labels = np.full(n, -1, dtype=int)
    visited = np.zeros(n, dtype=bool)
    cluster = 0

    def neighbors_of(i: int) -> list[int]:
        dists = np.linalg.norm(pts - pts[i], axis=1)
        return [int(j) for j in np.flatnonzero(dists <= eps)]

    for i in range(n):
        if visited[i]:
            continue
        visited[i] = True
        neighbors = neighbors_of(i)
        if len(neighbors) < min_pts:
            continue  # noise unless later claimed as a border point
        labels[i] = cluster
        queue = [j for j in neighbors if j != i]
        while queue:
            j = queue.pop(0)
            if labels[j] == -1:
                labels[j] = cluster  # border or newly reached point
            if not visited[j]:
                visited[j] = True
                j_neighbors = neighbors_of(j)
                if len(j_neighbors) >= min_pts:
                    queue.extend(k for k in j_neighbors if k not in queue)
        cluster += 1
    return labels


def median_knn_distance(points: np.ndarray, k: int = 4) -> float:
    """Median k-th-nearest-neighbor distance; default eps heuristic."""
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    if n <= k:
        raise ValueError(f"need more than {k} points")
    dists = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    kth = np.sort(dists, axis=1)[:, k]  # column 0 is the point itself
    return float(np.median(kth))


@dataclass(frozen=True)
class CommunityStats:
    community_id: int
    size: int
    hater_count: int
    hater_proportion: float
    seed_count: int

    def to_dict(self) -> dict:
        return {
            "community_id": self.community_id,
            "size": self.size,
            "hater_count": self.hater_count,
            "hater_proportion": self.hater_proportion,
            "seed_count": self.seed_count,
        }


def community_stats(
    assignment: Mapping[str, int],
    channel_labels: Mapping[str, str],
    seeds: Optional[Iterable[str]] = None,
) -> list[CommunityStats]:
    """Per-community sizes, hater proportions, seed counts; outliers last."""
    seed_set = set(seeds or ())
    missing = [cid for cid in assignment if cid not in channel_labels]
    if missing:
        raise ValueError(f"channels without labels: {sorted(missing)[:5]}")
    by_community: dict[int, list[str]] = {}
    for cid, community in assignment.items():
        by_community.setdefault(community, []).append(cid)
    out = []
    for community in sorted(by_community, key=lambda c: (c == -1, c)):
        members = by_community[community]
        haters = sum(1 for cid in members if channel_labels[cid] == HATER)
        out.append(
            CommunityStats(
                community_id=community,
                size=len(members),
                hater_count=haters,
                hater_proportion=haters / len(members),
                seed_count=sum(1 for cid in members if cid in seed_set),
            )
        )
    return out
