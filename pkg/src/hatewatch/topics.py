"""Per-channel topic distributions and distributional similarity clustering.

Documents are matched to topic vectors by cosine similarity; per-channel hit
counts over the nine hate-proxy topics are normalized into distributions,
compared with the Jensen-Shannon divergence (base 2), and grouped by
average-linkage agglomerative clustering.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

# The nine hate-proxy topics used as channel features.
TOPIC_NAMES = (
    "Vaccinations",
    "Police",
    "Covid-19",
    "Migration",
    "Extremism",
    "Racism",
    "Islamophobia",
    "Violence",
    "Antisemitism",
)


@dataclass(frozen=True)
class TopicVector:
    topic_id: str
    vector: tuple[float, ...]
    descriptive_terms: tuple[str, ...] = ()

    def __post_init__(self):
        norm = float(np.linalg.norm(self.vector))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(
                f"topic {self.topic_id!r} vector norm {norm:.8f} != 1"
            )


@dataclass(frozen=True)
class TopicDistribution:
    channel_id: str
    probs: tuple[float, ...]
    hit_count: int

    def __post_init__(self):
        if self.hit_count == 0:
            if any(p != 0.0 for p in self.probs):
                raise ValueError("zero-hit distribution must be all zeros")
        else:
            if any(p < 0 for p in self.probs):
                raise ValueError("negative probability")
            if abs(sum(self.probs) - 1.0) > 1e-9:
                raise ValueError("probabilities must sum to 1")


@dataclass(frozen=True)
class ClusterTree:
    """Agglomerative merge list. Leaves are 0..n-1; merge i creates node n+i."""

    n_leaves: int
    merges: tuple[tuple[int, int, float], ...]

    def __post_init__(self):
        if len(self.merges) != max(self.n_leaves - 1, 0):
            raise ValueError("a tree over n leaves needs n-1 merges")

    def to_dict(self) -> dict:
        return {
            "n_leaves": self.n_leaves,
            "merges": [[a, b, d] for a, b, d in self.merges],
        }


def assign_topics(
    doc_embedding: Sequence[float],
    topics: Sequence[TopicVector],
    theta: float = 0.5,
) -> set[str]:
    """Topic ids whose cosine similarity with the document is strictly above theta."""
    v = np.asarray(doc_embedding, dtype=float)
    norm = np.linalg.norm(v)
    if norm == 0:
        logger.warning("zero-norm document embedding; no topic hits")
        return set()
    hits = set()
    for topic in topics:
        t = np.asarray(topic.vector, dtype=float)
        if t.shape != v.shape:
            raise ValueError(
                f"dimension mismatch: doc {v.shape} vs topic {t.shape}"
            )
        if float(v @ t) / norm > theta:
            hits.add(topic.topic_id)
    return hits


def channel_topic_distribution(
    channel_id: str,
    hits: Iterable[set[str]],
    topic_ids: Sequence[str] = TOPIC_NAMES,
) -> TopicDistribution:
    """Normalize per-document topic hits into a channel-level distribution.

    A document matching several topics contributes one count to each. A
    channel whose documents hit nothing gets the all-zero sentinel with
    hit_count 0.
    """
    counts = np.zeros(len(topic_ids))
    index = {t: i for i, t in enumerate(topic_ids)}
    total = 0
    for hit_set in hits:
        for topic_id in hit_set:
            counts[index[topic_id]] += 1
            total += 1
    if total == 0:
        return TopicDistribution(channel_id, (0.0,) * len(topic_ids), 0)
    return TopicDistribution(channel_id, tuple(counts / total), total)


def js_divergence(p: Sequence[float], q: Sequence[float]) -> float:
    """Jensen-Shannon divergence, base 2, in [0, 1]; 0*log 0 taken as 0."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    for name, dist in (("P", p), ("Q", q)):
        if dist.shape != p.shape or np.any(dist < 0) or abs(dist.sum() - 1.0) > 1e-9:
            raise ValueError(f"{name} is not a valid distribution")
    m = 0.5 * (p + q)

    def kl(a, b):
        mask = a > 0
        return float(np.sum(a[mask] * np.log2(a[mask] / b[mask])))

    jsd = 0.5 * kl(p, m) + 0.5 * kl(q, m)
    return float(min(max(jsd, 0.0), 1.0))


def similarity_matrix(dists: Sequence[TopicDistribution]) -> np.ndarray:
    """Symmetric pairwise JSD matrix over channels with at least one topic hit."""
    eligible = [d for d in dists if d.hit_count > 0]
    if len(eligible) < 2:
        raise ValueError("need >= 2 channels with topic hits")
    n = len(eligible)
    mat = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = js_divergence(eligible[i].probs, eligible[j].probs)
            mat[i, j] = mat[j, i] = d
    return mat


def hierarchical_cluster(distance_matrix: np.ndarray) -> ClusterTree:
    """Average-linkage agglomerative clustering of a distance matrix.

    Lance-Williams update; ties on the minimum distance are broken by the
    smallest (i, j) cluster-id pair, making the merge sequence deterministic.
    """
    d = np.asarray(distance_matrix, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError("distance matrix must be square")
    n = d.shape[0]
    if n < 2:
        raise ValueError("need at least 2 points")
    if not np.allclose(d, d.T):
        raise ValueError("distance matrix must be symmetric")

    # active cluster id -> (row index in working matrix, size)
    work = d.copy()
    ids = list(range(n))
    sizes = {i: 1 for i in range(n)}
    merges = []
    next_id = n
    for step in range(n - 1):
        best = None
        for a in range(len(ids)):
            for b in range(a + 1, len(ids)):
                cand = (work[a, b], ids[a], ids[b])
                if best is None or cand[0] < best[0]:
                    best = cand
                    best_ab = (a, b)
        dist, id_a, id_b = best
        a, b = best_ab
        size_a, size_b = sizes[id_a], sizes[id_b]
        # Average-linkage distances from the merged cluster to the rest.
        new_row = (size_a * work[a, :] + size_b * work[b, :]) / (size_a + size_b)
        keep = [i for i in range(len(ids)) if i not in (a, b)]
        m = len(keep)
        new_work = np.zeros((m + 1, m + 1))
        new_work[:m, :m] = work[np.ix_(keep, keep)]
        new_work[m, :m] = new_row[keep]
        new_work[:m, m] = new_row[keep]
        work = new_work
        ids = [ids[i] for i in keep] + [next_id]
        sizes[next_id] = size_a + size_b
        merges.append((min(id_a, id_b), max(id_a, id_b), float(dist)))
        next_id += 1
    return ClusterTree(n_leaves=n, merges=tuple(merges))


def cut_tree(tree: ClusterTree, n_clusters: int) -> list[int]:
    """Flat cluster labels obtained by undoing the last merges."""
    if not 1 <= n_clusters <= tree.n_leaves:
        raise ValueError("n_clusters out of range")
    parent = {}
    for i, (a, b, _) in enumerate(tree.merges[: tree.n_leaves - n_clusters]):
        parent[a] = tree.n_leaves + i
        parent[b] = tree.n_leaves + i

    def root(x):
        while x in parent:
            x = parent[x]
        return x

    roots = sorted({root(i) for i in range(tree.n_leaves)})
    label = {r: i for i, r in enumerate(roots)}
    return [label[root(i)] for i in range(tree.n_leaves)]
