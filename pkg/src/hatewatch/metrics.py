"""Evaluation machinery: confusion matrices, F1 scores, inter-rater agreement.

Binary labels throughout are ``neutral`` / ``abusive``; confusion matrices are
indexed rows = true class, columns = predicted class, in that label order.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Optional, Sequence

import numpy as np

from . import ABUSIVE, NEUTRAL

CLASSES = (NEUTRAL, ABUSIVE)


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: tuple[tuple[int, int], tuple[int, int]]

    def __post_init__(self):
        if any(c < 0 for row in self.counts for c in row):
            raise ValueError("negative confusion counts")

    @property
    def total(self) -> int:
        return sum(c for row in self.counts for c in row)

    def as_array(self) -> np.ndarray:
        return np.array(self.counts, dtype=np.int64)

    def row(self, true_class: str) -> tuple[int, int]:
        return self.counts[CLASSES.index(true_class)]


def confusion(y_true: Sequence[str], y_pred: Sequence[str]) -> ConfusionMatrix:
    if len(y_true) != len(y_pred):
        raise ValueError("y_true and y_pred length mismatch")
    if not y_true:
        raise ValueError("empty label lists")
    counts = [[0, 0], [0, 0]]
    for t, p in zip(y_true, y_pred):
        counts[CLASSES.index(t)][CLASSES.index(p)] += 1
    return ConfusionMatrix((tuple(counts[0]), tuple(counts[1])))


def prf1(
    cm: ConfusionMatrix, positive_class: str = ABUSIVE
) -> tuple[float, float, float]:
    """Precision, recall, F1 of one class; zero-denominator cases yield 0."""
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    i = CLASSES.index(positive_class)
    arr = cm.as_array()
    tp = arr[i, i]
    predicted = arr[:, i].sum()
    actual = arr[i, :].sum()
    precision = tp / predicted if predicted > 0 else 0.0
    recall = tp / actual if actual > 0 else 0.0
    f1 = (
        2 * precision * recall / (precision + recall)
        if precision + recall > 0
        else 0.0
    )
    return float(precision), float(recall), float(f1)


def macro_f1(cm: ConfusionMatrix) -> float:
    return float(np.mean([prf1(cm, c)[2] for c in CLASSES]))


@dataclass
class AnnotationTable:
    """Sparse item x annotator label matrix."""

    ratings: dict[Hashable, dict[str, str]] = field(default_factory=dict)

    def add(self, item: Hashable, annotator: str, label: str):
        self.ratings.setdefault(item, {})[annotator] = label

    def items_with_min_ratings(self, n: int) -> list[Hashable]:
        return [item for item, r in self.ratings.items() if len(r) >= n]

    def labels_for(self, item: Hashable) -> list[str]:
        return list(self.ratings[item].values())


def krippendorff_alpha(table: AnnotationTable) -> float:
    """Nominal Krippendorff's alpha via the coincidence-matrix formulation.

    Items with fewer than two ratings are excluded. Raises when no item has
    two or more ratings. Perfect agreement returns exactly 1.0.
    """
    units = [
        table.labels_for(item) for item in table.items_with_min_ratings(2)
    ]
    if not units:
        raise ValueError("no item has >= 2 ratings; alpha undefined")
    values = sorted({label for unit in units for label in unit})
    index = {v: i for i, v in enumerate(values)}
    k = len(values)
    coincidence = np.zeros((k, k))
    for unit in units:
        m = len(unit)
        counts = Counter(unit)
        for c, n_c in counts.items():
            for c2, n_c2 in counts.items():
                pairs = n_c * (n_c2 - 1) if c == c2 else n_c * n_c2
                coincidence[index[c], index[c2]] += pairs / (m - 1)
    n_c = coincidence.sum(axis=1)
    n = n_c.sum()
    d_o = coincidence.sum() - np.trace(coincidence)
    if d_o == 0:
        return 1.0
    d_e = (n_c.sum() ** 2 - (n_c**2).sum()) / (n - 1)
    return float(1.0 - d_o / d_e)


def resolve_majority(ratings: Sequence[str]) -> Optional[str]:
    """Strict-majority label, or None when the ratings tie (needs more raters)."""
    if not ratings:
        raise ValueError("no ratings")
    counts = Counter(ratings).most_common()
    if len(counts) > 1 and counts[0][1] == counts[1][1]:
        return None
    return counts[0][0]


def resolve_table(table: AnnotationTable) -> dict[Hashable, Optional[str]]:
    return {
        item: resolve_majority(table.labels_for(item)) for item in table.ratings
    }


def metrics_report(
    cm: ConfusionMatrix, positive_class: str = ABUSIVE
) -> dict:
    """JSON-ready metric bundle for one classifier."""
    precision, recall, f1 = prf1(cm, positive_class)
    return {
        "precision": round(precision, 4),
        "recall": round(recall, 4),
        "f1": round(f1, 4),
        "macro_f1": round(macro_f1(cm), 4),
        "confusion": [list(row) for row in cm.counts],
    }
