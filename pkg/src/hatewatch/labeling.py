"""Channel labeling: how many abusive-classified messages make a hater.

The message classifier is imperfect, so calling every channel with one
abusive-classified message a hater would mislabel neutral channels. Instead we
compute P(true neutral | predicted abusive) from the evaluation confusion
matrix after replacing the evaluation set's class balance with the corpus
prevalence, then require enough abusive-classified messages that the chance of
all of them being false positives drops below a target error rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

from . import ABUSIVE, HATER, NEUTRAL
from .metrics import ConfusionMatrix

_MAX_K = 10_000_000


@dataclass(frozen=True)
class ThresholdDerivation:
    pi: float
    fpr: float
    tpr: float
    p_false: float
    epsilon: float
    k: int

    def to_dict(self) -> dict:
        return {
            "pi": self.pi,
            "fpr": self.fpr,
            "tpr": self.tpr,
            "p_false": self.p_false,
            "epsilon": self.epsilon,
            "k": self.k,
        }


@dataclass(frozen=True)
class ChannelLabel:
    channel_id: str
    abusive_count: int
    label: str


def reweight_conditional(cm: ConfusionMatrix, pi: float) -> float:
    """P(true neutral | predicted abusive) under assumed prevalence pi.

    Row-conditional rates (FPR, TPR) come from the evaluation matrix; the
    evaluation set's class priors are replaced by (1 - pi, pi) via Bayes'
    rule. Scaling either matrix row leaves the result unchanged.
    """
    if not 0.0 < pi < 1.0:
        raise ValueError(f"pi must be in (0,1), got {pi}")
    neutral_row = cm.row(NEUTRAL)
    abusive_row = cm.row(ABUSIVE)
    if sum(neutral_row) == 0 or sum(abusive_row) == 0:
        raise ValueError("both true-class rows must be non-empty")
    fpr = neutral_row[1] / sum(neutral_row)
    tpr = abusive_row[1] / sum(abusive_row)
    denom = (1 - pi) * fpr + pi * tpr
    if denom == 0:
        raise ValueError("classifier never predicts abusive; p_false undefined")
    return ((1 - pi) * fpr) / denom


def min_abusive_count(p_false: float, epsilon: float) -> int:
    """Smallest k >= 1 with p_false**k <= epsilon.

    Closed form ceil(ln eps / ln p), then nudged by direct power comparison
    to absorb floating-point drift at the boundary.
    """
    if not 0.0 <= p_false < 1.0:
        raise ValueError(f"p_false must be in [0,1), got {p_false}")
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must be in (0,1), got {epsilon}")
    if p_false == 0.0:
        return 1
    k = max(1, math.ceil(math.log(epsilon) / math.log(p_false)))
    while k > 1 and p_false ** (k - 1) <= epsilon:
        k -= 1
    while p_false**k > epsilon:
        k += 1
        if k > _MAX_K:
            raise ValueError("no practical k satisfies the error bound")
    return k


def derive_threshold(
    cm: ConfusionMatrix, pi: float, epsilon: float
) -> ThresholdDerivation:
    neutral_row = cm.row(NEUTRAL)
    abusive_row = cm.row(ABUSIVE)
    fpr = neutral_row[1] / sum(neutral_row)
    tpr = abusive_row[1] / sum(abusive_row)
    p_false = reweight_conditional(cm, pi)
    k = min_abusive_count(p_false, epsilon)
    return ThresholdDerivation(pi, fpr, tpr, p_false, epsilon, k)


def label_channels(
    abusive_counts: Mapping[str, int], k: int
) -> list[ChannelLabel]:
    """Label each channel hater when its abusive-message count reaches k.

    Counts must already include forwarded messages (they sit in the
    forwarding channel's message list).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    out = []
    for cid in sorted(abusive_counts):
        count = abusive_counts[cid]
        if count < 0:
            raise ValueError(f"negative abusive count for {cid}")
        out.append(ChannelLabel(cid, count, HATER if count >= k else NEUTRAL))
    return out
