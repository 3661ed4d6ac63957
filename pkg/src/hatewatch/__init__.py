"""Abusive-message and hateful-channel detection for Telegram-style networks.

The package is organized around pipeline stages:

- ``archive``: message archives, snowball crawling, language aggregation
- ``classify``: sentence-aware chunking, score aggregation, ensemble voting
- ``metrics``: confusion matrices, F1, Krippendorff's alpha, majority labels
- ``labeling``: prevalence-reweighted threshold derivation and channel labels
- ``graph``: directed mention/forward channel graph and structural stats
- ``topics``: per-channel topic distributions, JS divergence, clustering
- ``embedding``: directed neighborhood-aggregation encoder trained with a
  corrupted-sample contrastive objective, plus a dense classifier head
- ``communities``: 2-D reduction, DBSCAN, per-community hater proportions
- ``trends``: monthly abusive-content prevalence series
- ``cli``: file-based pipeline runner wiring everything together
"""

__version__ = "0.1.0"

ABUSIVE = "abusive"
NEUTRAL = "neutral"
HATER = "hater"

__all__ = ["ABUSIVE", "NEUTRAL", "HATER", "__version__"]
