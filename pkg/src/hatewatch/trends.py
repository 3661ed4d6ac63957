"""Monthly abusive-content series and pooled prevalence.

Messages are bucketed by UTC calendar month; the share of abusive messages is
reported per month and pooled over the whole window (message-weighted, not a
mean of monthly shares). Series can be restricted to the seed channels or to
the seeds' first-degree network.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterable, Optional

SUBSET_ALL = "all"
SUBSET_SEEDS = "seeds"
SUBSET_FIRST_DEGREE = "first_degree"


@dataclass(frozen=True)
class MonthlyBucket:
    month: str  # "YYYY-MM"
    total: int
    abusive: int

    @property
    def share(self) -> float:
        return self.abusive / self.total if self.total else 0.0


@dataclass(frozen=True)
class MonthlySeries:
    subset: str
    buckets: tuple[MonthlyBucket, ...]

    def __post_init__(self):
        months = [b.month for b in self.buckets]
        if months and months != _month_range(months[0], months[-1]):
            raise ValueError("months must be contiguous")


def _month_of(ts: datetime) -> str:
    utc = ts.astimezone(timezone.utc)
    return f"{utc.year:04d}-{utc.month:02d}"


def _month_range(first: str, last: str) -> list[str]:
    y, m = map(int, first.split("-"))
    ly, lm = map(int, last.split("-"))
    out = []
    while (y, m) <= (ly, lm):
        out.append(f"{y:04d}-{m:02d}")
        m += 1
        if m > 12:
            y, m = y + 1, 1
    return out


def monthly_series(
    labeled_messages: Iterable[tuple[str, datetime, bool]],
    window: tuple[str, str],
    subset: str = SUBSET_ALL,
    channel_subset: Optional[set[str]] = None,
) -> MonthlySeries:
    """Bucket (channel_id, timestamp, is_abusive) triples by calendar month.

    ``window`` is an inclusive pair of "YYYY-MM" strings; every month in the
    window appears in the output, zero-message months included. For subsets
    other than "all", ``channel_subset`` must name the channels to keep.
    """
    first, last = window
    months = _month_range(first, last)
    if not months:
        return MonthlySeries(subset, ())
    if subset != SUBSET_ALL and channel_subset is None:
        raise ValueError(f"subset {subset!r} requires channel_subset")
    totals = {m: 0 for m in months}
    abusive = {m: 0 for m in months}
    for channel_id, ts, is_abusive in labeled_messages:
        if channel_subset is not None and channel_id not in channel_subset:
            continue
        month = _month_of(ts)
        if month not in totals:
            continue
        totals[month] += 1
        if is_abusive:
            abusive[month] += 1
    buckets = tuple(MonthlyBucket(m, totals[m], abusive[m]) for m in months)
    return MonthlySeries(subset, buckets)


def overall_prevalence(series: MonthlySeries) -> float:
    """Pooled share: sum of abusive over sum of totals across the window."""
    total = sum(b.total for b in series.buckets)
    if total == 0:
        raise ValueError("series has no messages; prevalence undefined")
    return sum(b.abusive for b in series.buckets) / total


def series_rows(series: MonthlySeries) -> list[tuple[str, str, int, int, float]]:
    """CSV-ready rows: (month, subset, total, abusive, share)."""
    return [
        (b.month, series.subset, b.total, b.abusive, b.share)
        for b in series.buckets
    ]
