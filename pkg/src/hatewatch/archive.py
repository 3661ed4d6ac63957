"""Message archives: parsing, snowball crawling, language aggregation, filtering.

Wire formats:

- ``messages.jsonl``: one JSON object per line with keys ``message_id``,
  ``channel_id``, ``timestamp`` (RFC 3339 UTC), ``text``, ``forwarded_from``,
  ``mentions``, ``lang``.
- ``seeds.txt``: one channel id per line.
- ``crawl_log.csv``: ``round,channel_id,reason``.

Rounds are zero-based: round 0 fetches the seed list, round 1 fetches every
channel mentioned by or forwarded from round-0 channels, and rounds >= 2 only
fetch channels referenced by at least ``round3_min_referrers`` distinct
already-collected channels.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Callable, Iterable, Optional, Sequence

logger = logging.getLogger(__name__)

SEED = "seed"
MENTIONED = "mentioned"
FORWARDED = "forwarded"


class ArchiveError(Exception):
    """Invalid archive content or wire-format violation."""


class ArchiveParseError(ArchiveError):
    """Malformed input line; carries the 1-based line number."""

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class CrawlError(ArchiveError):
    """Snowball crawl could not produce any data."""


@dataclass(frozen=True)
class RawMessage:
    message_id: int
    channel_id: str
    timestamp: datetime
    text: str
    forwarded_from: Optional[str] = None
    mentions: tuple[str, ...] = ()
    language: Optional[str] = None

    def __post_init__(self):
        if self.timestamp.tzinfo is None:
            raise ArchiveError(f"naive timestamp on message {self.message_id}")
        if len(set(self.mentions)) != len(self.mentions):
            raise ArchiveError(f"duplicate mentions on message {self.message_id}")
        if self.forwarded_from == self.channel_id:
            raise ArchiveError(
                f"message {self.message_id} forwarded from its own channel"
            )

    @property
    def key(self) -> tuple[str, int]:
        return (self.channel_id, self.message_id)


@dataclass(frozen=True)
class Channel:
    channel_id: str
    first_seen_round: int = 0
    dominant_languages: tuple[tuple[str, int], ...] = ()
    is_german: bool = False

    @property
    def is_seed(self) -> bool:
        return self.first_seen_round == 0


@dataclass(frozen=True)
class CrawlConfig:
    rounds: int = 3
    round3_min_referrers: int = 5
    period_start: Optional[datetime] = None
    period_end: Optional[datetime] = None

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.round3_min_referrers < 1:
            raise ValueError("round3_min_referrers must be >= 1")
        if (
            self.period_start is not None
            and self.period_end is not None
            and not self.period_start < self.period_end
        ):
            raise ValueError("period_start must precede period_end")


@dataclass
class Archive:
    channels: dict[str, Channel] = field(default_factory=dict)
    messages: dict[str, list[RawMessage]] = field(default_factory=dict)
    crawl_log: list[tuple[int, str, str]] = field(default_factory=list)

    def __post_init__(self):
        for cid, msgs in self.messages.items():
            if cid not in self.channels:
                raise ArchiveError(f"messages for unknown channel {cid!r}")
            for a, b in zip(msgs, msgs[1:]):
                if a.timestamp > b.timestamp:
                    raise ArchiveError(f"messages of {cid!r} not time-ordered")

    def all_messages(self) -> Iterable[RawMessage]:
        for cid in sorted(self.messages):
            yield from self.messages[cid]

    @property
    def n_messages(self) -> int:
        return sum(len(m) for m in self.messages.values())


def _parse_timestamp(value: str) -> datetime:
    ts = datetime.fromisoformat(value.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        raise ValueError("timestamp lacks timezone")
    return ts.astimezone(timezone.utc)


def _message_from_record(rec: dict) -> RawMessage:
    return RawMessage(
        message_id=int(rec["message_id"]),
        channel_id=str(rec["channel_id"]),
        timestamp=_parse_timestamp(rec["timestamp"]),
        text=str(rec.get("text", "")),
        forwarded_from=rec.get("forwarded_from"),
        mentions=tuple(rec.get("mentions", ())),
        language=rec.get("lang"),
    )


def _finalize_channel(channel: Channel, msgs: Sequence[RawMessage]) -> Channel:
    dominant, is_german = detect_channel_language([m.language for m in msgs])
    return replace(channel, dominant_languages=dominant, is_german=is_german)


def _build_archive(
    per_channel: dict[str, list[RawMessage]],
    rounds: dict[str, int],
    crawl_log: list[tuple[int, str, str]],
) -> Archive:
    channels = {}
    messages = {}
    for cid in sorted(per_channel):
        msgs = sorted(per_channel[cid], key=lambda m: (m.timestamp, m.message_id))
        channel = Channel(channel_id=cid, first_seen_round=rounds.get(cid, 0))
        channels[cid] = _finalize_channel(channel, msgs)
        messages[cid] = msgs
    return Archive(channels=channels, messages=messages, crawl_log=list(crawl_log))


def parse_archive(stream: Iterable[str]) -> Archive:
    """Parse a messages.jsonl stream into an Archive.

    Duplicate (channel_id, message_id) pairs keep the first occurrence; a
    duplicate with different text is logged as a warning. Malformed lines
    raise :class:`ArchiveParseError` with the offending line number.
    """
    per_channel: dict[str, list[RawMessage]] = {}
    seen: dict[tuple[str, int], str] = {}
    for line_no, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            msg = _message_from_record(rec)
        except (ValueError, KeyError, TypeError, ArchiveError) as exc:
            raise ArchiveParseError(line_no, str(exc)) from exc
        if msg.key in seen:
            if seen[msg.key] != msg.text:
                logger.warning(
                    "duplicate message %s with conflicting text; keeping first",
                    msg.key,
                )
            continue
        seen[msg.key] = msg.text
        per_channel.setdefault(msg.channel_id, []).append(msg)
    return _build_archive(per_channel, {}, [])


def detect_channel_language(
    per_message_langs: Iterable[Optional[str]],
) -> tuple[tuple[tuple[str, int], ...], bool]:
    """Aggregate per-message language labels to the channel level.

    A channel counts as German when "de" is the most or second-most common
    non-null label. Ties are broken lexicographically by language code.
    """
    tally = Counter(lang for lang in per_message_langs if lang is not None)
    ranked = tuple(sorted(tally.items(), key=lambda kv: (-kv[1], kv[0])))
    is_german = "de" in {lang for lang, _ in ranked[:2]}
    return ranked, is_german


def filter_by_period(archive: Archive, start: datetime, end: datetime) -> Archive:
    """Retain messages with start <= timestamp < end (half-open interval).

    Channels left without messages are kept: they may still appear as graph
    endpoints or in the crawl log.
    """
    if not start < end:
        raise ValueError("start must precede end")
    messages = {
        cid: [m for m in msgs if start <= m.timestamp < end]
        for cid, msgs in archive.messages.items()
    }
    channels = {
        cid: _finalize_channel(archive.channels[cid], messages.get(cid, []))
        for cid in archive.channels
    }
    return Archive(
        channels=channels, messages=messages, crawl_log=list(archive.crawl_log)
    )


# A fetcher maps a channel id to its messages within the observation period,
# or None when the channel is not accessible.
Fetcher = Callable[[str], Optional[Sequence[RawMessage]]]


def _references(msgs: Sequence[RawMessage]) -> dict[str, str]:
    """Referenced channel -> discovery reason, forwards taking precedence."""
    refs: dict[str, str] = {}
    for m in msgs:
        for target in m.mentions:
            refs.setdefault(target, MENTIONED)
        if m.forwarded_from is not None:
            refs[m.forwarded_from] = FORWARDED
    return refs


def snowball_crawl(
    fetcher: Fetcher, seeds: Sequence[str], cfg: CrawlConfig
) -> Archive:
    """Snowball-sample channels starting from the seed list.

    Round 0 fetches all accessible seeds; round 1 fetches everything they
    mention or forward from; later rounds require a candidate to be
    referenced by at least ``cfg.round3_min_referrers`` distinct collected
    channels. Fetch failures are logged and skipped except when no seed at
    all is accessible. Deterministic for a deterministic fetcher.
    """
    if not seeds:
        raise CrawlError("empty seed list")
    per_channel: dict[str, list[RawMessage]] = {}
    rounds: dict[str, int] = {}
    crawl_log: list[tuple[int, str, str]] = []
    attempted: set[str] = set()

    def fetch(cid: str) -> Optional[list[RawMessage]]:
        attempted.add(cid)
        try:
            msgs = fetcher(cid)
        except Exception as exc:  # fetcher failures are non-fatal
            logger.warning("fetch failed for %s: %s", cid, exc)
            return None
        if msgs is None:
            return None
        out = list(msgs)
        if cfg.period_start is not None and cfg.period_end is not None:
            out = [
                m
                for m in out
                if cfg.period_start <= m.timestamp < cfg.period_end
            ]
        return out

    frontier = {cid: SEED for cid in seeds}
    for round_no in range(cfg.rounds):
        collected_this_round = []
        for cid in sorted(frontier):
            if cid in rounds:
                continue  # already collected, never re-fetched
            msgs = fetch(cid)
            if msgs is None:
                logger.info("channel %s not accessible; skipped", cid)
                continue
            per_channel[cid] = msgs
            rounds[cid] = round_no
            crawl_log.append((round_no, cid, frontier[cid]))
            collected_this_round.append(cid)
        if round_no == 0 and not collected_this_round:
            raise CrawlError("no seed channel is accessible")
        if round_no + 1 >= cfg.rounds:
            break
        # Frontier for the next round: channels referenced by collected ones.
        referrer_count: Counter[str] = Counter()
        reasons: dict[str, str] = {}
        for cid in sorted(rounds):
            refs = _references(per_channel[cid])
            for target, reason in refs.items():
                if target in rounds or target in attempted:
                    continue
                referrer_count[target] += 1
                if reasons.get(target) != FORWARDED:
                    reasons[target] = reason
        if round_no + 1 >= 2:
            eligible = {
                t
                for t, n in referrer_count.items()
                if n >= cfg.round3_min_referrers
            }
        else:
            eligible = set(referrer_count)
        frontier = {t: reasons[t] for t in eligible}

    return _build_archive(per_channel, rounds, crawl_log)


def export_messages(archive: Archive) -> str:
    """Canonical messages.jsonl export: channels and messages in sorted order."""
    buf = io.StringIO()
    for msg in archive.all_messages():
        rec = {
            "message_id": msg.message_id,
            "channel_id": msg.channel_id,
            "timestamp": msg.timestamp.strftime("%Y-%m-%dT%H:%M:%SZ"),
            "text": msg.text,
            "forwarded_from": msg.forwarded_from,
            "mentions": list(msg.mentions),
            "lang": msg.language,
        }
        buf.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
    return buf.getvalue()


def export_channels(archive: Archive) -> str:
    """channels.csv export: channel_id, first_seen_round, is_german."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["channel_id", "first_seen_round", "is_german"])
    for cid in sorted(archive.channels):
        ch = archive.channels[cid]
        writer.writerow([cid, ch.first_seen_round, int(ch.is_german)])
    return buf.getvalue()


def export_crawl_log(archive: Archive) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["round", "channel_id", "reason"])
    for round_no, cid, reason in archive.crawl_log:
        writer.writerow([round_no, cid, reason])
    return buf.getvalue()


def load_archive(
    messages_stream: Iterable[str],
    channels_stream: Optional[Iterable[str]] = None,
    crawl_log_stream: Optional[Iterable[str]] = None,
) -> Archive:
    """Rebuild an Archive from its exported files (inverse of the exports)."""
    archive = parse_archive(messages_stream)
    rounds: dict[str, int] = {}
    if channels_stream is not None:
        for row in csv.DictReader(channels_stream):
            rounds[row["channel_id"]] = int(row["first_seen_round"])
    crawl_log: list[tuple[int, str, str]] = []
    if crawl_log_stream is not None:
        for row in csv.DictReader(crawl_log_stream):
            crawl_log.append((int(row["round"]), row["channel_id"], row["reason"]))
    if not rounds and not crawl_log:
        return archive
    channels = {}
    messages = dict(archive.messages)
    for cid, ch in archive.channels.items():
        channels[cid] = replace(ch, first_seen_round=rounds.get(cid, 0))
    # Channels present in the metadata but without any parsed message.
    for cid, round_no in rounds.items():
        if cid not in channels:
            channels[cid] = Channel(channel_id=cid, first_seen_round=round_no)
            messages[cid] = []
    return Archive(channels=channels, messages=messages, crawl_log=crawl_log)


def seed_channels(archive: Archive) -> list[str]:
    return sorted(c.channel_id for c in archive.channels.values() if c.is_seed)
