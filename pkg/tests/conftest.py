"""Shared fixture builders for the test suite."""

from __future__ import annotations

import json
from datetime import datetime, timezone

import numpy as np
import pytest

from hatewatch.archive import RawMessage
from hatewatch.topics import TOPIC_NAMES

ABUSIVE_MARKERS = ["hasse", "abschaum", "vernichten", "dreckspack"]
NEUTRAL_MARKERS = ["guten morgen", "wetter", "rezept", "fahrrad"]


def ts(year, month, day, hour=0):
    return datetime(year, month, day, hour, tzinfo=timezone.utc)


def msg(channel, message_id, when=None, text="hallo welt", fwd=None, mentions=(),
        lang="de"):
    return RawMessage(
        message_id=message_id,
        channel_id=channel,
        timestamp=when or ts(2020, 1, 1),
        text=text,
        forwarded_from=fwd,
        mentions=tuple(mentions),
        language=lang,
    )


def message_record(m: RawMessage) -> str:
    return json.dumps({
        "message_id": m.message_id,
        "channel_id": m.channel_id,
        "timestamp": m.timestamp.strftime("%Y-%m-%dT%H:%M:%SZ"),
        "text": m.text,
        "forwarded_from": m.forwarded_from,
        "mentions": list(m.mentions),
        "lang": m.language,
    }, ensure_ascii=False)


def synthetic_corpus(rng: np.random.Generator):
    """Message universe for crawl/pipeline tests.

    Seeds s1/s2 reference m1..m6; d is referenced by 5 distinct collected
    channels, e by only 4, so a 3-round crawl with the 5-referrer rule must
    pick up d but not e.
    """
    messages = []
    mid = 0

    def add(channel, text, when, fwd=None, mentions=(), lang="de"):
        nonlocal mid
        mid += 1
        messages.append(msg(channel, mid, when, text, fwd, mentions, lang))

    abusive_texts = [f"ich {w} euch alle, ihr seid {w}" for w in ABUSIVE_MARKERS]
    neutral_texts = [f"heute {w} und alles ist ruhig" for w in NEUTRAL_MARKERS]

    mentioned = [f"m{i}" for i in range(1, 7)]
    for month in range(1, 7):
        for i, seed in enumerate(["s1", "s2"]):
            for j in range(6):
                abusive = rng.random() < (0.55 if seed == "s1" else 0.2)
                pool = abusive_texts if abusive else neutral_texts
                text = pool[int(rng.integers(len(pool)))]
                mention = [mentioned[(month + i + j) % 6]] if j % 2 == 0 else []
                fwd = mentioned[(month + j) % 6] if j == 3 else None
                add(seed, text, ts(2020, month, 2 + j), fwd=fwd, mentions=mention)
    # every m-channel references d; only four of them reference e
    for i, channel in enumerate(mentioned):
        for month in range(1, 7):
            abusive = rng.random() < 0.3
            pool = abusive_texts if abusive else neutral_texts
            text = pool[int(rng.integers(len(pool)))]
            mentions = ["d"] if month == 1 else []
            if month == 2 and i < 4:
                mentions = ["e"]
            add(channel, text, ts(2020, month, 10 + i), mentions=mentions)
    # the thresholded channels' own content (only d should be crawled)
    for channel in ["d", "e"]:
        for month in range(1, 7):
            add(channel, neutral_texts[month % 4], ts(2020, month, 20))
    # a non-German channel in the universe
    for month in range(1, 7):
        add("ru1", "privet mir", ts(2020, month, 25), lang="ru")
    return messages


@pytest.fixture
def corpus_rng():
    return np.random.default_rng(20200101)


def random_unit_vectors(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    v = rng.normal(size=(n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def topic_vector_file(rng: np.random.Generator, dim: int = 16) -> list[dict]:
    vectors = random_unit_vectors(rng, len(TOPIC_NAMES), dim)
    return [
        {"topic_id": name, "terms": [f"{name.lower()}_{i}" for i in range(3)],
         "vector": [float(x) for x in vectors[i]]}
        for i, name in enumerate(TOPIC_NAMES)
    ]
