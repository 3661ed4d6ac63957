"""Message chunking, score aggregation, and ensemble voting.

Long messages are split into chunks of at most 412 words without breaking
sentences; each chunk is scored independently and the message score is the
maximum chunk probability for the abusive class. Multiple classifiers are
combined by majority vote: a message is abusive when at least ``t``
classifiers vote abusive.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

from . import ABUSIVE, NEUTRAL

logger = logging.getLogger(__name__)

MAX_CHUNK_WORDS = 412

MessageKey = tuple[str, int]


@dataclass(frozen=True)
class Chunk:
    message_key: MessageKey
    index: int
    text: str
    word_count: int


@dataclass(frozen=True)
class ScoreRecord:
    message_key: MessageKey
    classifier_id: str
    p_abusive: float

    def __post_init__(self):
        if not 0.0 <= self.p_abusive <= 1.0:
            raise ValueError(f"p_abusive out of range: {self.p_abusive}")


@dataclass(frozen=True)
class EnsembleVote:
    message_key: MessageKey
    votes: Mapping[str, str]
    threshold: int
    final_label: str

    @property
    def abusive_votes(self) -> int:
        return sum(1 for v in self.votes.values() if v == ABUSIVE)


# Sentence segmenter interface: text -> list of sentence strings whose
# whitespace-delimited words, concatenated in order, reproduce the text's
# word sequence.
Segmenter = Callable[[str], list[str]]

# Sentence ends at ./!/? (possibly repeated, possibly closing a quote or
# parenthesis) followed by whitespace and an uppercase letter or digit.
_BOUNDARY = re.compile(r'(?<=[.!?])["\')\]]?\s+(?=[A-ZÄÖÜ0-9])')

# Common abbreviations that must not terminate a sentence.
_ABBREVIATIONS = (
    "z.B.", "u.a.", "d.h.", "bzw.", "ca.", "Dr.", "Prof.", "Nr.", "Abs.",
    "St.", "Str.", "bzgl.", "evtl.", "ggf.", "inkl.", "Mr.", "Mrs.", "e.g.",
    "i.e.", "etc.", "vs.",
)


def default_segmenter(text: str) -> list[str]:
    """Rule-based sentence splitter with an abbreviation guard.

    An approximation of a library segmenter; pluggable wherever chunking is
    used. Splits the original string at boundary matches so no character is
    lost or duplicated.
    """
    pieces = []
    start = 0
    for match in _BOUNDARY.finditer(text):
        head = text[start : match.start() + 1]
        last_word = head.rsplit(None, 1)[-1] if head.split() else ""
        if last_word in _ABBREVIATIONS:
            continue
        pieces.append(text[start : match.end()])
        start = match.end()
    if start < len(text):
        pieces.append(text[start:])
    return [p for p in pieces if p.strip()]


def chunk_message(
    text: str,
    message_key: MessageKey = ("", 0),
    max_words: int = MAX_CHUNK_WORDS,
    segmenter: Optional[Segmenter] = None,
) -> list[Chunk]:
    """Split a message into sentence-aligned chunks of at most max_words words.

    Messages at or under the limit become a single chunk. Longer messages are
    packed greedily, whole sentences at a time; a single sentence longer than
    the limit is hard-split at max_words boundaries, each piece a standalone
    chunk. Empty text yields one empty chunk.
    """
    if max_words < 1:
        raise ValueError("max_words must be >= 1")
    words = text.split()
    if len(words) <= max_words:
        return [Chunk(message_key, 0, text, len(words))]
    segmenter = segmenter or default_segmenter
    sentences = segmenter(text)

    chunks: list[list[str]] = []
    current: list[str] = []

    def flush():
        if current:
            chunks.append(list(current))
            current.clear()

    for sentence in sentences:
        sent_words = sentence.split()
        if len(sent_words) > max_words:
            flush()
            for i in range(0, len(sent_words), max_words):
                chunks.append(sent_words[i : i + max_words])
        elif len(current) + len(sent_words) <= max_words:
            current.extend(sent_words)
        else:
            flush()
            current.extend(sent_words)
    flush()
    return [
        Chunk(message_key, i, " ".join(ws), len(ws)) for i, ws in enumerate(chunks)
    ]


def aggregate_chunk_scores(chunk_scores: Sequence[float]) -> float:
    """Message-level abusive probability: the maximum over its chunk scores."""
    if not chunk_scores:
        raise ValueError("message has no scored chunks")
    for p in chunk_scores:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"chunk score out of range: {p}")
    return max(chunk_scores)


def apply_threshold(p_abusive: float, tau: float = 0.5) -> str:
    """Abusive when the score is above or equal to the threshold."""
    if not 0.0 <= p_abusive <= 1.0:
        raise ValueError(f"p_abusive out of range: {p_abusive}")
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau out of range: {tau}")
    return ABUSIVE if p_abusive >= tau else NEUTRAL


def ensemble_vote(
    votes: Mapping[str, str], t: int, message_key: MessageKey = ("", 0)
) -> EnsembleVote:
    """Combine per-classifier binary votes into a final label."""
    if not votes:
        raise ValueError("empty vote map")
    if not 1 <= t <= len(votes):
        raise ValueError(f"t={t} outside 1..{len(votes)}")
    abusive = sum(1 for v in votes.values() if v == ABUSIVE)
    final = ABUSIVE if abusive >= t else NEUTRAL
    return EnsembleVote(message_key, dict(votes), t, final)


@dataclass
class ScoreTable:
    """Per-(message, classifier) abusive probabilities with duplicate rejection."""

    scores: dict[tuple[MessageKey, str], float] = field(default_factory=dict)

    def add(self, record: ScoreRecord):
        key = (record.message_key, record.classifier_id)
        if key in self.scores:
            raise ValueError(f"duplicate score for {key}")
        self.scores[key] = record.p_abusive

    def classifiers(self) -> list[str]:
        return sorted({cid for _, cid in self.scores})

    def message_keys(self) -> list[MessageKey]:
        return sorted({mk for mk, _ in self.scores})

    def get(self, message_key: MessageKey, classifier_id: str) -> Optional[float]:
        return self.scores.get((message_key, classifier_id))


def merge_chunk_scores(
    chunk_records: Iterable[tuple[MessageKey, int, str, float]],
) -> ScoreTable:
    """Collapse per-chunk scores to per-message scores by max aggregation."""
    best: dict[tuple[MessageKey, str], float] = {}
    seen_chunks: set[tuple[MessageKey, int, str]] = set()
    for message_key, chunk_index, classifier_id, p in chunk_records:
        chunk_id = (message_key, chunk_index, classifier_id)
        if chunk_id in seen_chunks:
            raise ValueError(f"duplicate chunk score for {chunk_id}")
        seen_chunks.add(chunk_id)
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"chunk score out of range: {p}")
        key = (message_key, classifier_id)
        best[key] = max(best.get(key, 0.0), p)
    table = ScoreTable()
    table.scores = best
    return table


def combine_scores(
    table: ScoreTable,
    t: int,
    tau: float = 0.5,
    classifier_ids: Optional[Sequence[str]] = None,
) -> tuple[list[EnsembleVote], int]:
    """Threshold every classifier's score and majority-vote per message.

    Classifiers missing a score for a message vote neutral; the number of
    such missing votes is returned as a warning counter.
    """
    ids = list(classifier_ids) if classifier_ids is not None else table.classifiers()
    if not ids:
        raise ValueError("no classifiers to combine")
    missing = 0
    out = []
    for mk in table.message_keys():
        votes = {}
        for cid in ids:
            p = table.get(mk, cid)
            if p is None:
                votes[cid] = NEUTRAL
                missing += 1
            else:
                votes[cid] = apply_threshold(p, tau)
        out.append(ensemble_vote(votes, t, mk))
    if missing:
        logger.warning("%d missing classifier scores treated as neutral", missing)
    return out, missing


class BaselineModel:
    """Character n-gram logistic scorer used when no external scores exist.

    A bag of character 3-5 grams feeding a logistic regression; training is
    deterministic for a fixed seed.
    """

    def __init__(self, pipeline, classes):
        self._pipeline = pipeline
        self._classes = list(classes)

    def predict_proba_abusive(self, text: str) -> float:
        probs = self._pipeline.predict_proba([text])[0]
        return float(probs[self._classes.index(ABUSIVE)])


def baseline_train(
    labeled: Sequence[tuple[str, str]], seed: int = 0
) -> BaselineModel:
    from sklearn.feature_extraction.text import CountVectorizer
    from sklearn.linear_model import LogisticRegression
    from sklearn.pipeline import Pipeline

    if len(labeled) < 2:
        raise ValueError("need at least 2 training examples")
    labels = {label for _, label in labeled}
    if labels != {ABUSIVE, NEUTRAL}:
        raise ValueError(f"training set must contain both classes, got {labels}")
    pipeline = Pipeline(
        [
            ("ngrams", CountVectorizer(analyzer="char_wb", ngram_range=(3, 5))),
            ("logreg", LogisticRegression(max_iter=1000, random_state=seed)),
        ]
    )
    texts = [t for t, _ in labeled]
    ys = [y for _, y in labeled]
    pipeline.fit(texts, ys)
    classes = list(pipeline.named_steps["logreg"].classes_)
    return BaselineModel(pipeline, classes)


def baseline_predict(model: BaselineModel, text: str) -> float:
    return model.predict_proba_abusive(text)
