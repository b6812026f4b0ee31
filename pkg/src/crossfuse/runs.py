"""Ranked result lists and their TREC-format serialization.

A run file line is ``qid Q0 docid rank score tag`` with rank starting at 1
and the score printed with 6 decimal places.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

from .errors import FormatError, ValidationError


class Channel(enum.Enum):
    MONO_IMAGE = "mono_image"          # question image vs reference images
    CROSS_IMAGE_TEXT = "cross_image_text"  # question image vs entity names
    TEXT = "text"                      # question text vs passage texts


@dataclass
class ChannelScores:
    """Ranked (doc_id, score) list for one query in one channel."""

    query_id: str
    ranked: list[tuple[str, float]]
    channel: Channel

    def validate(self) -> None:
        docs = [d for d, _ in self.ranked]
        if len(set(docs)) != len(docs):
            raise ValidationError(f"query {self.query_id!r}: duplicate doc ids in ranking")
        scores = [s for _, s in self.ranked]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValidationError(f"query {self.query_id!r}: scores not non-increasing")


@dataclass
class RetrievalRun:
    """Per-query ranked lists, keyed by query id in insertion order."""

    results: dict[str, list[tuple[str, float]]] = field(default_factory=dict)
    tag: str = "run"

    @property
    def query_ids(self) -> list[str]:
        return list(self.results.keys())


def channel_scores_to_run(scores: list[ChannelScores], tag: str | None = None) -> RetrievalRun:
    run = RetrievalRun(tag=tag or (scores[0].channel.value if scores else "run"))
    for cs in scores:
        if cs.query_id in run.results:
            raise ValidationError(f"duplicate query id {cs.query_id!r}")
        run.results[cs.query_id] = list(cs.ranked)
    return run


def run_to_channel_scores(run: RetrievalRun, channel: Channel) -> list[ChannelScores]:
    return [ChannelScores(qid, list(ranked), channel) for qid, ranked in run.results.items()]


def write_run(run: RetrievalRun, path) -> None:
    lines = []
    for qid, ranked in run.results.items():
        for rank, (doc_id, score) in enumerate(ranked, start=1):
            lines.append(f"{qid} Q0 {doc_id} {rank} {score:.6f} {run.tag}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_run(path) -> RetrievalRun:
    """Parse a TREC run file; ranked lists are re-sorted by (score desc, doc asc)."""
    path = Path(path)
    per_query: dict[str, list[tuple[str, float]]] = {}
    tag = "run"
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 6:
            raise FormatError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
        qid, _, doc_id, _, score, tag = parts
        try:
            value = float(score)
        except ValueError:
            raise FormatError(f"{path}:{lineno}: bad score {score!r}") from None
        per_query.setdefault(qid, []).append((doc_id, value))
    run = RetrievalRun(tag=tag)
    for qid, pairs in per_query.items():
        docs = [d for d, _ in pairs]
        if len(set(docs)) != len(docs):
            raise FormatError(f"{path}: duplicate doc id for query {qid!r}")
        run.results[qid] = sorted(pairs, key=lambda p: (-p[1], p[0]))
    return run
