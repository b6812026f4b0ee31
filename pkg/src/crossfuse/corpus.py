"""Knowledge-base preprocessing: article records, passage splitting, manifests.

Articles arrive as JSONL records (entity_id, title, body, optional image).
Bodies are split into ~100-word passages by greedy sentence packing, never
breaking a sentence; a single oversized sentence becomes its own passage.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

from .errors import FormatError, ValidationError
from .fusion import EntityPassageMap

# sentence ends at . ! ? followed by whitespace and an uppercase letter, digit
# or opening quote; a small stop-list protects common abbreviations
_ABBREVIATIONS = {
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "no", "vs", "etc",
    "e.g", "i.e", "fig", "vol", "inc", "ltd", "co", "jan", "feb", "mar",
    "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec",
}
_BOUNDARY_RE = re.compile(r'(?<=[.!?])\s+(?=[A-Z0-9"\'“‘(])')


@dataclass
class Article:
    entity_id: str
    title: str
    body: str
    image: str | None = None

    def validate(self) -> None:
        if not self.entity_id:
            raise ValidationError("article with empty entity_id")
        if not self.title:
            raise ValidationError(f"article {self.entity_id!r} has empty title")


@dataclass
class Passage:
    passage_id: str
    entity_id: str
    ordinal: int
    text: str


def passage_id(entity_id: str, ordinal: int) -> str:
    return f"{entity_id}#{ordinal}"


def parse_passage_id(pid: str) -> tuple[str, int]:
    entity, _, ordinal = pid.rpartition("#")
    if not entity or not ordinal.isdigit():
        raise ValidationError(f"malformed passage id {pid!r}")
    return entity, int(ordinal)


def split_sentences(text: str) -> list[str]:
    pieces = _BOUNDARY_RE.split(text.strip())
    sentences: list[str] = []
    for piece in pieces:
        piece = piece.strip()
        if not piece:
            continue
        if sentences:
            # re-join splits caused by an abbreviation dot
            last_word = sentences[-1].rstrip(".").split()[-1].lower() if sentences[-1].split() else ""
            if sentences[-1].endswith(".") and last_word in _ABBREVIATIONS:
                sentences[-1] = sentences[-1] + " " + piece
                continue
        sentences.append(piece)
    return sentences


def _word_count(sentence: str) -> int:
    return len(sentence.split())


def split_passages(article: Article, limit: int = 100) -> list[Passage]:
    """Greedy sentence packing into passages of at most ``limit`` words.

    A sentence that would overflow the current passage starts the next one;
    a single sentence longer than the limit stands alone. Concatenating the
    passages reproduces the sentence sequence.
    """
    if limit < 1:
        raise ValidationError(f"limit must be >= 1, got {limit}")
    article.validate()
    sentences = split_sentences(article.body)
    if not sentences:
        return []

    groups: list[list[str]] = []
    current: list[str] = []
    current_words = 0
    for sentence in sentences:
        words = _word_count(sentence)
        if current and current_words + words > limit:
            groups.append(current)
            current, current_words = [], 0
        if words > limit:
            groups.append([sentence])
            continue
        current.append(sentence)
        current_words += words
    if current:
        groups.append(current)

    return [
        Passage(
            passage_id=passage_id(article.entity_id, i),
            entity_id=article.entity_id,
            ordinal=i,
            text=" ".join(group),
        )
        for i, group in enumerate(groups)
    ]


def build_manifests(
    articles: list[Article], limit: int = 100
) -> tuple[EntityPassageMap, list[Passage], list[tuple[str, str]]]:
    """Split every article and emit the cross-file manifests.

    Returns (entity->passages map, passage store, entity-name list). The name
    list is row-aligned with the entity-name embedding matrix contract:
    (entity_id, title) in article order.
    """
    seen = set()
    for article in articles:
        article.validate()
        if article.entity_id in seen:
            raise ValidationError(f"duplicate entity id {article.entity_id!r}")
        seen.add(article.entity_id)

    epmap = EntityPassageMap()
    store: list[Passage] = []
    names: list[tuple[str, str]] = []
    for article in articles:
        passages = split_passages(article, limit=limit)
        if passages:
            epmap.passages[article.entity_id] = [p.passage_id for p in passages]
            store.extend(passages)
        names.append((article.entity_id, article.title))
    epmap.validate()
    return epmap, store, names


def read_articles(path) -> list[Article]:
    articles = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{lineno}: bad JSON ({exc})") from None
        try:
            articles.append(
                Article(
                    entity_id=raw["entity_id"],
                    title=raw["title"],
                    body=raw.get("body", ""),
                    image=raw.get("image"),
                )
            )
        except KeyError as exc:
            raise FormatError(f"{path}:{lineno}: missing field {exc}") from None
    return articles


def write_passages(passages: list[Passage], path) -> None:
    lines = [
        json.dumps(
            {
                "passage_id": p.passage_id,
                "entity_id": p.entity_id,
                "ordinal": p.ordinal,
                "text": p.text,
            },
            ensure_ascii=False,
        )
        for p in passages
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_passages(path) -> list[Passage]:
    passages = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
            passages.append(
                Passage(
                    passage_id=raw["passage_id"],
                    entity_id=raw["entity_id"],
                    ordinal=int(raw["ordinal"]),
                    text=raw["text"],
                )
            )
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise FormatError(f"{path}:{lineno}: bad passage record ({exc})") from None
    return passages


def write_names(names: list[tuple[str, str]], path) -> None:
    """Two-column manifest (entity_id, title) for the encoder bridge."""
    for entity_id, title in names:
        if "\t" in entity_id or "\n" in entity_id or "\n" in title:
            raise ValidationError(f"entity {entity_id!r}: tab/newline not allowed in manifest")
    lines = [f"{e}\t{t}" for e, t in names]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
