"""Answer-string scoring: exact match, token F1, and soft matching.

Soft matching allows years to be off by one and gives numeric answers a 10%
relative tolerance; everything else falls back to exact match after
normalization (lowercase, strip punctuation and articles, collapse spaces).
"""

from __future__ import annotations

import json
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .errors import FormatError, ValidationError

KINDS = ("text", "year", "numeric")

_PUNCT = set(string.punctuation)
_ARTICLES = {"a", "an", "the"}
# optional sign, digits with optional comma groups, optional decimal part
_NUMBER_RE = re.compile(r"[+-]?\d{1,3}(?:,\d{3})+(?:\.\d+)?|[+-]?\d+(?:\.\d+)?")


def normalize(answer: str) -> str:
    """Lowercase, drop punctuation, drop articles, collapse whitespace."""
    lowered = answer.lower()
    no_punct = "".join(ch for ch in lowered if ch not in _PUNCT)
    tokens = [t for t in no_punct.split() if t not in _ARTICLES]
    return " ".join(tokens)


def exact_match(prediction: str, golds: list[str]) -> int:
    if not golds:
        raise ValidationError("empty gold list")
    pred = normalize(prediction)
    return int(any(pred == normalize(g) for g in golds))


def token_f1(prediction: str, golds: list[str]) -> float:
    """Max over golds of the multiset-overlap F1 on normalized tokens.

    Both sides empty counts as 1.0 (SQuAD convention), one side empty as 0.
    """
    if not golds:
        raise ValidationError("empty gold list")
    pred_tokens = normalize(prediction).split()
    best = 0.0
    for gold in golds:
        gold_tokens = normalize(gold).split()
        if not pred_tokens and not gold_tokens:
            best = max(best, 1.0)
            continue
        if not pred_tokens or not gold_tokens:
            continue
        common = Counter(pred_tokens) & Counter(gold_tokens)
        overlap = sum(common.values())
        if overlap == 0:
            continue
        precision = overlap / len(pred_tokens)
        recall = overlap / len(gold_tokens)
        best = max(best, 2 * precision * recall / (precision + recall))
    return best


def extract_number(text: str) -> float | None:
    """First numeric value in the raw string (sign, comma groups, decimals).

    Runs on the unnormalized text: normalization strips the punctuation that
    signs and decimal points are made of.
    """
    match = _NUMBER_RE.search(text)
    if match is None:
        return None
    return float(match.group(0).replace(",", ""))


def extract_all_numbers(text: str) -> list[float]:
    return [float(m.group(0).replace(",", "")) for m in _NUMBER_RE.finditer(text)]


def _leading_int(text: str) -> int | None:
    value = extract_number(text)
    if value is None or value != int(value):
        return None
    return int(value)


def detect_kind(golds: list[str]) -> str:
    """year: every gold is a bare integer in [1000, 2999]; numeric: every
    gold starts with a number; otherwise text."""
    if not golds:
        raise ValidationError("empty gold list")
    normed = [normalize(g) for g in golds]
    if all(re.fullmatch(r"[1-2]\d{3}", g) for g in normed):
        return "year"
    if all(g and _NUMBER_RE.match(g.split()[0] if g.split() else "") for g in normed):
        return "numeric"
    return "text"


@dataclass
class SoftMatchResult:
    value: int
    parse_failure: bool = False


def soft_match_verbose(prediction: str, golds: list[str], gold_kind: str | None = None) -> SoftMatchResult:
    """Soft match with a parse-failure flag instead of an exception."""
    if not golds:
        raise ValidationError("empty gold list")
    kind = gold_kind or detect_kind(golds)
    if kind not in KINDS:
        raise ValidationError(f"unknown gold kind {kind!r}")

    if kind == "text":
        return SoftMatchResult(exact_match(prediction, golds))

    if kind == "year":
        pred = _leading_int(prediction)
        if pred is None:
            return SoftMatchResult(0, parse_failure=True)
        for gold in golds:
            g = _leading_int(gold)
            if g is not None and abs(pred - g) <= 1:
                return SoftMatchResult(1)
        return SoftMatchResult(0)

    pred = extract_number(prediction)
    if pred is None:
        return SoftMatchResult(0, parse_failure=True)
    for gold in golds:
        g = extract_number(gold)
        if g is None:
            continue
        if g == 0.0:
            if pred == 0.0:
                return SoftMatchResult(1)
        elif abs(pred - g) <= 0.1 * abs(g):
            return SoftMatchResult(1)
    return SoftMatchResult(0)


def soft_match(prediction: str, golds: list[str], gold_kind: str | None = None) -> int:
    return soft_match_verbose(prediction, golds, gold_kind).value


@dataclass
class AnswerRecord:
    question_id: str
    prediction: str
    gold: list[str]
    gold_kind: str | None = None  # None = auto-detect

    def validate(self) -> None:
        if not self.gold:
            raise ValidationError(f"question {self.question_id!r}: empty gold list")
        if self.gold_kind is not None and self.gold_kind not in KINDS:
            raise ValidationError(f"question {self.question_id!r}: bad kind {self.gold_kind!r}")


@dataclass
class AnswerTarget:
    """Gold answers (and target entity) for one question."""

    question_id: str
    entity_id: str
    golds: list[str]
    kind: str | None = None


def _tokens_contain(haystack: list[str], needle: list[str]) -> bool:
    if not needle:
        return False
    n = len(needle)
    return any(haystack[i : i + n] == needle for i in range(len(haystack) - n + 1))


def qrels_from_answers(passages, targets: dict[str, AnswerTarget]):
    """Answer-presence relevance: a passage is relevant for a question iff it
    belongs to the target entity's article and contains a gold answer.

    Text golds must appear as a token-boundary substring of the normalized
    passage; year/numeric golds match any numeric token of the passage under
    the soft rules. Questions whose entity yields no relevant passage are
    omitted (callers can diff against targets to find them).
    """
    from .evalir import Qrels

    by_entity: dict[str, list] = {}
    for passage in passages:
        by_entity.setdefault(passage.entity_id, []).append(passage)

    qrels = Qrels()
    for qid, target in targets.items():
        if not target.entity_id:
            raise ValidationError(f"question {qid!r} has no target entity")
        if not target.golds:
            raise ValidationError(f"question {qid!r} has no gold answers")
        kind = target.kind or detect_kind(target.golds)
        relevant = {}
        for passage in by_entity.get(target.entity_id, []):
            if _passage_matches(passage.text, target.golds, kind):
                relevant[passage.passage_id] = 1
        if relevant:
            qrels.judgments[qid] = relevant
    return qrels


def _passage_matches(text: str, golds: list[str], kind: str) -> bool:
    if kind == "text":
        tokens = normalize(text).split()
        return any(_tokens_contain(tokens, normalize(g).split()) for g in golds)
    numbers = extract_all_numbers(text)  # raw scan keeps signs and decimals
    for gold in golds:
        g = extract_number(gold)
        if g is None:
            continue
        for value in numbers:
            if kind == "year":
                if value == int(value) and g == int(g) and abs(value - g) <= 1:
                    return True
            elif g == 0.0:
                if value == 0.0:
                    return True
            elif abs(value - g) <= 0.1 * abs(g):
                return True
    return False


@dataclass
class AnswerEvaluation:
    per_question: dict[str, dict[str, float]] = field(default_factory=dict)
    parse_failures: list[str] = field(default_factory=list)

    @property
    def aggregate(self) -> dict[str, float]:
        if not self.per_question:
            return {"EM": 0.0, "F1": 0.0, "SoftMatch": 0.0}
        n = len(self.per_question)
        return {
            key: sum(row[key] for row in self.per_question.values()) / n
            for key in ("EM", "F1", "SoftMatch")
        }


def evaluate_answers(records: list[AnswerRecord]) -> AnswerEvaluation:
    result = AnswerEvaluation()
    for record in records:
        record.validate()
        soft = soft_match_verbose(record.prediction, record.gold, record.gold_kind)
        if soft.parse_failure:
            result.parse_failures.append(record.question_id)
        result.per_question[record.question_id] = {
            "EM": float(exact_match(record.prediction, record.gold)),
            "F1": token_f1(record.prediction, record.gold),
            "SoftMatch": float(soft.value),
        }
    return result


def read_predictions(path) -> dict[str, str]:
    """Delimited predictions: ``question_id<TAB>prediction`` per line."""
    preds = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t", 1)
        if len(parts) != 2:
            raise FormatError(f"{path}:{lineno}: expected 'question_id<TAB>prediction'")
        qid, text = parts
        if qid in preds:
            raise FormatError(f"{path}:{lineno}: duplicate question id {qid!r}")
        preds[qid] = text
    return preds


def read_targets(path) -> dict[str, AnswerTarget]:
    """JSONL targets: question_id, entity_id, golds, optional kind."""
    targets = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{lineno}: bad JSON ({exc})") from None
        try:
            target = AnswerTarget(
                question_id=raw["question_id"],
                entity_id=raw.get("entity_id", ""),
                golds=list(raw["golds"]),
                kind=raw.get("kind"),
            )
        except KeyError as exc:
            raise FormatError(f"{path}:{lineno}: missing field {exc}") from None
        if target.question_id in targets:
            raise FormatError(f"{path}:{lineno}: duplicate question id {target.question_id!r}")
        targets[target.question_id] = target
    return targets
