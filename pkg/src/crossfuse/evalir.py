"""IR metrics over runs and qrels, plus paired randomization significance.

The query universe is the qrels: queries absent from a run score 0 (and are
reported), run-only queries are ignored. All metrics are means of per-query
values in [0, 1].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .runs import RetrievalRun


@dataclass
class Qrels:
    """query_id -> {doc_id: grade >= 1}."""

    judgments: dict[str, dict[str, int]] = field(default_factory=dict)

    def relevant(self, qid: str) -> set:
        return set(self.judgments.get(qid, ()))

    def validate(self) -> None:
        for qid, docs in self.judgments.items():
            if not docs:
                raise ValidationError(f"query {qid!r} has no relevant documents")
            for doc, grade in docs.items():
                if grade < 1:
                    raise ValidationError(f"query {qid!r} doc {doc!r}: grade {grade} < 1")


def read_qrels(path) -> Qrels:
    """Parse TREC qrels (``qid 0 docid grade``).

    Grade-0 lines are judged-nonrelevant and dropped; a query whose lines are
    all grade 0 is rejected, as are negative grades.
    """
    path = Path(path)
    qrels = Qrels()
    seen_queries = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4:
            raise FormatError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
        qid, _, doc_id, grade_s = parts
        try:
            grade = int(grade_s)
        except ValueError:
            raise FormatError(f"{path}:{lineno}: bad grade {grade_s!r}") from None
        if grade < 0:
            raise ValidationError(f"{path}:{lineno}: negative grade {grade}")
        if qid not in qrels.judgments:
            qrels.judgments[qid] = {}
            seen_queries.append(qid)
        if grade >= 1:
            qrels.judgments[qid][doc_id] = grade
    empty = [q for q in seen_queries if not qrels.judgments[q]]
    if empty:
        raise ValidationError(f"{path}: queries with no relevant documents: {empty[:5]}")
    qrels.validate()
    return qrels


def write_qrels(qrels: Qrels, path) -> None:
    lines = [
        f"{qid} 0 {doc} {grade}"
        for qid, docs in qrels.judgments.items()
        for doc, grade in docs.items()
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


@dataclass
class MetricReport:
    metric: str
    per_query: dict[str, float]
    aggregate: float
    run_tag: str = ""
    cutoff: int | None = None
    missing_queries: list[str] = field(default_factory=list)
    ignored_queries: list[str] = field(default_factory=list)


def _report(metric: str, values: dict[str, float], run: RetrievalRun, qrels: Qrels, cutoff) -> MetricReport:
    aggregate = sum(values.values()) / len(values) if values else 0.0
    return MetricReport(
        metric=metric,
        per_query=values,
        aggregate=aggregate,
        run_tag=run.tag,
        cutoff=cutoff,
        missing_queries=sorted(set(qrels.judgments) - set(run.results)),
        ignored_queries=sorted(set(run.results) - set(qrels.judgments)),
    )


def _check(run: RetrievalRun, qrels: Qrels) -> None:
    if not run.results:
        raise ValidationError("empty run")
    qrels.validate()


def mrr(run: RetrievalRun, qrels: Qrels, cutoff: int = 1000) -> MetricReport:
    """Mean reciprocal rank of the first relevant document within the cutoff."""
    _check(run, qrels)
    values = {}
    for qid, docs in qrels.judgments.items():
        rr = 0.0
        for rank, (doc_id, _) in enumerate(run.results.get(qid, [])[:cutoff], start=1):
            if doc_id in docs:
                rr = 1.0 / rank
                break
        values[qid] = rr
    return _report(f"MRR@{cutoff}", values, run, qrels, cutoff)


def precision_at(run: RetrievalRun, qrels: Qrels, k: int = 1) -> MetricReport:
    """Fraction of the top-k that is relevant."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    _check(run, qrels)
    values = {}
    for qid, docs in qrels.judgments.items():
        top = [doc for doc, _ in run.results.get(qid, [])[:k]]
        values[qid] = sum(1 for doc in top if doc in docs) / k
    return _report(f"P@{k}", values, run, qrels, k)


def recall_at(run: RetrievalRun, qrels: Qrels, k: int = 10) -> MetricReport:
    """Fraction of the relevant set found in the top-k."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    _check(run, qrels)
    values = {}
    for qid, docs in qrels.judgments.items():
        top = [doc for doc, _ in run.results.get(qid, [])[:k]]
        values[qid] = sum(1 for doc in top if doc in docs) / len(docs)
    return _report(f"R@{k}", values, run, qrels, k)


def success_at(run: RetrievalRun, qrels: Qrels, k: int = 10) -> MetricReport:
    """1 if any relevant document appears in the top-k."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    _check(run, qrels)
    values = {}
    for qid, docs in qrels.judgments.items():
        top = [doc for doc, _ in run.results.get(qid, [])[:k]]
        values[qid] = 1.0 if any(doc in docs for doc in top) else 0.0
    return _report(f"S@{k}", values, run, qrels, k)


METRICS = {"mrr": mrr, "p": precision_at, "r": recall_at, "s": success_at}


def fisher_randomization(
    per_query_a: list[float],
    per_query_b: list[float],
    rounds: int = 100_000,
    seed: int = 0,
    mode: str = "auto",
) -> float:
    """Two-sided paired randomization test on |mean(a) - mean(b)|.

    Each pair is swapped with probability 1/2. Exhaustive over all 2^n sign
    assignments when n <= 20 (mode 'auto') or when forced; Monte-Carlo
    otherwise, with add-one smoothing p = (r+1)/(R+1). Symmetric in (a, b)
    and deterministic given the seed.
    """
    a = np.asarray(per_query_a, dtype=np.float64)
    b = np.asarray(per_query_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError(f"paired vectors must have equal length, got {a.shape} vs {b.shape}")
    n = a.size
    if n == 0:
        raise ValidationError("empty per-query vectors")
    if mode not in ("auto", "exhaustive", "montecarlo"):
        raise ValidationError(f"unknown mode {mode!r}")
    if mode == "auto":
        mode = "exhaustive" if n <= 20 else "montecarlo"
    if mode == "exhaustive" and n > 30:
        raise ValidationError(f"exhaustive mode infeasible for n={n}")

    diff = a - b
    observed = abs(diff.mean())
    # tolerate last-bit noise when a permuted statistic ties the observed one
    threshold = observed - 1e-12

    if mode == "exhaustive":
        total = 1 << n
        hits = 0
        bits = np.arange(n, dtype=np.uint64)
        for start in range(0, total, 65536):
            patterns = np.arange(start, min(start + 65536, total), dtype=np.uint64)
            signs = 1.0 - 2.0 * ((patterns[:, None] >> bits) & 1)
            stats = np.abs((signs * diff).mean(axis=1))
            hits += int((stats >= threshold).sum())
        return hits / total

    if rounds < 1:
        raise ValidationError(f"rounds must be >= 1, got {rounds}")
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < rounds:
        block = min(rounds - done, 65536)
        signs = 1.0 - 2.0 * (rng.random((block, n)) < 0.5)
        stats = np.abs((signs * diff).mean(axis=1))
        hits += int((stats >= threshold).sum())
        done += block
    return (hits + 1) / (rounds + 1)


def write_report(reports: list[MetricReport], path) -> None:
    """Machine-readable report: one row per query per metric, plus aggregates."""
    doc = {
        report.metric: {
            "aggregate": report.aggregate,
            "run_tag": report.run_tag,
            "cutoff": report.cutoff,
            "per_query": report.per_query,
            "missing_queries": report.missing_queries,
            "ignored_queries": report.ignored_queries,
        }
        for report in reports
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def format_table(reports: list[MetricReport]) -> str:
    lines = [f"{'metric':<10} {'mean':>10} {'queries':>8} {'missing':>8}"]
    for r in reports:
        lines.append(
            f"{r.metric:<10} {r.aggregate:>10.4f} {len(r.per_query):>8d} {len(r.missing_queries):>8d}"
        )
    return "\n".join(lines)
