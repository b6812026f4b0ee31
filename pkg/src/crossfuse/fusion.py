"""Score-level fusion of retrieval channels.

Fused score per document is a weighted sum of per-channel scores after an
optional per-query normalization. Candidates are the union of each channel's
top-``candidate_pool_k`` documents; a document missing from one channel's
pool takes that channel's per-query post-normalization minimum (0 under
min-max), the most conservative imputation. Weights are tuned by exhaustive
search over the simplex grid of step multiples summing to 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError, ValidationError
from .runs import Channel, ChannelScores, RetrievalRun

NORMALIZATIONS = ("none", "min_max", "z_score")


@dataclass
class FusionSpec:
    """Channel weights plus fusion behavior knobs.

    normalization applies per query per channel; candidate_pool_k caps how
    deep each channel's list is taken before the union (None = whole list).
    """

    weights: dict[Channel, float]
    normalization: str = "none"
    candidate_pool_k: int | None = None

    def validate(self) -> None:
        if not self.weights:
            raise ConfigError("no channel weights given")
        if any(w < 0 for w in self.weights.values()):
            raise ConfigError("weights must be >= 0")
        if not any(w > 0 for w in self.weights.values()):
            raise ConfigError("at least one weight must be > 0")
        if self.normalization not in NORMALIZATIONS:
            raise ConfigError(
                f"unknown normalization {self.normalization!r}, expected one of {NORMALIZATIONS}"
            )
        if self.candidate_pool_k is not None and self.candidate_pool_k < 1:
            raise ConfigError("candidate_pool_k must be >= 1")


def default_normalization(channels) -> str:
    """'none' while all channels are cosine-scaled; 'min_max' once text joins."""
    return "min_max" if Channel.TEXT in set(channels) else "none"


def load_fusion_spec(path) -> FusionSpec:
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict) or "weights" not in raw:
        raise ConfigError(f"{path}: expected a mapping with a 'weights' key")
    try:
        weights = {Channel(name): float(w) for name, w in raw["weights"].items()}
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    spec = FusionSpec(
        weights=weights,
        normalization=raw.get("normalization", default_normalization(weights)),
        candidate_pool_k=raw.get("candidate_pool_k"),
    )
    spec.validate()
    return spec


def save_fusion_spec(spec: FusionSpec, path) -> None:
    doc = {
        "weights": {ch.value: float(w) for ch, w in sorted(spec.weights.items(), key=lambda p: p[0].value)},
        "normalization": spec.normalization,
        "candidate_pool_k": spec.candidate_pool_k,
    }
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False), encoding="utf-8")


def _normalize_pool(scores: dict[str, float], scheme: str) -> tuple[dict[str, float], float]:
    """Normalize one query/channel pool; returns (normalized, imputed minimum)."""
    if not scores:
        return {}, 0.0
    values = list(scores.values())
    if scheme == "none":
        out = dict(scores)
    elif scheme == "min_max":
        lo, hi = min(values), max(values)
        if hi == lo:
            # degenerate pool: uninformative channel maps to all zeros
            out = {d: 0.0 for d in scores}
        else:
            out = {d: (s - lo) / (hi - lo) for d, s in scores.items()}
    elif scheme == "z_score":
        n = len(values)
        mean = sum(values) / n
        var = sum((v - mean) ** 2 for v in values) / n
        if var == 0.0:
            out = {d: 0.0 for d in scores}
        else:
            std = var ** 0.5
            out = {d: (s - mean) / std for d, s in scores.items()}
    else:
        raise ConfigError(f"unknown normalization {scheme!r}")
    return out, min(out.values())


def _group_by_query(
    runs: dict[Channel, list[ChannelScores]]
) -> tuple[list[str], dict[Channel, dict[str, list[tuple[str, float]]]]]:
    by_channel: dict[Channel, dict[str, list[tuple[str, float]]]] = {}
    for channel, scores in runs.items():
        per_query: dict[str, list[tuple[str, float]]] = {}
        for cs in scores:
            if cs.query_id in per_query:
                raise ValidationError(f"channel {channel.value}: duplicate query {cs.query_id!r}")
            per_query[cs.query_id] = cs.ranked
        by_channel[channel] = per_query
    keysets = {ch: set(m.keys()) for ch, m in by_channel.items()}
    first = next(iter(runs))
    for ch, keys in keysets.items():
        if keys != keysets[first]:
            raise ValidationError(
                f"channels {first.value} and {ch.value} rank different query sets"
            )
    query_order = [cs.query_id for cs in runs[first]]
    return query_order, by_channel


def fuse(runs: dict[Channel, list[ChannelScores]], spec: FusionSpec, tag: str | None = None) -> RetrievalRun:
    """Weighted per-query fusion of channel rankings into one run.

    Requires weights for exactly the provided channels. Final order is by
    fused score, ties broken by ascending doc id.
    """
    spec.validate()
    if not runs:
        raise ValidationError("no channel runs to fuse")
    if set(spec.weights) != set(runs):
        missing = {c.value for c in set(runs) - set(spec.weights)}
        extra = {c.value for c in set(spec.weights) - set(runs)}
        raise ConfigError(
            f"weights must cover exactly the fused channels (missing={sorted(missing)}, unknown={sorted(extra)})"
        )

    query_order, by_channel = _group_by_query(runs)
    channels = sorted(runs.keys(), key=lambda c: c.value)
    fused = RetrievalRun(tag=tag or "fused-" + "+".join(c.value for c in channels))

    for qid in query_order:
        pools: dict[Channel, dict[str, float]] = {}
        for ch in channels:
            ranked = by_channel[ch][qid]
            if spec.candidate_pool_k is not None:
                ranked = ranked[: spec.candidate_pool_k]
            pools[ch] = dict(ranked)
        candidates = set()
        for pool in pools.values():
            candidates.update(pool)
        if not candidates:
            raise ValidationError(f"query {qid!r}: empty candidate set")

        totals = {doc: 0.0 for doc in candidates}
        for ch in channels:
            normed, floor = _normalize_pool(pools[ch], spec.normalization)
            weight = spec.weights[ch]
            for doc in candidates:
                totals[doc] += weight * normed.get(doc, floor)
        fused.results[qid] = sorted(totals.items(), key=lambda p: (-p[1], p[0]))
    return fused


@dataclass
class EntityPassageMap:
    """Ordered passages per entity; each passage belongs to exactly one entity."""

    passages: dict[str, list[str]] = field(default_factory=dict)

    def validate(self) -> None:
        seen: dict[str, str] = {}
        for entity, plist in self.passages.items():
            if not plist:
                raise ValidationError(f"entity {entity!r} has no passages")
            for pid in plist:
                if pid in seen:
                    raise ValidationError(
                        f"passage {pid!r} mapped to both {seen[pid]!r} and {entity!r}"
                    )
                seen[pid] = entity


def write_entity_passage_map(epmap: EntityPassageMap, path) -> None:
    lines = [f"{e}\t{p}" for e, plist in epmap.passages.items() for p in plist]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_entity_passage_map(path) -> EntityPassageMap:
    epmap = EntityPassageMap()
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            entity, passage = line.split("\t")
        except ValueError:
            raise ValidationError(f"{path}:{lineno}: expected 'entity<TAB>passage'") from None
        epmap.passages.setdefault(entity, []).append(passage)
    epmap.validate()
    return epmap


def broadcast_to_passages(entity_run: RetrievalRun, epmap: EntityPassageMap) -> RetrievalRun:
    """Expand entity scores onto their passages (all passages inherit the score).

    Output order: score desc, then entity id asc, then the map's passage order.
    """
    out = RetrievalRun(tag=entity_run.tag + "-passages")
    for qid, ranked in entity_run.results.items():
        for entity, _ in ranked:
            if entity not in epmap.passages:
                raise ValidationError(f"entity {entity!r} not in passage map")
        expanded = []
        for entity, score in sorted(ranked, key=lambda p: (-p[1], p[0])):
            expanded.extend((pid, score) for pid in epmap.passages[entity])
        out.results[qid] = expanded
    return out


def simplex_grid(n_channels: int, step: float) -> list[tuple[float, ...]]:
    """All weight vectors with entries that are multiples of step summing to 1.

    Enumerated in lexicographic order. step must divide 1 within 1e-9.
    """
    if not 0 < step <= 0.5:
        raise ConfigError(f"step must be in (0, 0.5], got {step}")
    m = round(1.0 / step)
    if abs(m * step - 1.0) > 1e-9:
        raise ConfigError(f"step {step} does not divide 1")

    grid: list[tuple[float, ...]] = []

    def rec(prefix: list[int], remaining: int, slots: int) -> None:
        if slots == 1:
            grid.append(tuple((k / m) for k in prefix + [remaining]))
            return
        for k in range(remaining + 1):
            rec(prefix + [k], remaining - k, slots - 1)

    rec([], m, n_channels)
    return grid


def grid_search_weights(
    runs: dict[Channel, list[ChannelScores]],
    qrels,
    step: float = 0.05,
    metric: str = "MRR",
    normalization: str | None = None,
    candidate_pool_k: int | None = None,
    cutoff: int = 1000,
) -> tuple[dict[Channel, float], float]:
    """Exhaustive simplex grid search of fusion weights.

    Maximizes the requested metric over the grid; ties go to the
    lexicographically smallest weight vector in channel-name order. Returns
    (weights, achieved metric).
    """
    from . import evalir  # local import: evalir depends on runs only

    if len(runs) < 2:
        raise ConfigError("grid search needs at least 2 channels")
    if not qrels.judgments:
        raise ValidationError("empty qrels")
    metric = metric.upper()
    if metric not in ("MRR", "P@1"):
        raise ConfigError(f"metric must be MRR or P@1, got {metric!r}")
    if normalization is None:
        normalization = default_normalization(runs)

    channels = sorted(runs.keys(), key=lambda c: c.value)
    best_weights: tuple[float, ...] | None = None
    best_value = -1.0
    for point in simplex_grid(len(channels), step):
        weights = dict(zip(channels, point))
        spec = FusionSpec(weights=weights, normalization=normalization, candidate_pool_k=candidate_pool_k)
        fused = fuse(runs, spec)
        if metric == "MRR":
            report = evalir.mrr(fused, qrels, cutoff=cutoff)
        else:
            report = evalir.precision_at(fused, qrels, k=1)
        # grid is lexicographic, so strict > keeps the smallest tied vector
        if report.aggregate > best_value:
            best_value = report.aggregate
            best_weights = point
    assert best_weights is not None
    return dict(zip(channels, best_weights)), best_value
