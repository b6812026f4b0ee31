"""Exact top-k cosine search within one channel.

Both matrices must be L2-normalized so dot product equals cosine. Search is
exhaustive (no approximation): results match a naive full sort, with ties
broken by ascending doc id for reproducible runs. Scores are computed in
float64 regardless of the storage dtype.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .embedstore import ChannelRole, EmbeddingMatrix
from .errors import ValidationError
from .runs import Channel, ChannelScores

# Role pairs whose channel can be inferred without an explicit override.
_CHANNEL_BY_ROLES = {
    (ChannelRole.QUERY_IMAGE, ChannelRole.PASSAGE_IMAGE): Channel.MONO_IMAGE,
    (ChannelRole.QUERY_IMAGE, ChannelRole.ENTITY_NAME): Channel.CROSS_IMAGE_TEXT,
    (ChannelRole.QUERY_TEXT, ChannelRole.PASSAGE_TEXT): Channel.TEXT,
}


def infer_channel(queries: EmbeddingMatrix, corpus: EmbeddingMatrix) -> Channel:
    try:
        return _CHANNEL_BY_ROLES[(queries.role, corpus.role)]
    except KeyError:
        raise ValidationError(
            f"no channel for role pair ({queries.role.value}, {corpus.role.value}); "
            "pass channel explicitly"
        ) from None


def _check_pair(queries: EmbeddingMatrix, corpus: EmbeddingMatrix) -> None:
    if queries.dim != corpus.dim:
        raise ValidationError(f"dim mismatch: queries {queries.dim} vs corpus {corpus.dim}")
    if not queries.normalized or not corpus.normalized:
        raise ValidationError("both matrices must be L2-normalized before search")


def topk(
    queries: EmbeddingMatrix,
    corpus: EmbeddingMatrix,
    k: int,
    channel: Channel | None = None,
) -> list[ChannelScores]:
    """Exact top-k by dot product for every query row.

    Ties are broken by ascending doc id, so permuting corpus rows does not
    change the output. Returns one ChannelScores per query, in query order.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    _check_pair(queries, corpus)
    if channel is None:
        channel = infer_channel(queries, corpus)

    k = min(k, corpus.count)
    # tie_rank[i] = position of corpus id i in lexicographic id order
    order = sorted(range(corpus.count), key=lambda i: corpus.ids[i])
    tie_rank = np.empty(corpus.count, dtype=np.int64)
    tie_rank[order] = np.arange(corpus.count, dtype=np.int64)

    q64 = np.ascontiguousarray(queries.data, dtype=np.float64)
    c64 = np.ascontiguousarray(corpus.data, dtype=np.float64)
    idx, scores = kernels.topk_dot(q64, c64, k, tie_rank)

    out = []
    for qi, qid in enumerate(queries.ids):
        ranked = [(corpus.ids[j], float(scores[qi, r])) for r, j in enumerate(idx[qi])]
        out.append(ChannelScores(query_id=qid, ranked=ranked, channel=channel))
    return out


def score_pairs(
    queries: EmbeddingMatrix,
    corpus: EmbeddingMatrix,
    pairs: list[tuple[str, str]],
) -> list[float]:
    """Exact dot product for explicit (query_id, doc_id) pairs, order-preserving."""
    _check_pair(queries, corpus)
    out = []
    for qid, doc_id in pairs:
        q = queries.data[queries.index_of(qid)].astype(np.float64)
        d = corpus.data[corpus.index_of(doc_id)].astype(np.float64)
        out.append(float(q @ d))
    return out
