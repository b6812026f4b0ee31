"""Top-k dot-product kernel with a compiled fast path.

The compiled Cython kernel (``crossfuse._kernels``) fuses scoring and
selection so the full query-by-corpus score matrix is never materialized.
The pure-NumPy fallback computes the matrix and lexsorts it. Both paths are
sequential over queries and deterministic regardless of thread count; they
order candidates by (score desc, tie_rank asc).

Set ``CROSSFUSE_NO_EXT=1`` to force the pure path. ``benchmarks/bench_topk.py``
compares the two.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from . import _kernels  # compiled extension, optional
except ImportError:  # pragma: no cover - depends on build
    _kernels = None

HAVE_COMPILED = _kernels is not None
USE_COMPILED = HAVE_COMPILED and os.environ.get("CROSSFUSE_NO_EXT", "") != "1"


def backend_name() -> str:
    return "compiled" if USE_COMPILED else "pure"


def topk_dot_pure(
    queries: np.ndarray, corpus: np.ndarray, k: int, tie_rank: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Full score matrix + row-wise lexsort. Returns (indices, scores), (n_q, k)."""
    scores = queries @ corpus.T
    ranks = np.broadcast_to(tie_rank, scores.shape)
    order = np.lexsort((ranks, -scores), axis=1)[:, :k]
    return order, np.take_along_axis(scores, order, axis=1)


def topk_dot_compiled(
    queries: np.ndarray, corpus: np.ndarray, k: int, tie_rank: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    return _kernels.topk_dot(queries, corpus, k, tie_rank)


def topk_dot(
    queries: np.ndarray, corpus: np.ndarray, k: int, tie_rank: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Top-k corpus rows per query by dot product.

    Inputs must be C-contiguous float64; ``tie_rank`` is an int64 permutation
    rank used to break score ties (lower rank wins). k is capped at the
    corpus size by the caller.
    """
    if USE_COMPILED:
        return topk_dot_compiled(queries, corpus, k, tie_rank)
    return topk_dot_pure(queries, corpus, k, tie_rank)
