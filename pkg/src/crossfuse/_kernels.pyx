# cython: boundscheck=False, wraparound=False, cdivision=True
"""Fused score-and-select top-k kernel.

Scans the corpus once per query keeping a sorted (score desc, tie_rank asc)
candidate list of size k, so memory stays O(n_q * k) instead of the full
score matrix. Sequential by construction: results do not depend on thread
count.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef inline bint _better(double s_a, long r_a, double s_b, long r_b) nogil:
    # (s_a, r_a) ranks ahead of (s_b, r_b)?
    if s_a != s_b:
        return s_a > s_b
    return r_a < r_b


def topk_dot(double[:, ::1] queries, double[:, ::1] corpus, int k, long[::1] tie_rank):
    cdef Py_ssize_t n_q = queries.shape[0]
    cdef Py_ssize_t n_c = corpus.shape[0]
    cdef Py_ssize_t dim = queries.shape[1]
    if k > n_c:
        k = <int> n_c

    out_idx = np.empty((n_q, k), dtype=np.int64)
    out_scores = np.empty((n_q, k), dtype=np.float64)
    cdef long[:, ::1] idx_v = out_idx
    cdef double[:, ::1] score_v = out_scores

    cdef double[::1] top_s = np.empty(k, dtype=np.float64)
    cdef long[::1] top_r = np.empty(k, dtype=np.int64)
    cdef long[::1] top_i = np.empty(k, dtype=np.int64)

    cdef Py_ssize_t q, c, d, pos, shift
    cdef int filled
    cdef double s
    cdef long r

    with nogil:
        for q in range(n_q):
            filled = 0
            for c in range(n_c):
                s = 0.0
                for d in range(dim):
                    s += queries[q, d] * corpus[c, d]
                r = tie_rank[c]
                if filled == k and not _better(s, r, top_s[k - 1], top_r[k - 1]):
                    continue
                # find insertion point among current candidates
                pos = filled if filled < k else k - 1
                while pos > 0 and _better(s, r, top_s[pos - 1], top_r[pos - 1]):
                    pos -= 1
                shift = filled - 1 if filled == k else filled
                while shift > pos:
                    top_s[shift] = top_s[shift - 1]
                    top_r[shift] = top_r[shift - 1]
                    top_i[shift] = top_i[shift - 1]
                    shift -= 1
                top_s[pos] = s
                top_r[pos] = r
                top_i[pos] = c
                if filled < k:
                    filled += 1
            for pos in range(k):
                idx_v[q, pos] = top_i[pos]
                score_v[q, pos] = top_s[pos]

    return out_idx, out_scores
