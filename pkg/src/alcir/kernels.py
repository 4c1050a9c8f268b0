"""Hot loops shared by retrieval, evaluation and preprocessing.

Every kernel exists twice: a numba loop (``*_nb``) and a vectorised numpy
version (``*_np``). The public name is bound to one of them at import time
according to :data:`alcir._accel.USE_NUMBA`. Both are exported so the test
suite and ``benchmarks/bench_kernels.py`` can compare them directly.

Ties in any ranking are broken by row index ascending. Callers store rows in
item_id order so this is the item_id tie-break.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

__all__ = [
    "cosine_scores",
    "target_ranks",
    "top_k",
    "tally",
    "equal_depth_chunks",
]


# --------------------------------------------------------------------------
# cosine scores: queries (q, d) against candidates (n, d)


def cosine_scores_np(queries, cands, cand_norms):
    qn = np.sqrt(np.einsum("ij,ij->i", queries, queries))
    dots = queries @ cands.T
    return dots / (qn[:, None] * cand_norms[None, :])


@njit
def cosine_scores_nb(queries, cands, cand_norms):
    q, d = queries.shape
    n = cands.shape[0]
    out = np.empty((q, n))
    for a in range(q):
        qn = 0.0
        for t in range(d):
            qn += queries[a, t] * queries[a, t]
        qn = np.sqrt(qn)
        for b in range(n):
            acc = 0.0
            for t in range(d):
                acc += queries[a, t] * cands[b, t]
            out[a, b] = acc / (qn * cand_norms[b])
    return out


# --------------------------------------------------------------------------
# 1-based rank of one target column per row; ties go to the lower index


def target_ranks_np(scores, targets):
    rows = np.arange(scores.shape[0])
    ts = scores[rows, targets][:, None]
    cols = np.arange(scores.shape[1])[None, :]
    better = (scores > ts) | ((scores == ts) & (cols < targets[:, None]))
    return better.sum(axis=1).astype(np.int64) + 1


@njit
def target_ranks_nb(scores, targets):
    q, n = scores.shape
    out = np.empty(q, dtype=np.int64)
    for a in range(q):
        t = targets[a]
        ts = scores[a, t]
        r = 1
        for b in range(n):
            s = scores[a, b]
            if s > ts or (s == ts and b < t):
                r += 1
        out[a] = r
    return out


# --------------------------------------------------------------------------
# indices of the k best entries of a score vector, best first


def top_k_np(scores, k):
    k = min(k, scores.shape[0])
    order = np.lexsort((np.arange(scores.shape[0]), -scores))
    return order[:k].astype(np.int64)


@njit
def top_k_nb(scores, k):
    n = scores.shape[0]
    if k > n:
        k = n
    idx = np.empty(k, dtype=np.int64)
    filled = 0
    for b in range(n):
        s = scores[b]
        # lower index wins ties, so b only enters when strictly better
        if filled == k:
            if k == 0 or not s > scores[idx[k - 1]]:
                continue
            pos = k - 1
        else:
            pos = filled
            filled += 1
        while pos > 0 and s > scores[idx[pos - 1]]:
            idx[pos] = idx[pos - 1]
            pos -= 1
        idx[pos] = b
    return idx


# --------------------------------------------------------------------------
# occurrence counts of integer codes in [0, n)


def tally_np(codes, n):
    return np.bincount(codes, minlength=n).astype(np.int64)


@njit
def tally_nb(codes, n):
    out = np.zeros(n, dtype=np.int64)
    for c in codes:
        out[c] += 1
    return out


# --------------------------------------------------------------------------
# equal-depth chunk ids for an ascending value vector; equal values share
# the chunk of their first occurrence


def equal_depth_chunks_np(sorted_values, bins):
    n = sorted_values.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    starts = np.ones(n, dtype=bool)
    starts[1:] = sorted_values[1:] != sorted_values[:-1]
    first = np.maximum.accumulate(np.where(starts, np.arange(n), 0))
    return (first * bins) // n


@njit
def equal_depth_chunks_nb(sorted_values, bins):
    n = sorted_values.shape[0]
    out = np.empty(n, dtype=np.int64)
    first = 0
    for i in range(n):
        if i > 0 and sorted_values[i] != sorted_values[i - 1]:
            first = i
        out[i] = (first * bins) // n
    return out


if USE_NUMBA:
    cosine_scores = cosine_scores_nb
    target_ranks = target_ranks_nb
    top_k = top_k_nb
    tally = tally_nb
    equal_depth_chunks = equal_depth_chunks_nb
else:
    cosine_scores = cosine_scores_np
    target_ranks = target_ranks_np
    top_k = top_k_np
    tally = tally_np
    equal_depth_chunks = equal_depth_chunks_np
