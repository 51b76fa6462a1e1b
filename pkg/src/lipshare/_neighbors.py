"""Exact brute-force nearest-neighbour kernels shared by the gate and the policy.

Squared distances are accumulated per coordinate in index order, so a query's
result does not depend on how queries are batched.
"""
import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def _sq_dist_row(x, ref_t, acc):
    d, n = ref_t.shape
    acc[:] = 0.0
    for k in range(d):
        row = ref_t[k]
        xk = x[k]
        for j in range(n):
            diff = row[j] - xk
            acc[j] += diff * diff


@numba.njit(cache=True, nogil=True)
def _top_k(acc, k):
    """Indices of the k smallest entries, ties to the lower index, sorted by distance."""
    idx = np.full(k, -1, dtype=np.int64)
    dist = np.full(k, np.inf)
    filled = 0
    for j in range(acc.shape[0]):
        v = acc[j]
        if filled < k or v < dist[k - 1]:
            pos = min(filled, k - 1)
            while pos > 0 and dist[pos - 1] > v:
                dist[pos] = dist[pos - 1]
                idx[pos] = idx[pos - 1]
                pos -= 1
            dist[pos] = v
            idx[pos] = j
            if filled < k:
                filled += 1
    return idx, dist


@numba.njit(parallel=True, cache=True, nogil=True)
def knn_indices(queries, ref_t, k):
    m = queries.shape[0]
    n = ref_t.shape[1]
    out = np.empty((m, k), dtype=np.int64)
    for i in numba.prange(m):
        acc = np.empty(n)
        _sq_dist_row(queries[i], ref_t, acc)
        idx, _ = _top_k(acc, k)
        out[i] = idx
    return out


@numba.njit(parallel=True, cache=True, nogil=True)
def knn_vote(queries, ref_t, labels, k):
    """Fail-safe majority vote over binary labels.

    Neighbours tied with the k-th distance are resolved pessimistically: label
    0 fills the remaining slots first. Returns 1 only on a strict majority.
    """
    m = queries.shape[0]
    n = ref_t.shape[1]
    out = np.zeros(m, dtype=np.int64)
    for i in numba.prange(m):
        acc = np.empty(n)
        _sq_dist_row(queries[i], ref_t, acc)
        _, dist = _top_k(acc, k)
        kth = dist[k - 1]
        inside_ones = 0
        inside = 0
        tie_zeros = 0
        for j in range(n):
            v = acc[j]
            if v < kth:
                inside += 1
                inside_ones += labels[j]
            elif v == kth:
                if labels[j] == 0:
                    tie_zeros += 1
        slots = k - inside
        ones = inside_ones + max(0, slots - tie_zeros)
        if 2 * ones > k:
            out[i] = 1
    return out


def as_ref(ref):
    """Transpose reference points to the ``(d, n)`` layout the kernels expect."""
    return np.ascontiguousarray(np.asarray(ref, dtype=float).T)
