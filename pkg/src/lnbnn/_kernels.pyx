# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled search kernels.

Mirrors ``_fallback.py`` operation for operation: distances are summed
sequentially over dimensions, the frontier heap is ordered by
(key, node) and the result heap by (distance, index), so both backends
return bit-identical neighbors.
"""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, realloc, free, calloc

cnp.import_array()


cdef struct Frontier:
    double key
    double bound
    int node


cdef struct Query:
    Frontier* heap
    Py_ssize_t heap_size
    Py_ssize_t heap_cap
    double* res_dist
    long long* res_idx
    Py_ssize_t res_size
    Py_ssize_t k
    long long count
    long long budget
    int stamp
    int* visited


cdef inline bint frontier_less(Frontier* a, Frontier* b) nogil:
    return a.key < b.key or (a.key == b.key and a.node < b.node)


cdef int heap_push(Query* q, double key, double bound, int node) nogil:
    cdef Py_ssize_t i, parent
    cdef Frontier item, tmp
    cdef Frontier* grown
    if q.heap_size == q.heap_cap:
        grown = <Frontier*> realloc(q.heap, 2 * q.heap_cap * sizeof(Frontier))
        if grown == NULL:
            return -1
        q.heap = grown
        q.heap_cap *= 2
    item.key = key
    item.bound = bound
    item.node = node
    i = q.heap_size
    q.heap[i] = item
    q.heap_size += 1
    while i > 0:
        parent = (i - 1) >> 1
        if frontier_less(&q.heap[i], &q.heap[parent]):
            tmp = q.heap[i]
            q.heap[i] = q.heap[parent]
            q.heap[parent] = tmp
            i = parent
        else:
            break
    return 0


cdef Frontier heap_pop(Query* q) nogil:
    cdef Frontier top = q.heap[0]
    cdef Frontier tmp
    cdef Py_ssize_t i = 0, l, r, m
    q.heap_size -= 1
    q.heap[0] = q.heap[q.heap_size]
    while True:
        l = 2 * i + 1
        r = l + 1
        m = i
        if l < q.heap_size and frontier_less(&q.heap[l], &q.heap[m]):
            m = l
        if r < q.heap_size and frontier_less(&q.heap[r], &q.heap[m]):
            m = r
        if m == i:
            break
        tmp = q.heap[i]
        q.heap[i] = q.heap[m]
        q.heap[m] = tmp
        i = m
    return top


cdef inline bint result_greater(double da, long long ia, double db, long long ib) nogil:
    return da > db or (da == db and ia > ib)


cdef void result_offer(Query* q, double d, long long idx) nogil:
    # max-heap on (distance, index) holding the best k seen so far
    cdef Py_ssize_t i, parent, l, r, m
    cdef double td
    cdef long long ti
    if q.res_size < q.k:
        i = q.res_size
        q.res_size += 1
        q.res_dist[i] = d
        q.res_idx[i] = idx
        while i > 0:
            parent = (i - 1) >> 1
            if result_greater(q.res_dist[i], q.res_idx[i], q.res_dist[parent], q.res_idx[parent]):
                td = q.res_dist[i]; q.res_dist[i] = q.res_dist[parent]; q.res_dist[parent] = td
                ti = q.res_idx[i]; q.res_idx[i] = q.res_idx[parent]; q.res_idx[parent] = ti
                i = parent
            else:
                break
        return
    if not result_greater(q.res_dist[0], q.res_idx[0], d, idx):
        return
    q.res_dist[0] = d
    q.res_idx[0] = idx
    i = 0
    while True:
        l = 2 * i + 1
        r = l + 1
        m = i
        if l < q.k and result_greater(q.res_dist[l], q.res_idx[l], q.res_dist[m], q.res_idx[m]):
            m = l
        if r < q.k and result_greater(q.res_dist[r], q.res_idx[r], q.res_dist[m], q.res_idx[m]):
            m = r
        if m == i:
            break
        td = q.res_dist[i]; q.res_dist[i] = q.res_dist[m]; q.res_dist[m] = td
        ti = q.res_idx[i]; q.res_idx[i] = q.res_idx[m]; q.res_idx[m] = ti
        i = m


cdef inline bint pruned(Query* q, double bound) nogil:
    return q.res_size == q.k and bound > q.res_dist[0]


cdef int descend(Query* q, int node, double key, double bound,
                 const double[:, ::1] data, const double* x,
                 const int[::1] split_dim, const float[::1] split_val,
                 const int[::1] left, const int[::1] right,
                 const int[::1] leaf_lo, const int[::1] leaf_hi,
                 const int[::1] leaf_points) nogil:
    cdef int dim, near, far, p
    cdef Py_ssize_t j, t, d = data.shape[1]
    cdef double diff, sq, acc, u
    while split_dim[node] >= 0:
        dim = split_dim[node]
        diff = x[dim] - <double> split_val[node]
        if diff < 0:
            near = left[node]
            far = right[node]
        else:
            near = right[node]
            far = left[node]
        sq = diff * diff
        if not pruned(q, sq if sq > bound else bound):
            if heap_push(q, key + sq, sq if sq > bound else bound, far) != 0:
                return -1
        node = near
    if pruned(q, bound):
        return 0
    for j in range(leaf_lo[node], leaf_hi[node]):
        p = leaf_points[j]
        if q.visited[p] == q.stamp:
            continue
        q.visited[p] = q.stamp
        q.count += 1
        acc = 0.0
        for t in range(d):
            u = data[p, t] - x[t]
            acc = acc + u * u
        result_offer(q, acc, p)
        if q.count >= q.budget:
            return 0
    return 0


def sqdist_rows(const double[:, ::1] data, const double[::1] x):
    """Squared distance from ``x`` to every row of ``data``."""
    cdef Py_ssize_t n = data.shape[0], d = data.shape[1], i, t
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    cdef double acc, u
    with nogil:
        for i in range(n):
            acc = 0.0
            for t in range(d):
                u = data[i, t] - x[t]
                acc = acc + u * u
            ov[i] = acc
    return out


def forest_knn_batch(const double[:, ::1] data, const double[:, ::1] queries,
                     Py_ssize_t k, long long budget,
                     const int[::1] roots, const int[::1] split_dim, const float[::1] split_val,
                     const int[::1] left, const int[::1] right,
                     const int[::1] leaf_lo, const int[::1] leaf_hi,
                     const int[::1] leaf_points):
    """Best-bin-first k-NN over a forest for every row of ``queries``.

    Returns ``(indices, distances, checks)``; rows are sorted ascending and
    padded with -1 / inf when fewer than ``k`` points were examined.
    """
    cdef Py_ssize_t m = queries.shape[0], n = data.shape[0]
    cdef Py_ssize_t qi, i, t, j
    cdef cnp.ndarray[cnp.int64_t, ndim=2] out_idx = np.full((m, k), -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out_dist = np.full((m, k), np.inf, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out_checks = np.zeros(m, dtype=np.int64)
    cdef long long[:, ::1] oi = out_idx
    cdef double[:, ::1] od = out_dist
    cdef long long[::1] oc = out_checks
    cdef Query q
    cdef Frontier item
    cdef double td
    cdef long long ti
    cdef int failed = 0

    q.k = k
    q.budget = budget
    q.heap_cap = 64
    q.heap = <Frontier*> malloc(q.heap_cap * sizeof(Frontier))
    q.res_dist = <double*> malloc(k * sizeof(double))
    q.res_idx = <long long*> malloc(k * sizeof(long long))
    q.visited = <int*> calloc(n, sizeof(int))
    q.stamp = 0
    if q.heap == NULL or q.res_dist == NULL or q.res_idx == NULL or q.visited == NULL:
        free(q.heap); free(q.res_dist); free(q.res_idx); free(q.visited)
        raise MemoryError()
    try:
        with nogil:
            for qi in range(m):
                q.stamp += 1
                q.heap_size = 0
                q.res_size = 0
                q.count = 0
                for t in range(roots.shape[0]):
                    if q.count >= q.budget:
                        break
                    if descend(&q, roots[t], 0.0, 0.0, data, &queries[qi, 0], split_dim, split_val,
                               left, right, leaf_lo, leaf_hi, leaf_points) != 0:
                        failed = 1
                        break
                while failed == 0 and q.heap_size > 0 and q.count < q.budget:
                    item = heap_pop(&q)
                    if pruned(&q, item.bound):
                        continue
                    if descend(&q, item.node, item.key, item.bound, data, &queries[qi, 0], split_dim,
                               split_val, left, right, leaf_lo, leaf_hi, leaf_points) != 0:
                        failed = 1
                if failed:
                    break
                oc[qi] = q.count
                # heap-sort the result heap into ascending order
                j = q.res_size
                while j > 0:
                    od[qi, j - 1] = q.res_dist[0]
                    oi[qi, j - 1] = q.res_idx[0]
                    j -= 1
                    td = q.res_dist[j]; ti = q.res_idx[j]
                    q.res_size = j
                    if j > 0:
                        q.res_dist[0] = td
                        q.res_idx[0] = ti
                        _sift_down(&q)
    finally:
        free(q.heap); free(q.res_dist); free(q.res_idx); free(q.visited)
    if failed:
        raise MemoryError()
    return out_idx, out_dist, out_checks


cdef void _sift_down(Query* q) nogil:
    cdef Py_ssize_t i = 0, l, r, m
    cdef double td
    cdef long long ti
    while True:
        l = 2 * i + 1
        r = l + 1
        m = i
        if l < q.res_size and result_greater(q.res_dist[l], q.res_idx[l], q.res_dist[m], q.res_idx[m]):
            m = l
        if r < q.res_size and result_greater(q.res_dist[r], q.res_idx[r], q.res_dist[m], q.res_idx[m]):
            m = r
        if m == i:
            break
        td = q.res_dist[i]; q.res_dist[i] = q.res_dist[m]; q.res_dist[m] = td
        ti = q.res_idx[i]; q.res_idx[i] = q.res_idx[m]; q.res_idx[m] = ti
        i = m
