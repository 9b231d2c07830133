"""Pure-Python versions of the search kernels in ``_kernels.pyx``.

Used when the compiled extension is unavailable or when
``LNBNN_PURE_PYTHON=1`` is set. Arithmetic order matches the compiled
code so both return identical neighbors.
"""

import heapq

import numpy as np


def sqdist_rows(data, x):
    # accumulate dimension by dimension: same rounding as the C loop
    acc = np.zeros(data.shape[0])
    for t in range(data.shape[1]):
        u = data[:, t] - x[t]
        acc += u * u
    return acc


class _Query:
    __slots__ = ("x", "k", "budget", "count", "visited", "frontier", "result")

    def __init__(self, x, k, budget, n):
        self.x = x
        self.k = k
        self.budget = budget
        self.count = 0
        self.visited = np.zeros(n, dtype=bool)
        self.frontier = []
        # max-heap on (distance, index) via negation
        self.result = []

    def worst(self):
        return -self.result[0][0]

    def pruned(self, bound):
        return len(self.result) == self.k and bound > self.worst()

    def offer(self, d, idx):
        item = (-d, -idx)
        if len(self.result) < self.k:
            heapq.heappush(self.result, item)
        elif item > self.result[0]:
            heapq.heapreplace(self.result, item)


def _descend(q, node, key, bound, data, forest):
    roots, split_dim, split_val, left, right, leaf_lo, leaf_hi, leaf_points = forest
    x = q.x
    while split_dim[node] >= 0:
        dim = split_dim[node]
        diff = x[dim] - float(split_val[node])
        if diff < 0:
            near, far = left[node], right[node]
        else:
            near, far = right[node], left[node]
        sq = diff * diff
        far_bound = sq if sq > bound else bound
        if not q.pruned(far_bound):
            heapq.heappush(q.frontier, (key + sq, int(far), far_bound))
        node = near
    if q.pruned(bound):
        return
    pts = leaf_points[leaf_lo[node]:leaf_hi[node]]
    pts = pts[~q.visited[pts]]
    room = q.budget - q.count
    if room <= 0:
        return
    pts = pts[:room]
    q.visited[pts] = True
    q.count += len(pts)
    dists = sqdist_rows(data[pts], x)
    for p, d in zip(pts.tolist(), dists.tolist()):
        q.offer(d, p)


def forest_knn_batch(data, queries, k, budget, roots, split_dim, split_val,
                     left, right, leaf_lo, leaf_hi, leaf_points):
    m, n = queries.shape[0], data.shape[0]
    out_idx = np.full((m, k), -1, dtype=np.int64)
    out_dist = np.full((m, k), np.inf)
    out_checks = np.zeros(m, dtype=np.int64)
    forest = (roots, split_dim, split_val, left, right, leaf_lo, leaf_hi, leaf_points)
    for qi in range(m):
        q = _Query(queries[qi], k, budget, n)
        for root in roots:
            if q.count >= q.budget:
                break
            _descend(q, int(root), 0.0, 0.0, data, forest)
        while q.frontier and q.count < q.budget:
            key, node, bound = heapq.heappop(q.frontier)
            if q.pruned(bound):
                continue
            _descend(q, node, key, bound, data, forest)
        found = sorted((-nd, -ni) for nd, ni in q.result)
        for j, (d, p) in enumerate(found):
            out_dist[qi, j] = d
            out_idx[qi, j] = p
        out_checks[qi] = q.count
    return out_idx, out_dist, out_checks
