"""Exact and approximate nearest-neighbor search.

Two index types share one batch interface, ``index.knn(queries, k)``
returning ``(indices, distances)`` arrays sorted ascending:

* :class:`BruteForceIndex` scans every point (the oracle).
* :class:`KdForestIndex` is a forest of randomized KD-trees searched
  best-bin-first with one priority queue and one distance-check budget
  shared across all trees.

Trees are built in numpy; queries run in the compiled kernel when it is
available (see :mod:`lnbnn._backend`).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from lnbnn import _backend
from lnbnn.core import MalformedInputError, as_descriptor, as_descriptor_matrix

#: Split dimension is drawn uniformly from this many highest-variance dims.
TOP_VARIANCE_DIMS = 5
#: Nodes with at most this many points become leaves.
LEAF_CAPACITY = 16

INDEX_MAGIC = b"LNBN"
INDEX_VERSION = 1


class Neighbor(NamedTuple):
    point_index: int
    squared_distance: float


@dataclass(frozen=True)
class ForestConfig:
    num_trees: int = 4
    leaf_checks: int = 256
    rng_seed: int = 0

    def __post_init__(self):
        if self.num_trees < 1:
            raise ValueError("num_trees must be >= 1")
        if self.leaf_checks < 1:
            raise ValueError("leaf_checks must be >= 1")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must fit in an unsigned 64-bit integer")


def _check_data(data) -> np.ndarray:
    data = as_descriptor_matrix(data)
    if data.shape[0] == 0:
        raise MalformedInputError("cannot index an empty descriptor set")
    return data


def _select_k(dists: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k smallest distances, ties to the lower index, ascending."""
    n = dists.shape[0]
    if k < n:
        kth = np.partition(dists, k - 1)[k - 1]
        cand = np.flatnonzero(dists <= kth)
    else:
        cand = np.arange(n)
    order = np.lexsort((cand, dists[cand]))
    return cand[order[:k]]


class BruteForceIndex:
    """Exhaustive search over every point."""

    exact = True

    def __init__(self, data):
        self.data = _check_data(data)
        self.data.setflags(write=False)

    @property
    def point_count(self) -> int:
        return self.data.shape[0]

    @property
    def dimension(self) -> int:
        return self.data.shape[1]

    def knn(self, queries, k: int, checks: Optional[int] = None):
        queries = as_descriptor_matrix(queries, self.dimension)
        if k < 1:
            raise ValueError("k must be >= 1")
        kk = min(k, self.point_count)
        kern = _backend.kernels
        idx = np.empty((queries.shape[0], kk), dtype=np.int64)
        dist = np.empty((queries.shape[0], kk))
        for i, q in enumerate(queries):
            d = kern.sqdist_rows(self.data, q)
            sel = _select_k(d, kk)
            idx[i] = sel
            dist[i] = d[sel]
        return idx, dist


@dataclass(frozen=True)
class _FlatForest:
    # all trees concatenated; split_dim == -1 marks a leaf
    roots: np.ndarray
    split_dim: np.ndarray
    split_val: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_lo: np.ndarray
    leaf_hi: np.ndarray
    leaf_points: np.ndarray

    def arrays(self):
        return (self.roots, self.split_dim, self.split_val, self.left, self.right,
                self.leaf_lo, self.leaf_hi, self.leaf_points)


def _build_tree(data: np.ndarray, rng: np.random.Generator, node_offset: int, point_offset: int):
    """One randomized KD-tree as flat node lists (node ids offset for concatenation)."""
    split_dim, split_val, left, right, leaf_lo, leaf_hi = [], [], [], [], [], []
    leaf_points = []
    filled = [point_offset]

    def new_node():
        split_dim.append(-1)
        split_val.append(0.0)
        left.append(-1)
        right.append(-1)
        leaf_lo.append(0)
        leaf_hi.append(0)
        return len(split_dim) - 1

    def make_leaf(node, pts):
        leaf_points.append(pts)
        leaf_lo[node] = filled[0]
        filled[0] += len(pts)
        leaf_hi[node] = filled[0]

    root = new_node()
    stack = [(root, np.arange(data.shape[0], dtype=np.int64))]
    while stack:
        node, pts = stack.pop()
        if len(pts) <= LEAF_CAPACITY:
            make_leaf(node, pts)
            continue
        sub = data[pts]
        var = sub.var(axis=0)
        ranked = np.argsort(-var, kind="stable")[:TOP_VARIANCE_DIMS]
        ranked = ranked[var[ranked] > 0]
        if len(ranked) == 0:
            # all points identical
            make_leaf(node, pts)
            continue
        dim = int(ranked[rng.integers(len(ranked))])
        value = np.float32(sub[:, dim].mean())
        go_left = sub[:, dim] < value
        if go_left.all() or not go_left.any():
            # float32 rounding put the mean on an extreme; split at the median instead
            order = np.argsort(sub[:, dim], kind="stable")
            value = np.float32(sub[order[len(pts) // 2], dim])
            go_left = sub[:, dim] < value
            if go_left.all() or not go_left.any():
                make_leaf(node, pts)
                continue
        split_dim[node] = dim
        split_val[node] = float(value)
        lchild, rchild = new_node(), new_node()
        left[node], right[node] = lchild, rchild
        # push right first so the left subtree is laid out first
        stack.append((rchild, pts[~go_left]))
        stack.append((lchild, pts[go_left]))

    points = np.concatenate(leaf_points) if leaf_points else np.empty(0, dtype=np.int64)
    off = np.int64(node_offset)
    sd = np.asarray(split_dim, dtype=np.int32)
    lf = np.asarray(left, dtype=np.int64)
    rt = np.asarray(right, dtype=np.int64)
    lf[sd >= 0] += off
    rt[sd >= 0] += off
    return {
        "root": node_offset + root,
        "split_dim": sd,
        "split_val": np.asarray(split_val, dtype=np.float32),
        "left": lf,
        "right": rt,
        "leaf_lo": np.asarray(leaf_lo, dtype=np.int64),
        "leaf_hi": np.asarray(leaf_hi, dtype=np.int64),
        "leaf_points": points,
    }


def _tree_rngs(config: ForestConfig):
    """Independent PCG64 streams, one per tree, derived from ``rng_seed``."""
    children = np.random.SeedSequence(config.rng_seed).spawn(config.num_trees)
    return [np.random.Generator(np.random.PCG64(s)) for s in children]


def _flatten(trees) -> _FlatForest:
    def cat(name, dtype):
        return np.ascontiguousarray(np.concatenate([t[name] for t in trees]), dtype=dtype)

    return _FlatForest(
        roots=np.asarray([t["root"] for t in trees], dtype=np.int32),
        split_dim=cat("split_dim", np.int32),
        split_val=cat("split_val", np.float32),
        left=cat("left", np.int32),
        right=cat("right", np.int32),
        leaf_lo=cat("leaf_lo", np.int32),
        leaf_hi=cat("leaf_hi", np.int32),
        leaf_points=cat("leaf_points", np.int32),
    )


class KdForestIndex:
    """Randomized KD-tree forest over one descriptor array."""

    exact = False

    def __init__(self, data, config: ForestConfig, forest: _FlatForest):
        self.data = data
        self.config = config
        self.forest = forest

    @property
    def point_count(self) -> int:
        return self.data.shape[0]

    @property
    def dimension(self) -> int:
        return self.data.shape[1]

    def knn_with_checks(self, queries, k: int, checks: Optional[int] = None):
        """Like :meth:`knn` but also returns the distance checks spent per query."""
        queries = as_descriptor_matrix(queries, self.dimension)
        if k < 1:
            raise ValueError("k must be >= 1")
        kk = min(k, self.point_count)
        budget = self.config.leaf_checks if checks is None else int(checks)
        if budget < 1:
            raise ValueError("checks must be >= 1")
        # never stop before k distinct points have been scored
        budget = max(budget, kk)
        return _backend.kernels.forest_knn_batch(
            self.data, queries, kk, budget, *self.forest.arrays()
        )

    def knn(self, queries, k: int, checks: Optional[int] = None):
        idx, dist, _ = self.knn_with_checks(queries, k, checks)
        return idx, dist

    def tree_point_sets(self):
        """Sorted point indices stored in each tree (for structural checks)."""
        f = self.forest
        out = []
        for t, root in enumerate(f.roots):
            end = f.roots[t + 1] if t + 1 < len(f.roots) else len(f.split_dim)
            leaves = [i for i in range(root, end) if f.split_dim[i] < 0]
            pts = np.concatenate([f.leaf_points[f.leaf_lo[i]:f.leaf_hi[i]] for i in leaves])
            out.append(np.sort(pts))
        return out


def build_forest(data, config: ForestConfig = ForestConfig()) -> KdForestIndex:
    data = _check_data(data)
    data.setflags(write=False)
    trees = []
    node_offset = point_offset = 0
    for rng in _tree_rngs(config):
        tree = _build_tree(data, rng, node_offset, point_offset)
        node_offset += len(tree["split_dim"])
        point_offset += len(tree["leaf_points"])
        trees.append(tree)
    return KdForestIndex(data, config, _flatten(trees))


def _as_neighbors(idx_row, dist_row) -> list[Neighbor]:
    return [Neighbor(int(i), float(d)) for i, d in zip(idx_row, dist_row) if i >= 0]


def brute_force_knn(data, query, k: int) -> list[Neighbor]:
    index = data if isinstance(data, BruteForceIndex) else BruteForceIndex(data)
    q = as_descriptor(query, index.dimension)
    idx, dist = index.knn(q, k)
    return _as_neighbors(idx[0], dist[0])


def forest_knn(index: KdForestIndex, query, k: int, checks: Optional[int] = None) -> list[Neighbor]:
    q = as_descriptor(query, index.dimension)
    idx, dist = index.knn(q, k, checks)
    return _as_neighbors(idx[0], dist[0])


def knn_with_class_lookup(index, labels: Sequence[int], query, k: int,
                          checks: Optional[int] = None) -> list[tuple[Neighbor, int]]:
    """Neighbors from a merged index, each tagged with its source class."""
    labels = np.asarray(labels)
    if labels.shape[0] != index.point_count:
        raise MalformedInputError("labels must be parallel to the indexed points")
    q = as_descriptor(query, index.dimension)
    idx, dist = index.knn(q, k, checks)
    return [(n, int(labels[n.point_index])) for n in _as_neighbors(idx[0], dist[0])]


def recall_at_k(approx_idx: np.ndarray, exact_idx: np.ndarray) -> float:
    """Mean fraction of each row of ``exact_idx`` recovered in ``approx_idx``."""
    approx_idx = np.atleast_2d(approx_idx)
    exact_idx = np.atleast_2d(exact_idx)
    hits = 0
    for a, e in zip(approx_idx, exact_idx):
        hits += len(set(a.tolist()) & set(e.tolist()))
    return hits / exact_idx.size


def make_index(data, checks: Optional[int], trees: int = 4, seed: int = 0):
    """Brute force when ``checks`` is None, else a forest with that budget."""
    if checks is None:
        return BruteForceIndex(data)
    return build_forest(data, ForestConfig(num_trees=trees, leaf_checks=checks, rng_seed=seed))


# -- serialization ---------------------------------------------------------
# little-endian: magic, u16 version, u32 dim, u64 points,
# u32 trees, u32 leaf_checks, u64 seed, u32 nodes, u32 leaf-point count,
# u32 roots[trees], then per-node i32 split_dim, f32 split_val, i32 left,
# i32 right, i32 leaf_lo, i32 leaf_hi, then u32 leaf_points.
_HEADER = struct.Struct("<4sHIQIIQII")


class IndexFormatError(ValueError):
    pass


def save_index(index: KdForestIndex, path) -> None:
    f = index.forest
    cfg = index.config
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(INDEX_MAGIC, INDEX_VERSION, index.dimension, index.point_count,
                              cfg.num_trees, cfg.leaf_checks, cfg.rng_seed,
                              len(f.split_dim), len(f.leaf_points)))
        fh.write(f.roots.astype("<u4").tobytes())
        for arr, dt in ((f.split_dim, "<i4"), (f.split_val, "<f4"), (f.left, "<i4"),
                        (f.right, "<i4"), (f.leaf_lo, "<i4"), (f.leaf_hi, "<i4")):
            fh.write(arr.astype(dt).tobytes())
        fh.write(f.leaf_points.astype("<u4").tobytes())


def load_index(path, data) -> KdForestIndex:
    """Read a forest saved by :func:`save_index`; ``data`` must be the indexed points."""
    data = _check_data(data)
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise IndexFormatError(f"truncated header: {len(raw)} bytes")
    magic, version, dim, count, trees, checks, seed, nodes, npts = _HEADER.unpack_from(raw)
    if magic != INDEX_MAGIC:
        raise IndexFormatError(f"bad magic {magic!r} at offset 0")
    if version != INDEX_VERSION:
        raise IndexFormatError(f"unsupported index version {version}")
    if dim != data.shape[1] or count != data.shape[0]:
        raise IndexFormatError(
            f"index is for {count}x{dim} data, got {data.shape[0]}x{data.shape[1]}")
    expected = _HEADER.size + 4 * trees + 24 * nodes + 4 * npts
    if len(raw) != expected:
        raise IndexFormatError(f"index file is {len(raw)} bytes, expected {expected}")
    pos = _HEADER.size

    def take(dt, n):
        nonlocal pos
        arr = np.frombuffer(raw, dtype=dt, count=n, offset=pos)
        pos += arr.nbytes
        return arr

    roots = take("<u4", trees).astype(np.int32)
    cols = [take(dt, nodes) for dt in ("<i4", "<f4", "<i4", "<i4", "<i4", "<i4")]
    leaf_points = take("<u4", npts).astype(np.int32)
    forest = _FlatForest(
        roots=np.ascontiguousarray(roots),
        split_dim=cols[0].astype(np.int32),
        split_val=cols[1].astype(np.float32),
        left=cols[2].astype(np.int32),
        right=cols[3].astype(np.int32),
        leaf_lo=cols[4].astype(np.int32),
        leaf_hi=cols[5].astype(np.int32),
        leaf_points=leaf_points,
    )
    if np.any(leaf_points >= count):
        raise IndexFormatError("leaf point index out of range")
    data.setflags(write=False)
    return KdForestIndex(data, ForestConfig(trees, checks, seed), forest)
