"""NBNN, Local NBNN and the positive-log-odds-increment rule.

Models hold read-only indices, so one model can classify query images
from several threads at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from lnbnn.ann import make_index
from lnbnn.core import (
    ClassScores,
    LabeledDescriptorSet,
    MalformedInputError,
    QueryImage,
    argmin_class,
)

DEFAULT_K = 10
# Gaussian kernel exp(-d / (2 sigma^2)) with unit sigma
DEFAULT_BANDWIDTH = 2.0


class NeighborhoodTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class NbnnModel:
    per_class_indices: tuple
    class_count: int

    def __post_init__(self):
        if len(self.per_class_indices) != self.class_count:
            raise MalformedInputError("need exactly one index per class")
        dims = {ix.dimension for ix in self.per_class_indices}
        if len(dims) != 1:
            raise MalformedInputError("per-class indices disagree on dimension")

    @property
    def dimension(self) -> int:
        return self.per_class_indices[0].dimension


@dataclass(frozen=True)
class LocalNbnnModel:
    merged_index: object
    labels: np.ndarray
    class_count: int
    k: int = DEFAULT_K

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if labels.shape[0] != self.merged_index.point_count:
            raise MalformedInputError("labels must be parallel to the merged index")
        if np.any(np.bincount(labels, minlength=self.class_count)[: self.class_count] == 0):
            raise MalformedInputError("every class must be represented in the merged index")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def dimension(self) -> int:
        return self.merged_index.dimension


def build_nbnn(train: LabeledDescriptorSet, checks: Optional[int] = None,
               trees: int = 4, seed: int = 0) -> NbnnModel:
    """One index per class. ``checks=None`` gives exact (brute-force) indices."""
    indices = tuple(
        make_index(train.class_descriptors(c), checks, trees, seed + c)
        for c in range(train.class_count)
    )
    return NbnnModel(indices, train.class_count)


def build_local_nbnn(train: LabeledDescriptorSet, k: int = DEFAULT_K, checks: Optional[int] = None,
                     trees: int = 4, seed: int = 0) -> LocalNbnnModel:
    index = make_index(train.descriptors, checks, trees, seed)
    return LocalNbnnModel(index, train.labels, train.class_count, k)


def _query_matrix(q: QueryImage, dimension: int) -> np.ndarray:
    if q.descriptors.shape[0] == 0:
        raise MalformedInputError("query image has no descriptors")
    if q.dimension != dimension:
        raise MalformedInputError(f"query dimension {q.dimension} != model dimension {dimension}")
    return q.descriptors


def class_nn_distances(model: NbnnModel, q: QueryImage, checks: Optional[int] = None) -> np.ndarray:
    """(n_descriptors, class_count) squared distances to each class's nearest neighbor."""
    x = _query_matrix(q, model.dimension)
    out = np.empty((x.shape[0], model.class_count))
    for c, index in enumerate(model.per_class_indices):
        _, dist = index.knn(x, 1, checks)
        out[:, c] = dist[:, 0]
    return out


def nbnn_classify(model: NbnnModel, q: QueryImage, checks: Optional[int] = None):
    dists = class_nn_distances(model, q, checks)
    totals = {c: float(v) for c, v in enumerate(dists.sum(axis=0))}
    return argmin_class(totals), ClassScores(totals)


def local_nbnn_classify(model: LocalNbnnModel, q: QueryImage, checks: Optional[int] = None):
    x = _query_matrix(q, model.dimension)
    k = model.k
    if k + 1 > model.merged_index.point_count:
        raise NeighborhoodTooLargeError(
            f"k={k} needs {k + 1} training descriptors but the index holds "
            f"{model.merged_index.point_count}; use a smaller k")
    idx, dist = model.merged_index.knn(x, k + 1, checks)
    background = dist[:, k:k + 1]
    cls = model.labels[idx[:, :k]]
    # neighbors are sorted ascending, so a class's first hit in a row is its minimum
    order = np.argsort(cls, axis=1, kind="stable")
    cls_sorted = np.take_along_axis(cls, order, axis=1)
    first = np.ones_like(cls_sorted, dtype=bool)
    first[:, 1:] = cls_sorted[:, 1:] != cls_sorted[:, :-1]
    delta = np.take_along_axis(dist[:, :k] - background, order, axis=1)
    # bincount adds in row-major (descriptor) order: a fixed reduction order
    sums = np.bincount(cls_sorted[first], weights=delta[first], minlength=model.class_count)
    touched = np.zeros(model.class_count, dtype=bool)
    touched[cls_sorted[first]] = True
    totals = {c: float(sums[c]) for c in np.flatnonzero(touched)}
    dense = {c: totals.get(c, 0.0) for c in range(model.class_count)}
    return argmin_class(dense), ClassScores(totals)


def _logit_rows(log_weights: np.ndarray) -> np.ndarray:
    """log(p_j / (1 - p_j)) for p = softmax(log_weights), without forming p."""
    n = log_weights.shape[-1]
    if n == 1:
        return np.full_like(log_weights, np.inf)
    mask = ~np.eye(n, dtype=bool)
    others = np.where(mask, log_weights[..., None, :], -np.inf)
    m = others.max(axis=-1)
    # shifting by the max of the *other* entries keeps equal inputs exactly equal
    return (log_weights - m) - np.log(np.exp(others - m[..., None]).sum(axis=-1))


def log_odds_increments_matrix(distances: np.ndarray, prior: Optional[np.ndarray] = None,
                               bandwidth: float = DEFAULT_BANDWIDTH) -> np.ndarray:
    """Vectorised :func:`log_odds_increments` over rows of a (n, classes) array."""
    distances = np.asarray(distances, dtype=np.float64)
    n_classes = distances.shape[-1]
    if n_classes < 2:
        raise MalformedInputError("log-odds need at least two classes")
    if not np.all(np.isfinite(distances)):
        raise MalformedInputError("distances must be finite")
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    if prior is None:
        prior = np.full(n_classes, 1.0 / n_classes)
    prior = np.asarray(prior, dtype=np.float64)
    if prior.shape != (n_classes,) or np.any(prior <= 0) or not np.isclose(prior.sum(), 1.0):
        raise MalformedInputError("prior must be positive, one per class, and sum to 1")
    posterior_logit = _logit_rows(-distances / bandwidth)
    prior_logit = _logit_rows(np.log(prior))
    return posterior_logit - prior_logit


def log_odds_increments(distances: Mapping[int, float], prior: Optional[Mapping[int, float]] = None,
                        bandwidth: float = DEFAULT_BANDWIDTH) -> dict:
    """Per-class log-odds change contributed by one descriptor.

    The class posterior is ``softmax(-distance / bandwidth)``; the increment
    is ``logit(posterior) - logit(prior)``, positive exactly when the
    descriptor raises the class above its prior. A Gaussian Parzen window
    of width sigma corresponds to ``bandwidth = 2 * sigma**2``.
    """
    classes = sorted(distances)
    d = np.array([distances[c] for c in classes], dtype=np.float64)
    p = None if prior is None else np.array([prior[c] for c in classes], dtype=np.float64)
    inc = log_odds_increments_matrix(d, p, bandwidth)
    return {c: float(v) for c, v in zip(classes, inc)}


def _argmax_class(scores: np.ndarray) -> int:
    return argmin_class({c: -float(v) for c, v in enumerate(scores)})


def positive_increment_classify(model: NbnnModel, q: QueryImage, checks: Optional[int] = None,
                                bandwidth: float = DEFAULT_BANDWIDTH, prior: Optional[Sequence[float]] = None):
    """Sum only the positive log-odds increments; highest score wins.

    Returns ``(class_id, scores, increments_per_descriptor)`` where the last
    value is the average count of increments applied per query descriptor.
    """
    if model.class_count == 1:
        return 0, ClassScores({0: 0.0}), 0.0
    inc = log_odds_increments_matrix(class_nn_distances(model, q, checks), prior, bandwidth)
    positive = inc > 0
    scores = np.where(positive, inc, 0.0).sum(axis=0)
    totals = {c: float(v) for c, v in enumerate(scores)}
    return _argmax_class(scores), ClassScores(totals), float(positive.sum()) / inc.shape[0]


def log_odds_classify(model: NbnnModel, q: QueryImage, checks: Optional[int] = None,
                      bandwidth: float = DEFAULT_BANDWIDTH, prior: Optional[Sequence[float]] = None):
    """Full log-odds rule: every increment is applied (the reference for the positive-only rule)."""
    if model.class_count == 1:
        return 0, ClassScores({0: 0.0}), 0.0
    inc = log_odds_increments_matrix(class_nn_distances(model, q, checks), prior, bandwidth)
    scores = inc.sum(axis=0)
    totals = {c: float(v) for c, v in enumerate(scores)}
    return _argmax_class(scores), ClassScores(totals), float(inc.shape[1])
