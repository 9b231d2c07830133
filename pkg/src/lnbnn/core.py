"""Domain types and the small pure functions every other module leans on.

Descriptors are plain 1-D float64 numpy arrays; sets of them are 2-D
C-contiguous arrays. All distances in the package are squared Euclidean.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

#: Location weight used for every experiment unless overridden.
DEFAULT_ALPHA = 1.6


class MalformedInputError(ValueError):
    """Raised when descriptors or labels violate a structural invariant."""


def as_descriptor(values, dimension: Optional[int] = None) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] < 1:
        raise MalformedInputError(f"descriptor must be a non-empty vector, got shape {arr.shape}")
    if dimension is not None and arr.shape[0] != dimension:
        raise MalformedInputError(f"descriptor has dimension {arr.shape[0]}, expected {dimension}")
    if not np.all(np.isfinite(arr)):
        raise MalformedInputError("descriptor contains NaN or Inf")
    return arr


def as_descriptor_matrix(values, dimension: Optional[int] = None) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] < 1:
        raise MalformedInputError(f"expected a (count, dimension) array, got shape {arr.shape}")
    if dimension is not None and arr.shape[1] != dimension:
        raise MalformedInputError(f"descriptors have dimension {arr.shape[1]}, expected {dimension}")
    if not np.all(np.isfinite(arr)):
        raise MalformedInputError("descriptors contain NaN or Inf")
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LocatedDescriptor:
    """A descriptor with its image-normalized (x, y) position in [0, 1]."""

    descriptor: np.ndarray
    x: float
    y: float

    def __post_init__(self):
        object.__setattr__(self, "descriptor", as_descriptor(self.descriptor))
        for name in ("x", "y"):
            v = float(getattr(self, name))
            if not (np.isfinite(v) and 0.0 <= v <= 1.0):
                raise MalformedInputError(f"location {name}={v} outside [0, 1]")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class LabeledDescriptorSet:
    """Training corpus: descriptors with parallel class labels and image ids.

    ``locations`` is an optional (count, 2) array of normalized (x, y)
    positions carried alongside the descriptors.
    """

    descriptors: np.ndarray
    labels: np.ndarray
    image_ids: np.ndarray
    class_count: int
    class_names: tuple = ()
    locations: Optional[np.ndarray] = None

    def __post_init__(self):
        desc = as_descriptor_matrix(self.descriptors)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        image_ids = np.ascontiguousarray(self.image_ids, dtype=np.int64)
        n = desc.shape[0]
        if n == 0:
            raise MalformedInputError("descriptor set is empty")
        if labels.shape != (n,) or image_ids.shape != (n,):
            raise MalformedInputError("descriptors, labels and image_ids must be parallel")
        class_count = int(self.class_count)
        if class_count < 1:
            raise MalformedInputError("class_count must be >= 1")
        if labels.min() < 0 or labels.max() >= class_count:
            raise MalformedInputError(f"label outside 0..{class_count - 1}")
        present = np.bincount(labels, minlength=class_count)
        if np.any(present == 0):
            missing = int(np.flatnonzero(present == 0)[0])
            raise MalformedInputError(f"class {missing} has no descriptors")
        names = tuple(self.class_names) or tuple(f"class_{i}" for i in range(class_count))
        if len(names) != class_count:
            raise MalformedInputError("class_names length differs from class_count")
        locations = self.locations
        if locations is not None:
            locations = np.ascontiguousarray(locations, dtype=np.float64)
            if locations.shape != (n, 2):
                raise MalformedInputError("locations must have shape (count, 2)")
            if not np.all((locations >= 0.0) & (locations <= 1.0)):
                raise MalformedInputError("locations must lie in [0, 1]")
            locations = _frozen(locations)
        object.__setattr__(self, "descriptors", _frozen(desc))
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "image_ids", _frozen(image_ids))
        object.__setattr__(self, "class_count", class_count)
        object.__setattr__(self, "class_names", names)
        object.__setattr__(self, "locations", locations)

    def __len__(self) -> int:
        return self.descriptors.shape[0]

    @property
    def dimension(self) -> int:
        return self.descriptors.shape[1]

    def class_descriptors(self, class_id: int) -> np.ndarray:
        return self.descriptors[self.labels == class_id]

    def subset(self, mask: np.ndarray, class_count: Optional[int] = None) -> "LabeledDescriptorSet":
        """Rows selected by ``mask``; every kept class must still be present."""
        cc = self.class_count if class_count is None else class_count
        return LabeledDescriptorSet(
            descriptors=self.descriptors[mask],
            labels=self.labels[mask],
            image_ids=self.image_ids[mask],
            class_count=cc,
            class_names=self.class_names[:cc],
            locations=None if self.locations is None else self.locations[mask],
        )


@dataclass(frozen=True)
class QueryImage:
    descriptors: np.ndarray
    true_label: Optional[int] = None
    image_id: Optional[int] = None

    def __post_init__(self):
        desc = as_descriptor_matrix(self.descriptors)
        if desc.shape[0] < 1:
            raise MalformedInputError("query image has no descriptors")
        object.__setattr__(self, "descriptors", _frozen(desc))

    @property
    def dimension(self) -> int:
        return self.descriptors.shape[1]


@dataclass(frozen=True)
class ClassScores:
    """Per-class totals. Classes missing from ``totals`` count as 0."""

    totals: dict = field(default_factory=dict)

    def get(self, class_id: int) -> float:
        return self.totals.get(class_id, 0.0)

    def dense(self, class_count: int) -> np.ndarray:
        out = np.zeros(class_count)
        for c, v in self.totals.items():
            out[c] = v
        return out


def squared_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise MalformedInputError(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.dot(diff, diff))


def normalize_location(px: float, py: float, width: float, height: float) -> tuple[float, float]:
    """Map pixel coordinates into [0, 1] by dividing by the longest image side."""
    side = float(max(width, height))
    if side <= 0:
        raise MalformedInputError("image size must be positive")
    if not (0 <= px <= width and 0 <= py <= height):
        raise MalformedInputError(f"pixel ({px}, {py}) outside a {width}x{height} image")
    return px / side, py / side


def augment_with_location(ld: LocatedDescriptor, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    alpha = float(alpha)
    if not np.isfinite(alpha) or alpha < 0:
        raise MalformedInputError(f"alpha must be finite and >= 0, got {alpha}")
    return np.concatenate([ld.descriptor, [alpha * ld.x, alpha * ld.y]])


def augment_matrix(descriptors: np.ndarray, locations: np.ndarray, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """Row-wise :func:`augment_with_location` for a whole descriptor array."""
    alpha = float(alpha)
    if not np.isfinite(alpha) or alpha < 0:
        raise MalformedInputError(f"alpha must be finite and >= 0, got {alpha}")
    locations = np.asarray(locations, dtype=np.float64)
    return np.ascontiguousarray(np.hstack([descriptors, alpha * locations]))


def argmin_class(totals: Mapping[int, float]) -> int:
    """Class with the smallest total; ties go to the lowest class id."""
    if not totals:
        raise MalformedInputError("argmin over an empty score map")
    best_id, best_val = None, None
    for cid in sorted(totals):
        v = float(totals[cid])
        if not np.isfinite(v):
            raise MalformedInputError(f"non-finite total for class {cid}")
        if best_val is None or v < best_val:
            best_id, best_val = cid, v
    return int(best_id)

