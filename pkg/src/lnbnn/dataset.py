"""Descriptor files, CSV fixtures, synthetic data and train/query splits.

Binary layout (all little-endian)::

    magic      4s   b"LDSC"
    version    u16
    dimension  u32
    records    u64
    has_loc    u8   0 or 1
    classes    u32
    then per record: class u32, image u32, [x f32, y f32], d x f32
"""

from __future__ import annotations

import csv
import itertools
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from lnbnn.core import LabeledDescriptorSet, MalformedInputError, QueryImage, augment_matrix

MAGIC = b"LDSC"
VERSION = 1
_HEADER = struct.Struct("<4sHIQBI")


class DescriptorFileError(ValueError):
    """Base class for malformed descriptor files; ``offset`` is the byte position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class BadMagicError(DescriptorFileError):
    pass


class UnsupportedVersionError(DescriptorFileError):
    pass


class TruncatedFileError(DescriptorFileError):
    pass


class LabelOutOfRangeError(DescriptorFileError):
    def __init__(self, message: str, offset: int, record: int):
        super().__init__(message, offset)
        self.record = record


class InsufficientImagesError(ValueError):
    pass


def _record_dtype(dimension: int, has_locations: bool) -> np.dtype:
    fields = [("label", "<u4"), ("image", "<u4")]
    if has_locations:
        fields += [("x", "<f4"), ("y", "<f4")]
    fields.append(("values", "<f4", (dimension,)))
    return np.dtype(fields)


def save_descriptor_file(path, data: LabeledDescriptorSet) -> None:
    has_loc = data.locations is not None
    dtype = _record_dtype(data.dimension, has_loc)
    records = np.zeros(len(data), dtype=dtype)
    records["label"] = data.labels
    records["image"] = data.image_ids
    if has_loc:
        records["x"] = data.locations[:, 0]
        records["y"] = data.locations[:, 1]
    records["values"] = data.descriptors
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, data.dimension, len(data), int(has_loc), data.class_count))
        fh.write(records.tobytes())


def load_descriptor_file(path, alpha: float = 0.0) -> LabeledDescriptorSet:
    """Read a descriptor file.

    When the file carries locations and ``alpha > 0``, each descriptor is
    extended with ``alpha * (x, y)`` so the returned dimension is ``d + 2``.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}", 0)
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"header needs {_HEADER.size} bytes, file has {len(raw)}", len(raw))
    _, version, dim, count, has_loc, class_count = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}", 4)
    if has_loc not in (0, 1):
        raise DescriptorFileError(f"location flag must be 0 or 1, got {has_loc}", 18)
    if dim < 1 or count < 1 or class_count < 1:
        raise DescriptorFileError("dimension, record count and class count must be positive", 6)
    dtype = _record_dtype(dim, bool(has_loc))
    need = _HEADER.size + count * dtype.itemsize
    if len(raw) < need:
        whole = (len(raw) - _HEADER.size) // dtype.itemsize
        raise TruncatedFileError(
            f"file ends inside record {whole} of {count}", _HEADER.size + whole * dtype.itemsize)
    if len(raw) > need:
        raise DescriptorFileError(f"{len(raw) - need} trailing bytes after last record", need)
    records = np.frombuffer(raw, dtype=dtype, count=count, offset=_HEADER.size)
    bad = np.flatnonzero(records["label"] >= class_count)
    if bad.size:
        i = int(bad[0])
        raise LabelOutOfRangeError(
            f"record {i} has class id {int(records['label'][i])} >= class count {class_count}",
            _HEADER.size + i * dtype.itemsize, i)
    values = records["values"].astype(np.float64)
    if not np.all(np.isfinite(values)):
        i = int(np.flatnonzero(~np.isfinite(values).all(axis=1))[0])
        raise DescriptorFileError(f"record {i} has a non-finite value", _HEADER.size + i * dtype.itemsize)
    locations = None
    if has_loc:
        locations = np.column_stack([records["x"], records["y"]]).astype(np.float64)
        outside = np.flatnonzero(~((locations >= 0) & (locations <= 1)).all(axis=1))
        if outside.size:
            i = int(outside[0])
            raise DescriptorFileError(
                f"record {i} location outside [0, 1]", _HEADER.size + i * dtype.itemsize + 8)
        if alpha > 0:
            values = augment_matrix(values, locations, alpha)
    try:
        return LabeledDescriptorSet(values, records["label"].astype(np.int64),
                                    records["image"].astype(np.int64), class_count,
                                    locations=locations)
    except MalformedInputError as exc:
        raise DescriptorFileError(str(exc), _HEADER.size) from exc


def load_csv(path, has_locations: bool = False, class_count: Optional[int] = None,
             alpha: float = 0.0) -> LabeledDescriptorSet:
    """Read ``class_id,image_id[,x,y],v1,...,vd`` lines (no header)."""
    labels, images, locs, values = [], [], [], []
    lead = 4 if has_locations else 2
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            if len(row) <= lead:
                raise MalformedInputError(f"line {lineno}: expected descriptor values after {lead} fields")
            try:
                labels.append(int(row[0]))
                images.append(int(row[1]))
                if has_locations:
                    locs.append((float(row[2]), float(row[3])))
                values.append([float(v) for v in row[lead:]])
            except ValueError as exc:
                raise MalformedInputError(f"line {lineno}: {exc}") from exc
            if len(values[-1]) != len(values[0]):
                raise MalformedInputError(f"line {lineno}: dimension {len(values[-1])} != {len(values[0])}")
    if not values:
        raise MalformedInputError(f"{path}: no records")
    labels = np.asarray(labels, dtype=np.int64)
    cc = int(labels.max()) + 1 if class_count is None else class_count
    desc = np.asarray(values, dtype=np.float64)
    locations = np.asarray(locs, dtype=np.float64) if has_locations else None
    if locations is not None and alpha > 0:
        desc = augment_matrix(desc, locations, alpha)
    return LabeledDescriptorSet(desc, labels, np.asarray(images, dtype=np.int64), cc, locations=locations)


def save_csv(path, data: LabeledDescriptorSet) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for i in range(len(data)):
            row = [int(data.labels[i]), int(data.image_ids[i])]
            if data.locations is not None:
                row += [repr(float(v)) for v in data.locations[i]]
            row += [repr(float(v)) for v in data.descriptors[i]]
            w.writerow(row)


def load_any(path, alpha: float = 0.0, has_locations: bool = False) -> LabeledDescriptorSet:
    """Dispatch on extension: ``.csv`` is a fixture, anything else binary."""
    if str(path).lower().endswith(".csv"):
        return load_csv(path, has_locations=has_locations, alpha=alpha)
    return load_descriptor_file(path, alpha=alpha)


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian classes around lattice means, optionally mixed with clutter.

    Clutter descriptors come from a shared set of lattice centers that do
    not depend on the class, mimicking background regions in real images.
    """

    class_count: int = 10
    train_images_per_class: int = 15
    descriptors_per_image: int = 20
    dimension: int = 8
    class_mean_separation: float = 1.0
    within_class_stddev: float = 1.0
    rng_seed: int = 0
    query_images_per_class: int = 5
    # share of each image's descriptors drawn from class-independent clutter
    clutter_fraction: float = 0.0
    clutter_centers: int = 20

    def __post_init__(self):
        for name in ("class_count", "train_images_per_class", "descriptors_per_image",
                     "dimension", "query_images_per_class"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not (self.class_mean_separation > 0 and self.within_class_stddev > 0):
            raise ValueError("separation and stddev must be positive")
        if not 0.0 <= self.clutter_fraction < 1.0:
            raise ValueError("clutter_fraction must be in [0, 1)")
        if self.clutter_centers < 1:
            raise ValueError("clutter_centers must be >= 1")


def _lattice_points(count: int, spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    # distinct points of the integer grid {0..side-1}^dim are >= 1 apart;
    # scaling by the separation gives the required minimum distance
    side = 2
    while side ** spec.dimension < count:
        side += 1
    chosen: list[tuple] = []
    seen = set()
    if side ** spec.dimension <= 4 * count:
        cells = list(itertools.product(range(side), repeat=spec.dimension))
        picks = rng.permutation(len(cells))[:count]
        chosen = [cells[i] for i in picks]
    else:
        while len(chosen) < count:
            cell = tuple(int(v) for v in rng.integers(0, side, size=spec.dimension))
            if cell not in seen:
                seen.add(cell)
                chosen.append(cell)
    return np.asarray(chosen, dtype=np.float64) * spec.class_mean_separation


def generate_dataset(spec: SyntheticSpec) -> LabeledDescriptorSet:
    """All images (training and query) in one labeled set; image ids are dense.

    Per class, the first ``train_images_per_class`` image ids are the
    training images and the remaining ones the query images.
    """
    rng = np.random.Generator(np.random.PCG64(spec.rng_seed))
    means = _lattice_points(spec.class_count, spec, rng)
    per_class = spec.train_images_per_class + spec.query_images_per_class
    n_images = spec.class_count * per_class
    nd = spec.descriptors_per_image
    labels = np.repeat(np.arange(spec.class_count), per_class * nd)
    image_ids = np.repeat(np.arange(n_images), nd)
    noise = rng.normal(0.0, spec.within_class_stddev, size=(n_images * nd, spec.dimension))
    centers = means[labels]
    if spec.clutter_fraction > 0:
        clutter = _lattice_points(spec.clutter_centers, spec, rng)
        is_clutter = rng.random(labels.shape[0]) < spec.clutter_fraction
        which = rng.integers(spec.clutter_centers, size=labels.shape[0])
        centers = np.where(is_clutter[:, None], clutter[which], centers)
    return LabeledDescriptorSet(centers + noise, labels, image_ids, spec.class_count)


def overlapping_benchmark(seed: int = 0, **overrides) -> SyntheticSpec:
    """The overlapping 10-class benchmark behind the accuracy experiments.

    Half of every image is shared clutter and neighboring class means sit
    1.5 sigma apart, so NBNN lands near 70% mean accuracy: far enough from
    both chance and 100% for accuracy differences to show. Thirty query
    images per class keep the per-seed sampling noise near 1 point.
    """
    params = dict(class_count=10, train_images_per_class=10, query_images_per_class=30,
                  descriptors_per_image=20, dimension=8, class_mean_separation=1.5,
                  within_class_stddev=1.0, clutter_fraction=0.5, clutter_centers=20, rng_seed=seed)
    params.update(overrides)
    return SyntheticSpec(**params)


def generate_synthetic(spec: SyntheticSpec):
    """Return ``(train, queries)`` with disjoint images and labelled queries."""
    full = generate_dataset(spec)
    per_class = spec.train_images_per_class + spec.query_images_per_class
    within = full.image_ids % per_class
    train = full.subset(within < spec.train_images_per_class)
    queries = images_of(full.subset(within >= spec.train_images_per_class))
    return train, queries


def images_of(data: LabeledDescriptorSet) -> list[QueryImage]:
    """Group a labeled set into query images, ordered by image id."""
    out = []
    order = np.argsort(data.image_ids, kind="stable")
    ids = data.image_ids[order]
    bounds = np.flatnonzero(np.diff(ids)) + 1
    for rows in np.split(order, bounds):
        labels = np.unique(data.labels[rows])
        if labels.size != 1:
            raise MalformedInputError(f"image {int(data.image_ids[rows[0]])} mixes classes")
        out.append(QueryImage(data.descriptors[rows], int(labels[0]), int(data.image_ids[rows[0]])))
    return out


def split_by_image(data: LabeledDescriptorSet, train_images_per_class: int, rng_seed: int = 0):
    """Pick ``train_images_per_class`` images per class for training; the rest are queries."""
    if train_images_per_class < 1:
        raise ValueError("train_images_per_class must be >= 1")
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    train_images = []
    for c in range(data.class_count):
        imgs = np.unique(data.image_ids[data.labels == c])
        if imgs.size <= train_images_per_class:
            raise InsufficientImagesError(
                f"class {c} ({data.class_names[c]}) has {imgs.size} images; "
                f"need more than {train_images_per_class}")
        train_images.append(rng.choice(imgs, size=train_images_per_class, replace=False))
    is_train = np.isin(data.image_ids, np.concatenate(train_images))
    return data.subset(is_train), images_of(data.subset(~is_train))
