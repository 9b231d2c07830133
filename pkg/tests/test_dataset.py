import struct

import numpy as np
import pytest

from lnbnn import dataset
from lnbnn.classifiers import build_local_nbnn, local_nbnn_classify
from lnbnn.core import LabeledDescriptorSet, MalformedInputError
from lnbnn.dataset import (
    BadMagicError,
    DescriptorFileError,
    InsufficientImagesError,
    LabelOutOfRangeError,
    SyntheticSpec,
    TruncatedFileError,
    UnsupportedVersionError,
)

HEADER_SIZE = struct.calcsize("<4sHIQBI")


def f32_set(rng, n=100, dim=6, classes=4, with_locations=False):
    """Random set whose values survive a float32 round trip exactly."""
    desc = rng.normal(size=(n, dim)).astype(np.float32).astype(np.float64)
    labels = np.arange(n) % classes
    images = np.arange(n) // 2
    locs = None
    if with_locations:
        locs = rng.random((n, 2)).astype(np.float32).astype(np.float64)
    return LabeledDescriptorSet(desc, labels, images, classes, locations=locs)


def assert_same(a, b):
    np.testing.assert_array_equal(a.descriptors, b.descriptors)
    np.testing.assert_array_equal(a.labels, b.labels)
    np.testing.assert_array_equal(a.image_ids, b.image_ids)
    assert a.class_count == b.class_count
    if a.locations is None:
        assert b.locations is None
    else:
        np.testing.assert_array_equal(a.locations, b.locations)


class TestBinaryFormat:
    @pytest.mark.parametrize("with_locations", [False, True])
    def test_round_trip_100_records(self, tmp_path, rng, with_locations):
        data = f32_set(rng, with_locations=with_locations)
        path = tmp_path / "d.ldsc"
        dataset.save_descriptor_file(path, data)
        assert_same(data, dataset.load_descriptor_file(path))

    def test_file_size_matches_layout(self, tmp_path, rng):
        data = f32_set(rng, n=10, dim=3, with_locations=True)
        path = tmp_path / "d.ldsc"
        dataset.save_descriptor_file(path, data)
        assert path.stat().st_size == HEADER_SIZE + 10 * (4 + 4 + 8 + 3 * 4)

    def test_location_augmentation(self, tmp_path, rng):
        data = f32_set(rng, n=20, dim=128, with_locations=True)
        path = tmp_path / "d.ldsc"
        dataset.save_descriptor_file(path, data)
        loaded = dataset.load_descriptor_file(path, alpha=1.6)
        assert loaded.dimension == 130
        np.testing.assert_array_equal(loaded.descriptors[:, :128], data.descriptors)
        np.testing.assert_allclose(loaded.descriptors[:, 128:], 1.6 * data.locations)

    def test_locations_ignored_without_alpha(self, tmp_path, rng):
        data = f32_set(rng, n=5, dim=4, with_locations=True)
        path = tmp_path / "d.ldsc"
        dataset.save_descriptor_file(path, data)
        assert dataset.load_descriptor_file(path).dimension == 4

    def test_label_out_of_range_names_record_and_offset(self, tmp_path, rng):
        data = f32_set(rng, n=10, dim=2, classes=2)
        path = tmp_path / "d.ldsc"
        dataset.save_descriptor_file(path, data)
        raw = bytearray(path.read_bytes())
        record_size = 4 + 4 + 2 * 4
        offset = HEADER_SIZE + 7 * record_size
        raw[offset:offset + 4] = struct.pack("<I", 5)
        path.write_bytes(bytes(raw))
        with pytest.raises(LabelOutOfRangeError) as info:
            dataset.load_descriptor_file(path)
        assert info.value.record == 7
        assert info.value.offset == offset
        assert "record 7" in str(info.value) and str(offset) in str(info.value)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "d.ldsc"
        path.write_bytes(b"NOPE" + bytes(40))
        with pytest.raises(BadMagicError) as info:
            dataset.load_descriptor_file(path)
        assert info.value.offset == 0

    def test_bad_version(self, tmp_path, rng):
        path = tmp_path / "d.ldsc"
        dataset.save_descriptor_file(path, f32_set(rng, n=4, dim=2))
        raw = bytearray(path.read_bytes())
        raw[4:6] = struct.pack("<H", 9)
        path.write_bytes(bytes(raw))
        with pytest.raises(UnsupportedVersionError):
            dataset.load_descriptor_file(path)

    @pytest.mark.parametrize("cut", [3, HEADER_SIZE - 1, HEADER_SIZE + 5, -1])
    def test_truncation(self, tmp_path, rng, cut):
        path = tmp_path / "d.ldsc"
        dataset.save_descriptor_file(path, f32_set(rng, n=8, dim=3))
        raw = path.read_bytes()
        path.write_bytes(raw[:cut])
        with pytest.raises((TruncatedFileError, BadMagicError)):
            dataset.load_descriptor_file(path)

    def test_truncated_record_offset(self, tmp_path, rng):
        path = tmp_path / "d.ldsc"
        dataset.save_descriptor_file(path, f32_set(rng, n=8, dim=3))
        raw = path.read_bytes()
        record_size = 4 + 4 + 3 * 4
        path.write_bytes(raw[:HEADER_SIZE + 5 * record_size + 3])
        with pytest.raises(TruncatedFileError) as info:
            dataset.load_descriptor_file(path)
        assert info.value.offset == HEADER_SIZE + 5 * record_size

    def test_trailing_bytes(self, tmp_path, rng):
        path = tmp_path / "d.ldsc"
        dataset.save_descriptor_file(path, f32_set(rng, n=4, dim=2))
        path.write_bytes(path.read_bytes() + b"\0")
        with pytest.raises(DescriptorFileError):
            dataset.load_descriptor_file(path)

    def test_non_finite_value(self, tmp_path, rng):
        path = tmp_path / "d.ldsc"
        dataset.save_descriptor_file(path, f32_set(rng, n=4, dim=2))
        raw = bytearray(path.read_bytes())
        raw[HEADER_SIZE + 8:HEADER_SIZE + 12] = struct.pack("<f", float("nan"))
        path.write_bytes(bytes(raw))
        with pytest.raises(DescriptorFileError, match="record 0"):
            dataset.load_descriptor_file(path)

    def test_missing_class_is_rejected(self, tmp_path, rng):
        path = tmp_path / "d.ldsc"
        dataset.save_descriptor_file(path, f32_set(rng, n=4, dim=2, classes=2))
        raw = bytearray(path.read_bytes())
        # declare a third class that has no records
        raw[18 + 1:18 + 5] = struct.pack("<I", 3)
        path.write_bytes(bytes(raw))
        with pytest.raises(DescriptorFileError):
            dataset.load_descriptor_file(path)


class TestCsv:
    @pytest.mark.parametrize("with_locations", [False, True])
    def test_round_trip(self, tmp_path, rng, with_locations):
        data = f32_set(rng, n=30, dim=5, with_locations=with_locations)
        path = tmp_path / "d.csv"
        dataset.save_csv(path, data)
        assert_same(data, dataset.load_csv(path, has_locations=with_locations))

    def test_comments_and_blank_lines(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("# class,image,values\n0,0,1.0,2.0\n\n1,1,3.0,4.0\n")
        data = dataset.load_csv(path)
        assert len(data) == 2 and data.class_count == 2

    @pytest.mark.parametrize("text", ["0,0,1.0\n1,1,1.0,2.0\n", "0,0\n", "x,0,1.0\n", ""])
    def test_malformed(self, tmp_path, text):
        path = tmp_path / "d.csv"
        path.write_text(text)
        with pytest.raises(MalformedInputError):
            dataset.load_csv(path)

    def test_binary_csv_conversion_agrees(self, tmp_path, rng):
        data = f32_set(rng, n=12, dim=3)
        dataset.save_csv(tmp_path / "a.csv", data)
        dataset.save_descriptor_file(tmp_path / "a.ldsc", dataset.load_any(tmp_path / "a.csv"))
        assert_same(data, dataset.load_any(tmp_path / "a.ldsc"))


class TestSynthetic:
    def test_deterministic(self):
        spec = SyntheticSpec(class_count=4, rng_seed=7, clutter_fraction=0.3)
        a = dataset.generate_dataset(spec)
        b = dataset.generate_dataset(spec)
        assert a.descriptors.tobytes() == b.descriptors.tobytes()
        np.testing.assert_array_equal(a.labels, b.labels)
        np.testing.assert_array_equal(a.image_ids, b.image_ids)

    def test_seed_changes_data(self):
        a = dataset.generate_dataset(SyntheticSpec(class_count=3, rng_seed=1))
        b = dataset.generate_dataset(SyntheticSpec(class_count=3, rng_seed=2))
        assert not np.array_equal(a.descriptors, b.descriptors)

    def test_shapes(self):
        spec = SyntheticSpec(class_count=3, train_images_per_class=4, query_images_per_class=2,
                             descriptors_per_image=5, dimension=7)
        train, queries = dataset.generate_synthetic(spec)
        assert train.descriptors.shape == (3 * 4 * 5, 7)
        assert len(queries) == 3 * 2
        assert all(q.descriptors.shape == (5, 7) for q in queries)
        assert sorted(q.true_label for q in queries) == [0, 0, 1, 1, 2, 2]
        assert not set(train.image_ids.tolist()) & {q.image_id for q in queries}

    @pytest.mark.parametrize("count,dim,sep", [(10, 8, 1.5), (64, 16, 3.0), (5, 2, 0.5), (9, 2, 2.0)])
    def test_lattice_separation(self, count, dim, sep):
        spec = SyntheticSpec(class_count=count, dimension=dim, class_mean_separation=sep)
        means = dataset._lattice_points(count, spec, np.random.default_rng(0))
        d2 = ((means[:, None] - means[None]) ** 2).sum(axis=-1)
        off = d2[~np.eye(count, dtype=bool)]
        assert np.sqrt(off.min()) >= sep - 1e-12

    def test_well_separated_is_perfect(self):
        spec = SyntheticSpec(class_count=5, class_mean_separation=10.0, query_images_per_class=10, rng_seed=4)
        train, queries = dataset.generate_synthetic(spec)
        assert len(queries) == 50
        model = build_local_nbnn(train, k=10)
        assert all(local_nbnn_classify(model, q)[0] == q.true_label for q in queries)

    def test_overlapping_is_harder(self):
        def accuracy(sep):
            spec = SyntheticSpec(class_count=5, class_mean_separation=sep, query_images_per_class=10,
                                 descriptors_per_image=5, rng_seed=4)
            train, queries = dataset.generate_synthetic(spec)
            model = build_local_nbnn(train, k=10)
            return np.mean([local_nbnn_classify(model, q)[0] == q.true_label for q in queries])
        assert accuracy(0.5) < accuracy(10.0)

    @pytest.mark.parametrize("field,value", [("class_count", 0), ("dimension", 0),
                                             ("within_class_stddev", 0.0), ("clutter_fraction", 1.0)])
    def test_invalid_spec(self, field, value):
        with pytest.raises(ValueError):
            SyntheticSpec(**{field: value})


def image_set(images_per_class, classes=3, per_image=2):
    n_img = images_per_class * classes
    labels = np.repeat(np.arange(n_img) // images_per_class, per_image)
    images = np.repeat(np.arange(n_img), per_image)
    desc = np.arange(n_img * per_image, dtype=float)[:, None]
    return LabeledDescriptorSet(desc, labels, images, classes, class_names=("cat", "dog", "owl")[:classes])


class TestSplit:
    @pytest.mark.parametrize("seed", range(10))
    def test_disjoint_and_exact_counts(self, seed):
        data = image_set(6)
        train, queries = dataset.split_by_image(data, 4, seed)
        train_imgs = set(train.image_ids.tolist())
        query_imgs = {q.image_id for q in queries}
        assert not train_imgs & query_imgs
        assert train_imgs | query_imgs == set(data.image_ids.tolist())
        for c in range(3):
            assert len(set(train.image_ids[train.labels == c].tolist())) == 4
            assert sum(q.true_label == c for q in queries) == 2

    def test_one_more_image_gives_one_query(self):
        _, queries = dataset.split_by_image(image_set(5), 4, 0)
        assert [q.true_label for q in queries] == [0, 1, 2]

    def test_deterministic(self):
        a, _ = dataset.split_by_image(image_set(8), 3, 5)
        b, _ = dataset.split_by_image(image_set(8), 3, 5)
        np.testing.assert_array_equal(a.image_ids, b.image_ids)

    def test_seeds_change_partition(self):
        parts = {tuple(dataset.split_by_image(image_set(8), 3, s)[0].image_ids.tolist()) for s in range(5)}
        assert len(parts) > 1

    def test_insufficient_images_names_class(self):
        data = image_set(4)
        with pytest.raises(InsufficientImagesError, match="cat"):
            dataset.split_by_image(data, 4, 0)

    def test_mixed_class_image_rejected(self):
        data = LabeledDescriptorSet([[0.0], [1.0]], [0, 1], [0, 0], 2)
        with pytest.raises(MalformedInputError):
            dataset.images_of(data)
