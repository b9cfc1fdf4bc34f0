import numpy as np
import pytest

from triplethash.data import (
    DatasetSpec,
    Triplet,
    generate_dataset,
    load_dataset,
    load_split,
    read_pgm,
    sample_triplets,
    save_dataset,
    save_split,
    train_test_split,
    write_pgm,
)
from triplethash.errors import ConfigError, FormatError


def spec(**kw):
    base = dict(class_counts=(6, 4, 3), image_size=32, roi_size=8, noise_level=0.5, seed=1)
    base.update(kw)
    return DatasetSpec(**base)


class TestGeneration:
    def test_deterministic_under_seed(self):
        a = generate_dataset(spec())
        b = generate_dataset(spec())
        assert len(a) == len(b) == 13
        for x, y in zip(a, b):
            assert x.id == y.id and x.label == y.label
            assert np.array_equal(x.pixels, y.pixels)

    def test_noise_zero_images_differ_only_in_glyph_location(self):
        images = generate_dataset(spec(noise_level=0.0))
        same_class = [img for img in images if img.label == 0][:2]
        a, b = same_class
        assert not np.array_equal(a.pixels, b.pixels)
        # identical multiset of values: background zeros plus the glyph level
        assert np.isclose(sorted(a.pixels.ravel()), sorted(b.pixels.ravel())).all()
        for img in (a, b):
            vals = np.unique(img.pixels)
            assert len(vals) == 2 and vals[0] == 0.0

    def test_class_counts_respected(self):
        images = generate_dataset(spec())
        counts = np.bincount([img.label for img in images])
        np.testing.assert_array_equal(counts, [6, 4, 3])

    def test_pixels_on_8bit_grid(self):
        images = generate_dataset(spec())
        for img in images[:3]:
            levels = img.pixels * 255.0
            np.testing.assert_allclose(levels, np.rint(levels), rtol=0, atol=1e-9)

    def test_invalid_specs(self):
        with pytest.raises(ConfigError, match="2 classes"):
            generate_dataset(spec(class_counts=(5,)))
        with pytest.raises(ConfigError, match=">= 2 images"):
            generate_dataset(spec(class_counts=(5, 1)))
        with pytest.raises(ConfigError, match="roi_size"):
            generate_dataset(spec(roi_size=32))
        with pytest.raises(ConfigError, match="noise_level"):
            generate_dataset(spec(noise_level=1.5))


class TestRoundTrip:
    def test_save_load_identity(self, tmp_path):
        images = generate_dataset(spec())
        save_dataset(tmp_path, images)
        loaded = load_dataset(tmp_path)
        assert len(loaded) == len(images)
        for a, b in zip(images, loaded):
            assert a.id == b.id and a.label == b.label
            assert np.array_equal(a.pixels, b.pixels)

    def test_pgm_roundtrip(self, tmp_path):
        gray = np.arange(256, dtype=np.uint8).reshape(16, 16)
        write_pgm(tmp_path / "x.pgm", gray)
        np.testing.assert_array_equal(read_pgm(tmp_path / "x.pgm"), gray)

    def test_empty_directory_errors(self, tmp_path):
        with pytest.raises(FormatError, match="manifest"):
            load_dataset(tmp_path)

    def test_missing_image_file_named(self, tmp_path):
        images = generate_dataset(spec())
        save_dataset(tmp_path, images)
        (tmp_path / "img_00003.pgm").unlink()
        with pytest.raises(FormatError, match="3"):
            load_dataset(tmp_path)

    def test_row_count_mismatch_errors(self, tmp_path):
        images = generate_dataset(spec())
        save_dataset(tmp_path, images)
        write_pgm(tmp_path / "img_99999.pgm", np.zeros((32, 32), np.uint8))
        with pytest.raises(FormatError, match="PGM files"):
            load_dataset(tmp_path)

    def test_malformed_manifest_errors(self, tmp_path):
        images = generate_dataset(spec())
        save_dataset(tmp_path, images)
        (tmp_path / "manifest.csv").write_text("bogus,header\n1,2\n")
        with pytest.raises(FormatError, match="header"):
            load_dataset(tmp_path)

    def test_split_roundtrip(self, tmp_path):
        save_split(tmp_path, "train", [3, 1, 2])
        assert load_split(tmp_path, "train") == [3, 1, 2]
        with pytest.raises(FormatError, match="missing"):
            load_split(tmp_path, "test")


class TestSplit:
    def test_every_class_in_both_sides(self):
        images = generate_dataset(spec())
        train_ids, test_ids = train_test_split(images, 0.2, seed=4)
        labels = {img.id: img.label for img in images}
        assert set(labels[i] for i in train_ids) == {0, 1, 2}
        assert set(labels[i] for i in test_ids) == {0, 1, 2}
        assert not set(train_ids) & set(test_ids)
        assert len(train_ids) + len(test_ids) == len(images)

    def test_deterministic(self):
        images = generate_dataset(spec())
        assert train_test_split(images, 0.2, 7) == train_test_split(images, 0.2, 7)


class TestTripletSampling:
    def test_invariants_on_tiny_classes(self):
        labels = [0, 0, 1, 1]
        for t in sample_triplets(labels, 200, seed=0):
            assert labels[t.q] == labels[t.p]
            assert labels[t.q] != labels[t.n]
            assert t.q != t.p

    def test_same_seed_same_list(self):
        labels = [0] * 5 + [1] * 3 + [2] * 2
        assert sample_triplets(labels, 50, seed=3) == sample_triplets(labels, 50, seed=3)
        assert sample_triplets(labels, 50, seed=3) != sample_triplets(labels, 50, seed=4)

    def test_ids_mapping(self):
        labels = [0, 0, 1, 1]
        ids = [10, 11, 12, 13]
        for t in sample_triplets(labels, 50, seed=1, ids=ids):
            assert {t.q, t.p, t.n} <= set(ids)

    def test_minority_negative_rate_over_90_10(self):
        labels = [0] * 90 + [1] * 10
        trips = sample_triplets(labels, 10_000, seed=5)
        majority_queries = [t for t in trips if labels[t.q] == 0]
        minority_negs = sum(1 for t in majority_queries if labels[t.n] == 1)
        assert minority_negs / len(majority_queries) >= 0.8

    def test_inverse_frequency_weights_chi_square(self):
        # three classes; for queries of class 0 the negatives should split
        # 1/30 : 1/20 between classes 1 and 2, i.e. 0.4 / 0.6
        labels = [0] * 50 + [1] * 30 + [2] * 20
        trips = sample_triplets(labels, 10_000, seed=6)
        zero_queries = [t for t in trips if labels[t.q] == 0]
        n = len(zero_queries)
        got1 = sum(1 for t in zero_queries if labels[t.n] == 1) / n
        for p_expected, got in ((0.4, got1), (0.6, 1.0 - got1)):
            sigma = (p_expected * (1 - p_expected) / n) ** 0.5
            assert abs(got - p_expected) <= 3 * sigma

    def test_query_class_too_small_errors(self):
        labels = [0, 0, 0, 1]  # class 1 has a single member
        with pytest.raises(ConfigError, match="class 1"):
            # enough draws that class 1 is eventually hit as the query
            sample_triplets(labels, 500, seed=7)

    def test_property_fuzz_over_random_specs(self):
        rng = np.random.default_rng(8)
        for trial in range(25):
            n_classes = int(rng.integers(2, 6))
            counts = rng.integers(2, 12, size=n_classes)
            labels = np.repeat(np.arange(n_classes), counts)
            trips = sample_triplets(labels, 40, seed=int(rng.integers(1 << 30)))
            for t in trips:
                assert labels[t.q] == labels[t.p] != labels[t.n]
                assert t.q != t.p
