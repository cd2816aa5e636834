"""Dataset ingestion, synthetic data, triggers, and poisoning."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import nrt
from nrt.data import (PATCH_CORNER_OFFSET, PATTERN_OFFSETS, Dataset,
                      TriggerSpec, apply_trigger, load_idx, load_pgm_mask,
                      make_trigger, poison_dataset, synthetic_dataset,
                      synthetic_splits, write_idx)
from nrt.exceptions import (DataFormatError, IdxCountError, IdxMagicError,
                            IdxTruncatedError, ValidationError)


def small_dataset(rng, n=20, k=4, shape=(1, 8, 8)):
    images = rng.uniform(0, 1, size=(n,) + shape).astype(np.float32)
    labels = rng.integers(0, k, size=n).astype(np.int64)
    return Dataset(images, labels, num_classes=k)


class TestIdx:
    def test_round_trip(self, rng, tmp_path):
        ds = small_dataset(rng, n=12, shape=(1, 6, 5))
        write_idx(ds, tmp_path / "imgs", tmp_path / "lbls")
        back = load_idx(tmp_path / "imgs", tmp_path / "lbls", num_classes=4)
        assert len(back) == 12
        assert back.image_shape == (1, 6, 5)
        np.testing.assert_array_equal(back.labels, ds.labels)
        assert np.abs(back.images - ds.images).max() <= 0.5 / 255

    def test_scaling_endpoints(self, tmp_path):
        images = np.array([[[[0.0, 1.0], [1.0, 0.0]]]], dtype=np.float32)
        ds = Dataset(images, np.array([0]), num_classes=2)
        write_idx(ds, tmp_path / "i", tmp_path / "l")
        back = load_idx(tmp_path / "i", tmp_path / "l", num_classes=2)
        np.testing.assert_array_equal(back.images[0, 0],
                                      [[0.0, 1.0], [1.0, 0.0]])

    def test_bad_magic(self, tmp_path):
        (tmp_path / "i").write_bytes(struct.pack(">IIII", 0xDEAD, 1, 2, 2) + b"\0" * 4)
        (tmp_path / "l").write_bytes(struct.pack(">II", 0x801, 1) + b"\0")
        with pytest.raises(IdxMagicError):
            load_idx(tmp_path / "i", tmp_path / "l")

    def test_count_mismatch(self, tmp_path):
        (tmp_path / "i").write_bytes(struct.pack(">IIII", 0x803, 2, 2, 2) + b"\0" * 8)
        (tmp_path / "l").write_bytes(struct.pack(">II", 0x801, 3) + b"\0" * 3)
        with pytest.raises(IdxCountError):
            load_idx(tmp_path / "i", tmp_path / "l")

    def test_truncated_pixels(self, tmp_path):
        (tmp_path / "i").write_bytes(struct.pack(">IIII", 0x803, 2, 2, 2) + b"\0" * 5)
        (tmp_path / "l").write_bytes(struct.pack(">II", 0x801, 2) + b"\0" * 2)
        with pytest.raises(IdxTruncatedError):
            load_idx(tmp_path / "i", tmp_path / "l")

    def test_empty_file_is_parse_error(self, tmp_path):
        (tmp_path / "i").write_bytes(b"")
        (tmp_path / "l").write_bytes(b"")
        with pytest.raises(IdxTruncatedError):
            load_idx(tmp_path / "i", tmp_path / "l")


class TestSynthetic:
    def test_count_and_balance(self):
        ds = synthetic_dataset(4, 50, shape=(1, 16, 16), seed=7)
        assert len(ds) == 200
        assert np.bincount(ds.labels).tolist() == [50] * 4

    def test_deterministic(self):
        a = synthetic_dataset(3, 10, shape=(1, 16, 16), seed=7)
        b = synthetic_dataset(3, 10, shape=(1, 16, 16), seed=7)
        assert a.images.tobytes() == b.images.tobytes()

    def test_pixel_range(self):
        ds = synthetic_dataset(3, 10, shape=(1, 16, 16), seed=1)
        assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0

    def test_splits_share_classes_not_samples(self):
        train, test = synthetic_splits(3, 10, 10, shape=(1, 16, 16), seed=3)
        assert train.images.tobytes() != test.images.tobytes()
        # class templates match across splits: each train-class mean
        # correlates best with the same test class
        means_tr = [train.images[train.labels == k].mean(axis=0).ravel()
                    for k in range(3)]
        means_te = [test.images[test.labels == k].mean(axis=0).ravel()
                    for k in range(3)]
        for k in range(3):
            corrs = [np.corrcoef(means_tr[k], means_te[j])[0, 1]
                     for j in range(3)]
            assert int(np.argmax(corrs)) == k

    def test_needs_two_classes(self):
        with pytest.raises(ValidationError):
            synthetic_dataset(1, 5, seed=0)


class TestMakeTrigger:
    def test_patch_3x3_mask(self):
        trig = make_trigger("patch", 3, 1.0, 3, (1, 28, 28))
        assert trig.mask.sum() == 9
        r1 = 28 - PATCH_CORNER_OFFSET
        assert trig.mask[0, r1 - 3:r1, r1 - 3:r1].sum() == 9

    def test_single_pixel_patch(self):
        trig = make_trigger("patch", 1, 0.5, 0, (1, 28, 28))
        assert trig.mask.sum() == 1

    def test_patch_too_large(self):
        with pytest.raises(ValidationError):
            make_trigger("patch", 28, 1.0, 0, (1, 28, 28))

    def test_watermark_support_equals_stencil(self, rng):
        stencil = (rng.uniform(size=(28, 28)) > 0.8).astype(np.float32)
        trig = make_trigger("watermark", stencil, 1.0, 2, (1, 28, 28))
        np.testing.assert_array_equal(trig.mask[0], stencil)

    def test_default_pattern_pixel_count(self):
        trig = make_trigger("pattern", None, 1.0, 1, (1, 28, 28))
        assert trig.mask.sum() == len(PATTERN_OFFSETS)
        for dr, dc in PATTERN_OFFSETS:
            assert trig.mask[0, 27 - dr, 27 - dc] == 1.0

    def test_non_binary_mask_rejected(self, rng):
        stencil = rng.uniform(size=(28, 28)).astype(np.float32)
        with pytest.raises(ValidationError):
            make_trigger("watermark", stencil, 1.0, 0, (1, 28, 28))

    def test_trigger_spec_validation(self):
        with pytest.raises(ValidationError):
            TriggerSpec(np.ones((1, 4, 4), dtype=np.float32), -0.5, 0, "patch")
        with pytest.raises(ValidationError):
            TriggerSpec(np.ones((1, 4, 4), dtype=np.float32), 1.0, 0, "blob")

    def test_trigger_json_round_trip(self):
        trig = make_trigger("patch", 2, 0.75, 4, (1, 16, 16))
        back = TriggerSpec.from_json(trig.to_json())
        np.testing.assert_array_equal(back.mask, trig.mask)
        assert back.alpha == trig.alpha
        assert back.target_class == trig.target_class


class TestApplyTrigger:
    def test_alpha_one_saturates(self, rng):
        x = rng.uniform(0, 1, size=(1, 28, 28)).astype(np.float32)
        trig = make_trigger("patch", 3, 1.0, 0, (1, 28, 28))
        y = apply_trigger(x, trig)
        assert np.all(y[trig.mask > 0] == 1.0)

    def test_alpha_zero_identity(self, rng):
        x = rng.uniform(0, 1, size=(1, 28, 28)).astype(np.float32)
        trig = make_trigger("patch", 3, 0.0, 0, (1, 28, 28))
        np.testing.assert_array_equal(apply_trigger(x, trig), x)

    def test_half_alpha_on_zero_image(self):
        trig = make_trigger("patch", 3, 0.5, 0, (1, 28, 28))
        y = apply_trigger(np.zeros((1, 28, 28), dtype=np.float32), trig)
        assert np.all(y[trig.mask > 0] == 0.5)
        assert np.all(y[trig.mask == 0] == 0.0)

    def test_input_unmodified(self, rng):
        x = rng.uniform(0, 1, size=(1, 28, 28)).astype(np.float32)
        before = x.tobytes()
        apply_trigger(x, make_trigger("patch", 3, 1.0, 0, (1, 28, 28)))
        assert x.tobytes() == before

    def test_idempotent_for_alpha_ge_one(self, rng):
        x = rng.uniform(0, 1, size=(1, 28, 28)).astype(np.float32)
        trig = make_trigger("patch", 3, 1.5, 0, (1, 28, 28))
        once = apply_trigger(x, trig)
        np.testing.assert_array_equal(apply_trigger(once, trig), once)

    @settings(max_examples=40, deadline=None)
    @given(alpha=st.floats(0, 4),
           pixels=hnp.arrays(np.float32, (1, 6, 6),
                             elements=st.floats(0, 1, width=32)))
    def test_output_stays_in_unit_range(self, alpha, pixels):
        trig = make_trigger("patch", 2, alpha, 0, (1, 6, 6))
        y = apply_trigger(pixels, trig)
        assert y.min() >= 0.0 and y.max() <= 1.0


class TestPoisonDataset:
    def test_exact_count_and_labels(self, rng):
        ds = small_dataset(rng, n=40)
        trig = make_trigger("patch", 2, 1.0, 2, (1, 8, 8))
        poisoned, report = poison_dataset(ds, trig, 0.25, seed=0)
        assert len(report.poisoned_indices) == 10
        assert np.all(poisoned.labels[report.poisoned_indices] == 2)

    def test_untouched_items_bit_identical(self, rng):
        ds = small_dataset(rng, n=40)
        trig = make_trigger("patch", 2, 1.0, 2, (1, 8, 8))
        poisoned, report = poison_dataset(ds, trig, 0.25, seed=0)
        rest = np.setdiff1d(np.arange(40), report.poisoned_indices)
        assert poisoned.images[rest].tobytes() == ds.images[rest].tobytes()
        np.testing.assert_array_equal(poisoned.labels[rest], ds.labels[rest])

    def test_deterministic(self, rng):
        ds = small_dataset(rng, n=40)
        trig = make_trigger("patch", 2, 1.0, 2, (1, 8, 8))
        a, ra = poison_dataset(ds, trig, 0.5, seed=9)
        b, rb = poison_dataset(ds, trig, 0.5, seed=9)
        assert a.images.tobytes() == b.images.tobytes()
        np.testing.assert_array_equal(ra.poisoned_indices, rb.poisoned_indices)

    def test_fraction_validation(self, rng):
        ds = small_dataset(rng)
        trig = make_trigger("patch", 2, 1.0, 2, (1, 8, 8))
        for bad in (0.0, -0.1, 1.5):
            with pytest.raises(ValidationError):
                poison_dataset(ds, trig, bad, seed=0)

    def test_zero_rounding_rejected(self, rng):
        ds = small_dataset(rng, n=20)
        trig = make_trigger("patch", 2, 1.0, 2, (1, 8, 8))
        with pytest.raises(ValidationError):
            poison_dataset(ds, trig, 0.01, seed=0)   # rounds to 0 of 20

    def test_target_class_range(self, rng):
        ds = small_dataset(rng, k=4)
        trig = make_trigger("patch", 2, 1.0, 9, (1, 8, 8))
        with pytest.raises(ValidationError):
            poison_dataset(ds, trig, 0.5, seed=0)

    def test_pixels_stay_in_range(self, rng):
        ds = small_dataset(rng, n=30)
        trig = make_trigger("patch", 3, 2.5, 1, (1, 8, 8))
        poisoned, _ = poison_dataset(ds, trig, 1.0, seed=0)
        assert poisoned.images.min() >= 0.0 and poisoned.images.max() <= 1.0


class TestPgm:
    def write_pgm(self, path, arr, comment=False):
        h, w = arr.shape
        header = b"P5\n"
        if comment:
            header += b"# stencil\n"
        header += f"{w} {h}\n255\n".encode()
        path.write_bytes(header + arr.astype(np.uint8).tobytes())

    def test_threshold_at_128(self, tmp_path):
        arr = np.array([[0, 127], [128, 255]], dtype=np.uint8)
        self.write_pgm(tmp_path / "s.pgm", arr)
        mask = load_pgm_mask(tmp_path / "s.pgm")
        np.testing.assert_array_equal(mask, [[0, 0], [1, 1]])

    def test_comment_lines(self, tmp_path):
        arr = np.full((3, 4), 200, dtype=np.uint8)
        self.write_pgm(tmp_path / "s.pgm", arr, comment=True)
        assert load_pgm_mask(tmp_path / "s.pgm").sum() == 12

    def test_wrong_format_rejected(self, tmp_path):
        (tmp_path / "s.pgm").write_bytes(b"P2\n2 2\n255\n0 0 0 0")
        with pytest.raises(DataFormatError):
            load_pgm_mask(tmp_path / "s.pgm")

    def test_truncated_pixels(self, tmp_path):
        (tmp_path / "s.pgm").write_bytes(b"P5\n4 4\n255\n\0\0")
        with pytest.raises(DataFormatError):
            load_pgm_mask(tmp_path / "s.pgm")


class TestDatasetInvariants:
    def test_length_mismatch(self, rng):
        with pytest.raises(ValidationError):
            Dataset(rng.uniform(size=(5, 1, 4, 4)).astype(np.float32),
                    np.zeros(4, dtype=np.int64), num_classes=2)

    def test_pixel_out_of_range(self):
        with pytest.raises(ValidationError):
            Dataset(np.full((2, 1, 4, 4), 1.5, dtype=np.float32),
                    np.zeros(2, dtype=np.int64), num_classes=2)

    def test_label_out_of_range(self, rng):
        with pytest.raises(ValidationError):
            Dataset(rng.uniform(size=(2, 1, 4, 4)).astype(np.float32),
                    np.array([0, 5], dtype=np.int64), num_classes=2)
