"""Dataset loading, preprocessing and cache tests."""

import gzip
import math

import numpy as np
import pytest

from qr_datasets import (
    IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC,
    LCEI_HIGH,
    LCEI_LOW,
    LETTER_CODES,
    Dataset,
    Sample,
    central_window,
    gen_lcei,
    load_dataset,
    load_emnist,
    quadratic_kernel,
    read_idx,
    resize_image,
    resize_matrix,
    save_dataset,
)
from qr_errors import DataError, FileOperationError, ValidationError
from qr_testing import reference_resize


def _write_idx(path, magic, array, compress=False):
    header = magic.to_bytes(4, "big") + b"".join(int(d).to_bytes(4, "big") for d in array.shape)
    payload = header + np.ascontiguousarray(array, dtype=np.uint8).tobytes()
    if compress:
        with gzip.open(path.with_name(path.name + ".gz"), "wb") as handle:
            handle.write(payload)
    else:
        path.write_bytes(payload)


def _write_emnist(directory, codes, rng, compress=False):
    images = rng.integers(0, 256, size=(len(codes), 28, 28)).astype(np.uint8)
    _write_idx(directory / "emnist-letters-train-images-idx3-ubyte", IDX_IMAGES_MAGIC, images, compress)
    _write_idx(directory / "emnist-letters-train-labels-idx1-ubyte", IDX_LABELS_MAGIC, np.array(codes), compress)
    return images


def test_read_idx_plain_and_gzip(tmp_path, rng):
    data = rng.integers(0, 256, size=(3, 4, 5)).astype(np.uint8)
    _write_idx(tmp_path / "plain", IDX_IMAGES_MAGIC, data)
    _write_idx(tmp_path / "packed", IDX_IMAGES_MAGIC, data, compress=True)
    np.testing.assert_array_equal(read_idx(tmp_path / "plain"), data)
    np.testing.assert_array_equal(read_idx(tmp_path / "packed"), data)


def test_read_idx_rejects_bad_files(tmp_path):
    (tmp_path / "magic").write_bytes(b"\x00\x00\x09\x99" + b"\x00" * 8)
    with pytest.raises(DataError):
        read_idx(tmp_path / "magic")
    (tmp_path / "short").write_bytes(IDX_LABELS_MAGIC.to_bytes(4, "big") + (5).to_bytes(4, "big") + b"\x01\x02")
    with pytest.raises(DataError):
        read_idx(tmp_path / "short")
    with pytest.raises(DataError):
        read_idx(tmp_path / "absent")


def test_quadratic_kernel_values():
    assert quadratic_kernel(np.array([0.0]))[0] == pytest.approx(1.0)
    assert quadratic_kernel(np.array([1.0]))[0] == pytest.approx(0.0)
    assert quadratic_kernel(np.array([0.5]))[0] == pytest.approx(0.5)
    assert quadratic_kernel(np.array([2.0]))[0] == 0.0


def test_resize_rows_sum_to_one():
    matrix = resize_matrix(28, 15)
    np.testing.assert_allclose(matrix.sum(axis=1), 1.0)
    np.testing.assert_allclose(resize_matrix(15, 15), np.eye(15), atol=1e-12)


@pytest.mark.parametrize("size", [15, 10, 40])
def test_resize_matches_pointwise_reference(size, rng):
    image = rng.uniform(0.0, 1.0, size=(28, 28))
    np.testing.assert_allclose(resize_image(image, size), reference_resize(image, size), atol=1e-12)


def test_central_window():
    image = np.arange(225).reshape(15, 15)
    window = central_window(image, 13)
    assert window.shape == (13, 13)
    assert window[0, 0] == image[1, 1]
    with pytest.raises(ValidationError):
        central_window(image, 16)


def test_gen_lcei_is_deterministic():
    train_a, test_a = gen_lcei(6, 20, 30, seed=3)
    train_b, test_b = gen_lcei(6, 20, 30, seed=3)
    assert train_a.digest() == train_b.digest()
    assert test_a.digest() == test_b.digest()
    assert gen_lcei(6, 20, 30, seed=4)[0].digest() != train_a.digest()


def test_gen_lcei_class_intervals(lcei_splits):
    train, test = lcei_splits
    assert len(train) == 16 and len(test) == 8
    for sample in list(train) + list(test):
        lo, hi = LCEI_HIGH if sample.label == 1 else LCEI_LOW
        assert np.all(sample.features == sample.features[0])
        assert lo <= sample.features[0] <= hi
    assert train.feature_range == (0.0, math.pi)
    assert set(train.ids()).isdisjoint(test.ids())


def test_gen_lcei_per_qubit_angles_vary():
    train, _ = gen_lcei(5, 10, 12, seed=1, per_qubit=True)
    assert any(np.ptp(s.features) > 0 for s in train)


def test_gen_lcei_needs_a_test_split():
    with pytest.raises(ValidationError):
        gen_lcei(4, 5, 10)


def test_load_emnist_selects_and_orients(tmp_path, rng):
    codes = [LETTER_CODES["Q"]] * 4 + [LETTER_CODES["T"]] * 4 + [LETTER_CODES["A"]] * 3
    images = _write_emnist(tmp_path, codes, rng)
    train, test = load_emnist(tmp_path, per_class=4, train_size=5, seed=2, resolution=28, window=28)
    assert len(train) == 5 and len(test) == 3
    for sample in list(train) + list(test):
        assert codes[sample.sample_id] == (LETTER_CODES["Q"], LETTER_CODES["T"])[sample.label]
        expected = images[sample.sample_id].T.astype(np.float64) / 255.0 * math.pi
        np.testing.assert_allclose(sample.features, expected.ravel(), atol=1e-12)


def test_load_emnist_default_shape(tmp_path, rng):
    codes = [LETTER_CODES["Q"]] * 3 + [LETTER_CODES["T"]] * 3
    _write_emnist(tmp_path, codes, rng, compress=True)
    train, _ = load_emnist(tmp_path, per_class=3, train_size=4)
    assert train.num_features == 169
    assert train.feature_range == (0.0, math.pi)
    raw, _ = load_emnist(tmp_path, per_class=3, train_size=4, representation="raw")
    assert raw.num_features == 225
    assert raw.feature_range == (0.0, 1.0)


def test_missing_emnist_names_the_files(tmp_path):
    with pytest.raises(DataError) as info:
        load_emnist(tmp_path, per_class=3, train_size=4)
    assert "emnist-letters-train-images-idx3-ubyte" in str(info.value)


def test_synthetic_fallback(tmp_path):
    train, test = load_emnist(tmp_path, per_class=6, train_size=8, synthetic_fallback=True)
    assert train.metadata["source"] == "synthetic"
    assert len(train) + len(test) == 12


def test_too_few_images_for_a_class(tmp_path, rng):
    _write_emnist(tmp_path, [LETTER_CODES["Q"]] * 4 + [LETTER_CODES["T"]] * 2, rng)
    with pytest.raises(DataError):
        load_emnist(tmp_path, per_class=3, train_size=4)


def test_sample_and_dataset_validation():
    with pytest.raises(ValidationError):
        Sample(np.zeros(3), 2, 0)
    with pytest.raises(ValidationError):
        Dataset((Sample(np.zeros(2), 0, 1), Sample(np.zeros(2), 1, 1)), "train", (0.0, 1.0))
    with pytest.raises(ValidationError):
        Dataset((), "train", (1.0, 1.0))


def test_dataset_lookup_and_take(emnist_like_dataset):
    assert emnist_like_dataset.by_id(103).label == 1
    with pytest.raises(DataError):
        emnist_like_dataset.by_id(5)
    assert len(emnist_like_dataset.take(4)) == 4
    assert emnist_like_dataset.class_counts() == {0: 5, 1: 5}


def test_cache_preserves_content(tmp_path, lcei_splits):
    train, _ = lcei_splits
    path = save_dataset(tmp_path / "train.npz", train)
    loaded = load_dataset(path)
    assert loaded.digest() == train.digest()
    assert loaded.split == "train" and loaded.task == "lcei"
    assert loaded.metadata["seed"] == 5


def test_unreadable_cache(tmp_path):
    (tmp_path / "bad.npz").write_text("nope")
    with pytest.raises(FileOperationError):
        load_dataset(tmp_path / "bad.npz")
