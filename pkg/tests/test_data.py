import os
import struct

import numpy as np
import pytest

from njet import data
from njet.data import (IDXCountMismatchError, IDXMagicError, IDXTruncatedError, LabeledDataset,
                       load_idx, make_multiscale, synth_blobs, write_idx)


@pytest.fixture
def idx_pair(tmp_path):
    rng = np.random.default_rng(0)
    imgs = rng.integers(0, 256, size=(5, 28, 28), dtype=np.uint8)
    labels = np.array([3, 1, 4, 1, 5], dtype=np.uint8)
    ip, lp = tmp_path / "img", tmp_path / "lab"
    write_idx(imgs, labels, ip, lp)
    return ip, lp, imgs, labels


def test_roundtrip(idx_pair):
    ip, lp, imgs, labels = idx_pair
    ds = load_idx(ip, lp)
    assert ds.images.shape == (5, 1, 28, 28) and ds.class_count == 10
    np.testing.assert_array_equal(np.rint(ds.images[:, 0] * 255).astype(np.uint8), imgs)
    np.testing.assert_array_equal(ds.labels, labels)
    assert ds.images.min() >= 0 and ds.images.max() <= 1


def test_header_is_big_endian(idx_pair):
    ip, lp, *_ = idx_pair
    assert struct.unpack(">IIII", ip.read_bytes()[:16]) == (0x803, 5, 28, 28)
    assert struct.unpack(">II", lp.read_bytes()[:8]) == (0x801, 5)


def test_empty_file_is_truncated(idx_pair, tmp_path):
    ip, lp, *_ = idx_pair
    empty = tmp_path / "empty"
    empty.write_bytes(b"")
    with pytest.raises(IDXTruncatedError):
        load_idx(empty, lp)


def test_truncated_payload(idx_pair, tmp_path):
    ip, lp, *_ = idx_pair
    short = tmp_path / "short"
    short.write_bytes(ip.read_bytes()[:-10])
    with pytest.raises(IDXTruncatedError):
        load_idx(short, lp)


def test_bad_magic(idx_pair):
    ip, lp, *_ = idx_pair
    with pytest.raises(IDXMagicError):
        load_idx(lp, lp)


def test_count_mismatch(idx_pair, tmp_path):
    ip, lp, imgs, labels = idx_pair
    write_idx(imgs[:4], labels[:4], tmp_path / "i4", tmp_path / "l4")
    with pytest.raises(IDXCountMismatchError):
        load_idx(ip, tmp_path / "l4")


def test_error_classes_are_distinct():
    assert len({IDXMagicError, IDXTruncatedError, IDXCountMismatchError}) == 3
    assert not issubclass(IDXMagicError, IDXTruncatedError)


@pytest.mark.skipif(not os.environ.get("NJET_DATA_DIR"), reason="NJET_DATA_DIR not set")
def test_real_mnist_shapes():
    ds = data.load_mnist(split="train")
    assert ds.image_shape == (1, 28, 28) and ds.class_count == 10
    assert set(np.unique(ds.labels)) == set(range(10))


def _toy_ds(n=6, size=28):
    rng = np.random.default_rng(1)
    return LabeledDataset(rng.random((n, 1, size, size)).astype(np.float32),
                          rng.integers(0, 10, n), 10)


def test_multiscale_identity():
    ds = _toy_ds()
    out = make_multiscale(ds, 1.0)
    np.testing.assert_array_equal(out.images, ds.images)
    np.testing.assert_array_equal(out.labels, ds.labels)


@pytest.mark.parametrize("factor,size", [(2.0, 56), (4.0, 112), (1.5, 42)])
def test_multiscale_sizes(factor, size):
    out = make_multiscale(_toy_ds(2), factor)
    assert out.images.shape == (2, 1, size, size)
    assert out.images.min() >= 0 and out.images.max() <= 1


def test_multiscale_commutes_with_slicing():
    ds = _toy_ds(8)
    a = make_multiscale(ds, 1.5)[2:5]
    b = make_multiscale(ds[2:5], 1.5)
    np.testing.assert_array_equal(a.images, b.images)


def test_blobs_deterministic():
    a, b = synth_blobs(20, 28, 1.0, seed=3), synth_blobs(20, 28, 1.0, seed=3)
    assert a.images.tobytes() == b.images.tobytes()
    np.testing.assert_array_equal(a.labels, b.labels)


@pytest.mark.parametrize("n", [1, 7, 10])
def test_blobs_balance(n):
    ds = synth_blobs(n, 28, 1.0, seed=0)
    assert (ds.labels == 0).sum() == (n + 1) // 2
    assert (ds.labels == 1).sum() == n // 2


def _second_moment(img):
    yy, xx = np.indices(img.shape)
    w = img / img.sum()
    cy, cx = (w * yy).sum(), (w * xx).sum()
    return (w * ((yy - cy) ** 2 + (xx - cx) ** 2)).sum()


def test_blob_second_moment_scales_quadratically():
    one = synth_blobs(21, 28, 1.0, seed=5)
    two = synth_blobs(21, 56, 2.0, seed=5)
    m1 = np.mean([_second_moment(im[0]) for im, l in zip(one.images, one.labels) if l == 0])
    m2 = np.mean([_second_moment(im[0]) for im, l in zip(two.images, two.labels) if l == 0])
    assert m2 / m1 == pytest.approx(4.0, rel=0.05)


def test_blobs_range_and_fit():
    ds = synth_blobs(10, 28, 2.0, seed=1)
    assert ds.images.min() >= 0 and ds.images.max() <= 1
    with pytest.raises(ValueError):
        synth_blobs(4, 16, 3.0)


def test_dataset_validation():
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((2, 1, 4, 4)), np.array([0, 5]), 3)
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((2, 1, 4, 4)), np.array([0]), 3)


def test_blob_jitter_and_noise_keep_positions():
    clean = synth_blobs(12, 28, 1.0, seed=2)
    jit = synth_blobs(12, 28, 1.0, seed=2, jitter=0.5)
    ratio = jit.images.max(axis=(1, 2, 3)) / clean.images.max(axis=(1, 2, 3))
    assert np.all((ratio >= 0.5 - 1e-6) & (ratio <= 1 + 1e-6))
    np.testing.assert_array_equal(jit.images.argmax(axis=3), clean.images.argmax(axis=3))
    noisy = synth_blobs(12, 28, 1.0, seed=2, noise=0.1)
    assert noisy.images.min() >= 0 and noisy.images.max() <= 1
    assert np.abs(noisy.images - clean.images).mean() > 0.01
    with pytest.raises(ValueError):
        synth_blobs(2, jitter=1.0)
    with pytest.raises(ValueError):
        synth_blobs(2, noise=-0.1)
