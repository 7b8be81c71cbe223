import gzip
import struct
import warnings

import numpy as np
import pytest

import oracles
from sepgconv import tensorio
from sepgconv.data import (DataFormatError, LabeledImageSet, batches, load_amat, load_bundled_digits, load_directory,
                           load_idx, rotate_image, synth_rotated, synth_split, write_directory, write_idx)


def _idx_files(tmp_path, pixels: np.ndarray, labels: np.ndarray):
    img, lab = tmp_path / "img", tmp_path / "lab"
    N, H, W = pixels.shape
    img.write_bytes(struct.pack(">IIII", 0x803, N, H, W) + pixels.astype(np.uint8).tobytes())
    lab.write_bytes(struct.pack(">II", 0x801, N) + labels.astype(np.uint8).tobytes())
    return img, lab


def test_idx_single_white_image(tmp_path):
    img, lab = _idx_files(tmp_path, np.full((1, 28, 28), 255), np.array([3]))
    data = load_idx(img, lab)
    assert data.images.shape == (1, 1, 28, 28) and np.all(data.images == 1.0)
    assert data.labels.tolist() == [3]


def test_idx_bad_magic_reports_offset(tmp_path):
    img, lab = _idx_files(tmp_path, np.zeros((1, 2, 2)), np.array([0]))
    img.write_bytes(b"\x00\x00\x08\x04" + img.read_bytes()[4:])
    with pytest.raises(DataFormatError, match="offset 0"):
        load_idx(img, lab)


def test_idx_truncated_and_mismatched(tmp_path):
    img, lab = _idx_files(tmp_path, np.zeros((2, 3, 3)), np.array([0, 1]))
    blob = img.read_bytes()
    img.write_bytes(blob[:-1])
    with pytest.raises(DataFormatError, match="truncated"):
        load_idx(img, lab)
    img.write_bytes(blob)
    lab.write_bytes(struct.pack(">II", 0x801, 1) + b"\x00")
    with pytest.raises(DataFormatError, match="2 images"):
        load_idx(img, lab)


def test_idx_round_trip_and_gzip(tmp_path, rng):
    pixels = rng.integers(0, 256, size=(5, 28, 28))
    data = LabeledImageSet((pixels / 255.0).astype(np.float32)[:, None], rng.integers(0, 10, 5))
    write_idx(tmp_path / "i", tmp_path / "l", data)
    back = load_idx(tmp_path / "i", tmp_path / "l")
    assert np.array_equal(back.images, data.images) and np.array_equal(back.labels, data.labels)
    (tmp_path / "i.gz").write_bytes(gzip.compress((tmp_path / "i").read_bytes()))
    assert np.array_equal(load_idx(tmp_path / "i.gz", tmp_path / "l").images, data.images)


def _amat_line(values, label):
    return " ".join(f"{v:.6f}" for v in values) + f" {label}\n"


def test_amat_zero_line(tmp_path):
    path = tmp_path / "x.amat"
    path.write_text(_amat_line(np.zeros(784), "7.000000"))
    data = load_amat(path)
    assert data.labels.tolist() == [7] and not data.images.any()


def test_amat_field_count_names_line(tmp_path):
    path = tmp_path / "x.amat"
    path.write_text(_amat_line(np.zeros(784), 1) + _amat_line(np.zeros(785), 2))
    with pytest.raises(DataFormatError, match=":2:"):
        load_amat(path)


def test_amat_label_must_be_integral(tmp_path):
    path = tmp_path / "x.amat"
    path.write_text(_amat_line(np.zeros(784), "2.5"))
    with pytest.raises(DataFormatError, match=":1:"):
        load_amat(path)


def test_amat_clamps_with_warning(tmp_path):
    values = np.zeros(784)
    values[:3] = [1.5, -0.2, 0.5]
    path = tmp_path / "x.amat"
    path.write_text(_amat_line(values, 4))
    with pytest.warns(UserWarning, match="clamped 2"):
        data = load_amat(path)
    assert data.n_clamped == 2
    assert data.images.min() == 0.0 and data.images.max() == 1.0


def test_rotation_zero_is_identity(rng):
    img = rng.uniform(0, 1, (28, 28))
    np.testing.assert_allclose(rotate_image(img, 0.0), img, atol=1e-12)


def test_rotation_ninety_matches_exact_permutation(rng):
    img = rng.uniform(0, 1, (28, 28))
    np.testing.assert_allclose(rotate_image(img, 90.0), oracles.rotate90_exact(img), atol=1e-6)


def test_synth_rotated_deterministic_and_label_preserving():
    base = load_bundled_digits().subset(np.arange(40))
    a, b = synth_rotated(base, seed=9), synth_rotated(base, seed=9)
    assert np.array_equal(a.images, b.images)
    assert np.array_equal(a.labels, base.labels)
    assert a.images.min() >= 0 and a.images.max() <= 1
    assert not np.array_equal(synth_rotated(base, seed=10).images, a.images)
    forced = synth_rotated(base, seed=0, angles=np.zeros(40))
    np.testing.assert_allclose(forced.images, base.images, atol=1e-6)


def test_bundled_digits_shape():
    data = load_bundled_digits()
    assert data.images.shape == (5000, 1, 28, 28)
    assert np.bincount(data.labels).tolist() == [500] * 10


def test_synth_split_disjoint_and_balanced():
    train, test = synth_split(200, 100, seed=1)
    assert len(train) == 200 and len(test) == 100
    assert np.bincount(train.labels, minlength=10).tolist() == [20] * 10
    assert "rot" in train.provenance
    with pytest.raises(ValueError):
        synth_split(4000, 2000, seed=0)


def test_batches_sizes_and_order():
    data = LabeledImageSet(np.zeros((10, 1, 2, 2), np.float32), np.arange(10) % 10)
    sizes = [len(y) for _, y in batches(data, 4, shuffle=False)]
    assert sizes == [4, 4, 2]
    assert np.concatenate([y for _, y in batches(data, 4, shuffle=False)]).tolist() == list(range(10))
    shuffled = np.concatenate([y for _, y in batches(data, 3, seed=4)])
    assert sorted(shuffled.tolist()) == list(range(10))
    again = np.concatenate([y for _, y in batches(data, 3, seed=4)])
    assert np.array_equal(shuffled, again)
    with pytest.raises(ValueError):
        next(batches(data, 0))
    with pytest.raises(ValueError):
        next(batches(data.subset([]), 2))


def test_image_set_validation():
    with pytest.raises(ValueError):
        LabeledImageSet(np.zeros((2, 1, 4, 4)), [0, 10])
    with pytest.raises(ValueError):
        LabeledImageSet(np.zeros((2, 4, 4)), [0, 1])


def test_directory_round_trip(tmp_path):
    train, test = synth_split(30, 20, seed=3)
    write_directory(tmp_path / "d", train, test)
    tr, te = load_directory(tmp_path / "d")
    assert tr.provenance == train.provenance
    np.testing.assert_allclose(tr.images, train.images, atol=0.5 / 255 + 1e-7)
    assert np.array_equal(te.labels, test.labels)
    cached = tensorio.load(tmp_path / "d" / "train-images.sgt")
    assert np.array_equal(cached, train.images)
    with pytest.raises(FileNotFoundError):
        load_directory(tmp_path / "missing")


def test_directory_with_amat_files(tmp_path):
    for name, label in (("mnist_train.amat", 1), ("mnist_test.amat", 2)):
        (tmp_path / name).write_text(_amat_line(np.zeros(784), label))
    tr, te = load_directory(tmp_path)
    assert tr.labels.tolist() == [1] and te.labels.tolist() == [2]
    assert tr.provenance == "rotated-mnist-amat"


# ---------------------------------------------------------------------------
# SGT1 tensor files
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_sgt_round_trip(tmp_path, rng, dtype):
    a = rng.standard_normal((2, 3, 4)).astype(dtype)
    tensorio.save(tmp_path / "a.sgt", a)
    b = tensorio.load(tmp_path / "a.sgt")
    assert b.dtype == dtype and np.array_equal(a, b)
    raw = (tmp_path / "a.sgt").read_bytes()
    assert raw[:4] == b"SGT1" and raw[4] == (0 if dtype == np.float32 else 1) and raw[5] == 3
    assert struct.unpack_from("<3I", raw, 6) == (2, 3, 4)


def test_sgt_scalar_and_errors():
    assert tensorio.decode(tensorio.encode(np.float64(2.5))) == 2.5
    with pytest.raises(tensorio.TensorFormatError, match="magic"):
        tensorio.decode(b"XXXX\x00\x00")
    with pytest.raises(tensorio.TensorFormatError, match="dtype"):
        tensorio.decode(b"SGT1\x07\x00")
    with pytest.raises(tensorio.TensorFormatError, match="offset 10"):
        tensorio.decode(tensorio.encode(np.zeros(3))[:-1])
    with pytest.raises(TypeError):
        tensorio.encode(np.zeros(3, np.int32))


def test_no_warnings_on_clean_amat(tmp_path):
    path = tmp_path / "x.amat"
    path.write_text(_amat_line(np.full(784, 0.5), 0))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert load_amat(path).n_clamped == 0
