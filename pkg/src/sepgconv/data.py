"""Digit datasets: IDX and amat readers, rotated-digit synthesis, batching."""

from __future__ import annotations

import gzip
import math
import os
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy import ndimage

from . import tensorio

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
N_CLASSES = 10


class DataFormatError(ValueError):
    pass


@dataclass
class LabeledImageSet:
    images: np.ndarray  # [N, 1, H, W], values in [0, 1]
    labels: np.ndarray  # [N] int64 in [0, 9]
    provenance: str = "unknown"
    n_clamped: int = 0
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[1] != 1:
            raise ValueError(f"images must be [N, 1, H, W], got shape {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= N_CLASSES):
            raise ValueError(f"labels must lie in [0, {N_CLASSES})")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, index) -> "LabeledImageSet":
        index = np.asarray(index)
        if index.size == 0:
            index = index.astype(np.intp)
        return LabeledImageSet(self.images[index], self.labels[index], self.provenance)


def _open(path: str | os.PathLike) -> bytes:
    path = Path(path)
    with (gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")) as fh:
        return fh.read()


# ---------------------------------------------------------------------------
# IDX
# ---------------------------------------------------------------------------


def _parse_idx(buf: bytes, magic: int, ndim: int, source: str) -> np.ndarray:
    if len(buf) < 4:
        raise DataFormatError(f"{source}: truncated at offset 0, file has {len(buf)} bytes")
    (found,) = struct.unpack_from(">I", buf, 0)
    if found != magic:
        raise DataFormatError(f"{source}: bad magic 0x{found:08x} at offset 0, expected 0x{magic:08x}")
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise DataFormatError(f"{source}: truncated dimension header at offset 4")
    dims = struct.unpack_from(f">{ndim}I", buf, 4)
    n = int(np.prod(dims, dtype=np.int64))
    if len(buf) - header < n:
        raise DataFormatError(
            f"{source}: truncated payload at offset {len(buf)}, expected {n} bytes after offset {header}"
        )
    if len(buf) - header > n:
        raise DataFormatError(f"{source}: {len(buf) - header - n} trailing bytes after offset {header + n}")
    return np.frombuffer(buf, dtype=np.uint8, count=n, offset=header).reshape(dims)


def load_idx(images_path, labels_path) -> LabeledImageSet:
    """Read an IDX image/label pair (optionally gzipped); pixels scaled by 1/255."""
    imgs = _parse_idx(_open(images_path), IMAGE_MAGIC, 3, str(images_path))
    labels = _parse_idx(_open(labels_path), LABEL_MAGIC, 1, str(labels_path))
    if len(imgs) != len(labels):
        raise DataFormatError(
            f"{images_path} holds {len(imgs)} images but {labels_path} holds {len(labels)} labels"
        )
    if labels.size and labels.max() >= N_CLASSES:
        raise DataFormatError(f"{labels_path}: label {labels.max()} outside [0, {N_CLASSES})")
    images = (imgs.astype(np.float32) / 255.0)[:, None]
    return LabeledImageSet(images, labels.astype(np.int64), provenance="idx")


def write_idx(images_path, labels_path, data: LabeledImageSet) -> None:
    pixels = np.clip(np.rint(data.images[:, 0] * 255.0), 0, 255).astype(np.uint8)
    N, H, W = pixels.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGE_MAGIC, N, H, W))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", LABEL_MAGIC, N))
        fh.write(data.labels.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# amat (Rotated MNIST benchmark text files)
# ---------------------------------------------------------------------------


def load_amat(path, side: int = 28) -> LabeledImageSet:
    """One sample per line: ``side*side`` pixel values in [0, 1] then the label."""
    n_pix = side * side
    rows, labels = [], []
    clamped = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != n_pix + 1:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {n_pix + 1} fields, found {len(fields)}"
                )
            try:
                values = np.array(fields[:n_pix], dtype=np.float64)
                label_value = float(fields[-1])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            if not np.all(np.isfinite(values)):
                raise DataFormatError(f"{path}:{lineno}: non-finite pixel value")
            if label_value != int(label_value) or not 0 <= label_value < N_CLASSES:
                raise DataFormatError(f"{path}:{lineno}: label {fields[-1]!r} is not an integer in [0, 9]")
            out_of_range = int(np.count_nonzero((values < 0) | (values > 1)))
            if out_of_range:
                clamped += out_of_range
                values = np.clip(values, 0.0, 1.0)
            rows.append(values)
            labels.append(int(label_value))
    if clamped:
        warnings.warn(f"{path}: clamped {clamped} pixel values outside [0, 1]", stacklevel=2)
    images = np.array(rows, dtype=np.float32).reshape(-1, 1, side, side)
    return LabeledImageSet(images, np.array(labels, dtype=np.int64), provenance="amat", n_clamped=clamped)


# ---------------------------------------------------------------------------
# bundled digits
# ---------------------------------------------------------------------------


def load_bundled_digits() -> LabeledImageSet:
    """The 5000-digit MNIST subset (500 per class) shipped with mlxtend."""
    from importlib import resources

    path = resources.files("mlxtend.data").joinpath("data", "mnist_5k.csv.gz")
    with resources.as_file(path) as p:
        raw = np.loadtxt(gzip.open(p), delimiter=",", dtype=np.float32)
    images = (raw[:, :-1] / 255.0).reshape(-1, 1, 28, 28)
    return LabeledImageSet(images, raw[:, -1].astype(np.int64), provenance="mnist-5k")


def load_directory(path) -> tuple[LabeledImageSet, LabeledImageSet]:
    """Train/test sets from a directory of IDX pairs or Rotated-MNIST amat files.

    IDX files use the MNIST names (``train-images-idx3-ubyte`` and friends,
    optionally ``.gz``).  A ``provenance.txt`` file, as written by
    :func:`write_directory`, overrides the provenance tag.
    """
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"data directory {path} does not exist")
    amat_train = sorted(path.glob("*train*.amat"))
    amat_test = sorted(path.glob("*test*.amat"))
    if amat_train and amat_test:
        train, test = load_amat(amat_train[0]), load_amat(amat_test[0])
        train.provenance = test.provenance = "rotated-mnist-amat"
        return train, test

    def find(stem):
        for name in (stem, stem + ".gz"):
            if (path / name).exists():
                return path / name
        raise FileNotFoundError(f"{path}: missing {stem}[.gz]")

    train = load_idx(find("train-images-idx3-ubyte"), find("train-labels-idx1-ubyte"))
    test = load_idx(find("t10k-images-idx3-ubyte"), find("t10k-labels-idx1-ubyte"))
    tag_file = path / "provenance.txt"
    tag = tag_file.read_text().strip() if tag_file.exists() else "mnist-idx"
    train.provenance = test.provenance = tag
    return train, test


def write_directory(path, train: LabeledImageSet, test: LabeledImageSet) -> None:
    """Write IDX pairs, float SGT1 caches and a provenance tag."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    write_idx(path / "train-images-idx3-ubyte", path / "train-labels-idx1-ubyte", train)
    write_idx(path / "t10k-images-idx3-ubyte", path / "t10k-labels-idx1-ubyte", test)
    tensorio.save(path / "train-images.sgt", train.images.astype(np.float32))
    tensorio.save(path / "t10k-images.sgt", test.images.astype(np.float32))
    (path / "provenance.txt").write_text(train.provenance + "\n")


# ---------------------------------------------------------------------------
# rotation
# ---------------------------------------------------------------------------


def rotate_image(image: np.ndarray, degrees: float) -> np.ndarray:
    """Counter-clockwise rotation about the pixel-grid centre, bilinear, zero fill."""
    image = np.asarray(image, dtype=np.float64)
    H, W = image.shape
    t = math.radians(degrees)
    c, s = math.cos(t), math.sin(t)
    # output (row, col) samples input at R^-1 (p - centre) + centre; rows grow downwards
    matrix = np.array([[c, s], [-s, c]])
    centre = np.array([(H - 1) / 2.0, (W - 1) / 2.0])
    offset = centre - matrix @ centre
    out = ndimage.affine_transform(image, matrix, offset=offset, order=1, mode="constant", cval=0.0)
    return np.clip(out, 0.0, 1.0)


def synth_rotated(base: LabeledImageSet, seed: int, angles: np.ndarray | None = None) -> LabeledImageSet:
    """Rotate every image by an angle drawn uniformly from [0, 360) (or given ``angles``)."""
    if angles is None:
        angles = np.random.default_rng(seed).uniform(0.0, 360.0, size=len(base))
    angles = np.asarray(angles, dtype=np.float64)
    if angles.shape != (len(base),):
        raise ValueError(f"need one angle per image ({len(base)}), got shape {angles.shape}")
    out = np.empty_like(base.images)
    for n, a in enumerate(angles):
        out[n, 0] = rotate_image(base.images[n, 0], a)
    result = LabeledImageSet(out, base.labels.copy(), provenance=f"{base.provenance}+rot(seed={seed})")
    result.info["angles"] = angles
    return result


def synth_split(
    n_train: int, n_test: int, seed: int, base: LabeledImageSet | None = None
) -> tuple[LabeledImageSet, LabeledImageSet]:
    """Disjoint, class-balanced train/test draws from ``base``, each randomly rotated."""
    base = load_bundled_digits() if base is None else base
    if n_train < 1 or n_test < 1:
        raise ValueError("n_train and n_test must be positive")
    if n_train + n_test > len(base):
        raise ValueError(f"requested {n_train + n_test} samples from a base set of {len(base)}")
    rng = np.random.default_rng(seed)
    # interleave classes so that any prefix is close to balanced
    per_class = [rng.permutation(np.flatnonzero(base.labels == c)) for c in range(N_CLASSES)]
    order = [idx for group in zip(*per_class) for idx in group]
    leftovers = [idx for group in per_class for idx in group[min(map(len, per_class)):]]
    order = np.array(order + leftovers)
    train_idx, test_idx = order[:n_train], order[n_train:n_train + n_test]
    train = synth_rotated(base.subset(train_idx), seed=seed + 1)
    test = synth_rotated(base.subset(test_idx), seed=seed + 2)
    return train, test


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


def batches(
    data: LabeledImageSet, batch_size: int, seed: int = 0, shuffle: bool = True
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(images, labels)`` batches; the final partial batch is included."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if len(data) == 0:
        raise ValueError("cannot batch an empty set")
    order = np.random.default_rng(seed).permutation(len(data)) if shuffle else np.arange(len(data))
    for start in range(0, len(data), batch_size):
        idx = order[start : start + batch_size]
        yield data.images[idx], data.labels[idx]
