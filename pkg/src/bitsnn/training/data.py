"""Dataset readers (IDX, headered CSV) and the bundled desk-scale digits set."""

from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass

import numpy as np

from ..errors import DataError, FormatError

_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_IDX_CODES = {np.dtype(v).newbyteorder("="): k for k, v in _IDX_TYPES.items()}


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    num_classes: int

    def __len__(self):
        return len(self.y)

    def reshaped(self, shape):
        n = len(self)
        if int(np.prod(self.x.shape[1:])) != int(np.prod(shape)):
            raise DataError(f"sample size {self.x.shape[1:]} does not fit model input {tuple(shape)}")
        return Dataset(self.x.reshape((n,) + tuple(shape)), self.y, self.num_classes)


def read_idx(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: file too short for an IDX header", 0)
    zero, code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or code not in _IDX_TYPES or ndim == 0:
        raise FormatError(f"{path}: bad IDX magic 0x{raw[:4].hex()}", 0)
    hdr = 4 + 4 * ndim
    if len(raw) < hdr:
        raise FormatError(f"{path}: truncated IDX dimension block", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:hdr])
    dtype = _IDX_TYPES[code]
    expected = int(np.prod(dims)) * dtype.itemsize
    actual = len(raw) - hdr
    if actual != expected:
        raise FormatError(
            f"{path}: payload has {actual} bytes, expected {expected} for dims {dims}",
            hdr + min(actual, expected))
    return np.frombuffer(raw, dtype=dtype, offset=hdr).reshape(dims).astype(dtype.newbyteorder("="))


def write_idx(path, arr) -> None:
    arr = np.asarray(arr)
    code = _IDX_CODES.get(arr.dtype.newbyteorder("="))
    if code is None:
        raise ValueError(f"dtype {arr.dtype} has no IDX type code")
    with open(path, "wb") as f:
        f.write(struct.pack(">HBB", 0, code, arr.ndim))
        f.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        f.write(arr.astype(_IDX_TYPES[code]).tobytes())


def _labels_path(images_path):
    d, base = os.path.split(images_path)
    if "images" not in base:
        raise DataError(f"cannot derive a labels file name from {images_path!r}; pass labels_path")
    return os.path.join(d, base.replace("images", "labels").replace("idx3", "idx1"))


def _check_labels(y, num_classes, path):
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        bad = int(y[(y < 0) | (y >= num_classes)][0])
        raise DataError(f"{path}: label {bad} outside [0, {num_classes})")


def load_dataset(path, fmt: str = "idx", labels_path=None, num_classes: int = 10) -> Dataset:
    """Load features scaled to [0, 1] and integer labels, in file order.

    For IDX, ``path`` is the images file and the labels file is found by
    replacing ``images`` with ``labels`` in its name. For CSV, the first row
    is a header and the label is the last column; features above 1 are
    taken as 0-255 intensities.
    """
    path = os.fspath(path)
    if fmt == "idx":
        imgs = read_idx(path)
        lpath = labels_path or _labels_path(path)
        labels = read_idx(lpath).astype(np.int64).reshape(-1)
        if len(labels) != len(imgs):
            raise DataError(f"{lpath}: {len(labels)} labels for {len(imgs)} images")
        x = imgs.astype(np.float64)
        if imgs.dtype == np.uint8:
            x = x / 255.0
        if x.ndim == 3:
            x = x[:, None, :, :]
        _check_labels(labels, num_classes, lpath)
        return Dataset(x, labels, num_classes)
    if fmt == "csv":
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        if not rows:
            raise FormatError(f"{path}: empty CSV", 0)
        body = rows[1:]
        try:
            arr = np.array([[float(v) for v in r] for r in body], dtype=np.float64)
        except ValueError as e:
            raise FormatError(f"{path}: non-numeric CSV field ({e})") from e
        if arr.ndim != 2 or arr.shape[1] < 2:
            raise FormatError(f"{path}: need at least one feature column and a label column")
        x, y = arr[:, :-1], arr[:, -1]
        if np.any(y != np.round(y)):
            raise DataError(f"{path}: non-integer label")
        if x.size and x.min() < 0:
            raise DataError(f"{path}: negative feature value")
        if x.size and x.max() > 1:
            x = x / 255.0
        y = y.astype(np.int64)
        _check_labels(y, num_classes, path)
        return Dataset(x, y, num_classes)
    raise DataError(f"unknown dataset format {fmt!r}")


def make_digits(out_dir, seed: int = 0, test_fraction: float = 0.2):
    """Write scikit-learn's 8x8 digits as IDX train/test files.

    Pixel values 0..16 are rescaled to 0..255. Returns (train_images,
    test_images) paths.
    """
    from sklearn.datasets import load_digits

    digits = load_digits()
    imgs = np.round(digits.images * (255.0 / 16.0)).astype(np.uint8)
    labels = digits.target.astype(np.uint8)
    order = np.random.default_rng(seed).permutation(len(labels))
    n_test = int(round(len(labels) * test_fraction))
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for split, idx in (("train", order[n_test:]), ("test", order[:n_test])):
        ip = os.path.join(out_dir, f"digits-{split}-images-idx3-ubyte")
        write_idx(ip, imgs[idx])
        write_idx(os.path.join(out_dir, f"digits-{split}-labels-idx1-ubyte"), labels[idx])
        paths.append(ip)
    return tuple(paths)
