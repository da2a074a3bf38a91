"""IDX dataset files, a synthetic digit-like generator, and per-domain splits."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_CODES = {v.newbyteorder("=").str: k for k, v in IDX_TYPES.items()}
_CODES["|u1"] = 0x08
_CODES["|i1"] = 0x09


def _open(path: Path, mode: str):
    return gzip.open(path, mode) if path.suffix == ".gz" else open(path, mode)


def parse_idx(raw: bytes) -> np.ndarray:
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise ValueError("not an IDX file: bad magic")
    code, ndim = raw[2], raw[3]
    if code not in IDX_TYPES:
        raise ValueError(f"unknown IDX element type 0x{code:02x}")
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    dtype = IDX_TYPES[code]
    offset = 4 + 4 * ndim
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) - offset != expected:
        raise ValueError(f"IDX payload is {len(raw) - offset} bytes, header implies {expected}")
    return np.frombuffer(raw, dtype=dtype, offset=offset).reshape(dims).astype(dtype.newbyteorder("="))


def read_idx(path: str | Path) -> np.ndarray:
    """Read an IDX file (optionally gzipped, by ``.gz`` suffix)."""
    path = Path(path)
    with _open(path, "rb") as fh:
        return parse_idx(fh.read())


def encode_idx(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    code = _CODES.get(arr.dtype.str) or _CODES.get(arr.dtype.newbyteorder("=").str)
    if code is None:
        raise ValueError(f"dtype {arr.dtype} has no IDX encoding")
    header = bytes([0, 0, code, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    return header + arr.astype(IDX_TYPES[code]).tobytes()


def write_idx(path: str | Path, arr: np.ndarray) -> None:
    path = Path(path)
    with _open(path, "wb") as fh:
        fh.write(encode_idx(arr))


@dataclass
class Dataset:
    images: np.ndarray  # (N, 28, 28, 1) float in [0, 1]
    labels: np.ndarray  # (N,) int

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx])


def load_idx_dataset(images_path: str | Path, labels_path: str | Path) -> Dataset:
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3 or len(images) != len(labels):
        raise ValueError(f"mismatched IDX pair: images {images.shape}, labels {labels.shape}")
    return Dataset(images[..., None].astype(np.float64) / 255.0, labels.astype(np.int64))


def load_mnist_dir(directory: str | Path) -> Dataset:
    """Load ``images-idx3-ubyte[.gz]`` / ``labels-idx1-ubyte[.gz]`` from a directory."""
    d = Path(directory)
    for suffix in ("", ".gz"):
        img, lab = d / f"images-idx3-ubyte{suffix}", d / f"labels-idx1-ubyte{suffix}"
        if img.exists() and lab.exists():
            return load_idx_dataset(img, lab)
    for img_name, lab_name in (("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),):
        for suffix in ("", ".gz"):
            img, lab = d / f"{img_name}{suffix}", d / f"{lab_name}{suffix}"
            if img.exists() and lab.exists():
                return load_idx_dataset(img, lab)
    raise FileNotFoundError(f"no IDX image/label pair found in {d}")


def synthetic_digits(count: int, seed: int = 0, num_classes: int = 10, noise: float = 0.25) -> Dataset:
    """Class-conditional blobs on a 28x28 canvas.

    Each class has a fixed random stroke template; samples are shifted by up
    to two pixels and corrupted with Gaussian noise.  Learnable, but not
    trivially so.
    """
    template_rng = np.random.default_rng(12345)
    templates = np.zeros((num_classes, 28, 28))
    yy, xx = np.mgrid[0:28, 0:28]
    for c in range(num_classes):
        for _ in range(4):
            cy, cx = template_rng.uniform(7, 21, size=2)
            sy, sx = template_rng.uniform(1.5, 4.5, size=2)
            templates[c] += np.exp(-((yy - cy) ** 2 / (2 * sy**2) + (xx - cx) ** 2 / (2 * sx**2)))
        templates[c] /= templates[c].max()
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, num_classes, size=count)
    shifts = rng.integers(-2, 3, size=(count, 2))
    images = np.empty((count, 28, 28))
    for i in range(count):
        images[i] = np.roll(templates[labels[i]], tuple(shifts[i]), axis=(0, 1))
    images = np.clip(images + rng.normal(0, noise, images.shape), 0, 1)
    return Dataset(images[..., None], labels.astype(np.int64))


@dataclass
class DomainSplit:
    train: list[Dataset]
    test: list[Dataset]


def split_domains(data: Dataset, n: int, train_per_domain: int, test_per_domain: int) -> DomainSplit:
    """Carve ``n`` disjoint (train, test) pairs from ``data`` in file order.

    Domain ``i`` always receives the same samples regardless of ``n``, so a
    domain's data is identical in solo and collaborative runs.
    """
    need = n * (train_per_domain + test_per_domain)
    if need > len(data):
        raise ValueError(f"{n} domains x ({train_per_domain} + {test_per_domain}) samples exceed the {len(data)} available")
    train, test = [], []
    block = train_per_domain + test_per_domain
    for i in range(n):
        start = i * block
        train.append(data.subset(slice(start, start + train_per_domain)))
        test.append(data.subset(slice(start + train_per_domain, start + block)))
    return DomainSplit(train, test)
