"""Datasets: IDX (MNIST-format) ingestion and seeded synthetic point clouds."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .quant import make_rng

# IDX type code -> big-endian numpy dtype
IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class Dataset:
    """Features in [0, 1] (samples x dims) with integer class labels."""

    x: np.ndarray
    y: np.ndarray
    n_classes: int
    name: str = ""

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2:
            self.x = self.x.reshape(len(self.x), -1)
        if len(self.x) != len(self.y):
            raise ValueError(f"{len(self.x)} feature rows but {len(self.y)} labels")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def take(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], self.n_classes, self.name)

    def head(self, n: int) -> "Dataset":
        return self.take(slice(0, n))

    def split(self, test_fraction: float, seed: int = 0) -> tuple["Dataset", "Dataset"]:
        perm = make_rng(seed, 0x5E7).permutation(len(self))
        n_test = int(round(test_fraction * len(self)))
        return self.take(np.sort(perm[n_test:])), self.take(np.sort(perm[:n_test]))


def _open_bytes(path) -> bytes:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def parse_idx(raw: bytes) -> np.ndarray:
    """Decode an IDX byte string into an array of its declared shape."""
    if len(raw) < 4:
        raise IdxError(f"file too short for magic number: {len(raw)} bytes", 0)
    zero, type_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or type_code not in IDX_DTYPES:
        raise IdxError(f"bad magic number 0x{struct.unpack('>I', raw[:4])[0]:08x}", 0)
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxError(f"truncated header: expected {header} bytes, got {len(raw)}", 4)
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    dtype = IDX_DTYPES[type_code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    actual = len(raw) - header
    if actual < expected:
        raise IdxError(
            f"truncated payload: expected {expected} bytes, got {actual}", header + actual
        )
    if actual > expected:
        raise IdxError(f"trailing data: expected {expected} payload bytes, got {actual}",
                       header + expected)
    return np.frombuffer(raw, dtype=dtype, count=int(np.prod(dims)), offset=header).reshape(dims)


def read_idx(path) -> np.ndarray:
    return parse_idx(_open_bytes(path))


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    for code, dt in IDX_DTYPES.items():
        if dt.kind == array.dtype.kind and dt.itemsize == array.dtype.itemsize:
            break
    else:
        raise ValueError(f"dtype {array.dtype} has no IDX encoding")
    header = struct.pack(">HBB", 0, code, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.astype(dt).tobytes())


def load_idx(images_path, labels_path, n_classes: int = 10, name: str = "idx") -> Dataset:
    """Image + label IDX pair -> Dataset with pixels scaled to [0, 1]."""
    img_raw, lab_raw = _open_bytes(images_path), _open_bytes(labels_path)
    if img_raw[:4] != struct.pack(">I", IMAGES_MAGIC):
        raise IdxError(f"expected image magic 0x{IMAGES_MAGIC:08x}", 0)
    if lab_raw[:4] != struct.pack(">I", LABELS_MAGIC):
        raise IdxError(f"expected label magic 0x{LABELS_MAGIC:08x}", 0)
    images, labels = parse_idx(img_raw), parse_idx(lab_raw)
    if len(images) != len(labels):
        raise ValueError(f"{len(images)} images but {len(labels)} labels")
    x = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return Dataset(x, labels.astype(np.int64), n_classes, name)


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def find_mnist(directory) -> dict[str, tuple[Path, Path]] | None:
    """Locate the four standard MNIST files (optionally gzipped) in ``directory``."""
    if directory is None:
        return None
    directory = Path(directory)
    found = {}
    for split, names in MNIST_FILES.items():
        pair = []
        for stem in names:
            for cand in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
                if (directory / cand).exists():
                    pair.append(directory / cand)
                    break
        if len(pair) != 2:
            return None
        found[split] = tuple(pair)
    return found


def load_mnist(directory) -> tuple[Dataset, Dataset]:
    files = find_mnist(directory)
    if files is None:
        raise FileNotFoundError(f"MNIST IDX files not found in {directory}")
    return (load_idx(*files["train"], name="mnist-train"),
            load_idx(*files["test"], name="mnist-test"))


def _class_sizes(n: int, classes: int) -> np.ndarray:
    sizes = np.full(classes, n // classes)
    sizes[: n % classes] += 1
    return sizes


def gen_synthetic(kind: str, n: int, classes: int, seed: int = 0, *, dim: int = 2,
                  spread: float | None = None) -> Dataset:
    """Seeded labeled point clouds in [0, 1]^dim.

    ``blobs``: Gaussian clusters (std ``spread``, default 0.02) around class
    centres placed on a sphere of radius 0.35 about the cube centre; at the
    default spread the classes are linearly separable.
    ``spirals``: interleaved noisy spiral arms in the first two dimensions.
    """
    if n < classes or classes < 1:
        raise ValueError(f"need n >= classes >= 1, got n={n}, classes={classes}")
    rng = make_rng(seed, 0xDA7A)
    sizes = _class_sizes(n, classes)
    y = np.repeat(np.arange(classes), sizes)
    if kind == "blobs":
        spread = 0.02 if spread is None else spread
        if dim == 2:
            ang = 2 * np.pi * np.arange(classes) / classes
            dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        else:
            dirs = rng.standard_normal((classes, dim))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        centers = 0.5 + 0.35 * dirs
        x = centers[y] + spread * rng.standard_normal((n, dim))
    elif kind == "spirals":
        spread = 0.02 if spread is None else spread
        t = np.concatenate([np.sort(rng.uniform(0.05, 1.0, k)) for k in sizes])
        phase = 2 * np.pi * y / classes
        ang = 1.75 * 2 * np.pi * t + phase
        pts = 0.45 * t[:, None] * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        x = np.zeros((n, max(dim, 2)))
        x[:, :2] = 0.5 + pts
        x += spread * rng.standard_normal(x.shape)
    else:
        raise ValueError(f"unknown synthetic kind {kind!r} (expected 'blobs' or 'spirals')")
    x = np.clip(x, 0.0, 1.0)
    perm = rng.permutation(n)
    return Dataset(x[perm], y[perm], classes, f"{kind}-{seed}")
