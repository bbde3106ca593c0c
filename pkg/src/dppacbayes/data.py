"""Datasets: the SYNTH generator, random-label variants, MNIST IDX reading
and seeded minibatch partitions."""

from __future__ import annotations

import csv
import gzip
import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataError(Exception):
    """Base class for dataset loading failures."""


class IdxMagicError(DataError):
    pass


class IdxTruncatedError(DataError):
    pass


class IdxCountMismatchError(DataError):
    pass


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    split: str = "train"
    label_mode: str = "true"
    n_classes: int = 2
    name: str = "synth"

    def __post_init__(self):
        X = _frozen(self.inputs, np.float64)
        y = _frozen(self.labels, np.int64)
        if X.ndim != 2 or X.shape[0] == 0 or X.shape[0] != y.shape[0]:
            raise DataError(f"inconsistent dataset shapes {X.shape} / {y.shape}")
        if y.min() < 1 or y.max() > self.n_classes:
            raise DataError(f"labels must lie in 1..{self.n_classes}")
        if self.split not in ("train", "heldout"):
            raise DataError(f"unknown split {self.split!r}")
        if self.label_mode not in ("true", "random"):
            raise DataError(f"unknown label mode {self.label_mode!r}")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]


@dataclass(frozen=True)
class SynthConfig:
    n_train: int = 50
    n_heldout: int = 100
    d: int = 4
    seed: int = 0
    # "abs-normal": direction uniform on the sphere, norm |N(0,1)|.
    # "gaussian": every coordinate N(0,1). Labels agree in distribution.
    hyperplane: str = "abs-normal"

    def __post_init__(self):
        for name in ("n_train", "n_heldout", "d"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.hyperplane not in ("abs-normal", "gaussian"):
            raise ValueError(f"unknown hyperplane mode {self.hyperplane!r}")


def _synth_labels(X, w):
    return np.where(X @ w >= 0.0, 1, 2)


def synth_generate(cfg: SynthConfig = SynthConfig()):
    """Gaussian inputs labelled by a random hyperplane through the origin.

    Returns (train, heldout, w_star); label 1 is the side with <w*, x> >= 0.
    """
    rng = np.random.default_rng(cfg.seed)
    if cfg.hyperplane == "abs-normal":
        u = rng.standard_normal(cfg.d)
        u /= np.linalg.norm(u)
        w_star = abs(rng.standard_normal()) * u
    else:
        w_star = rng.standard_normal(cfg.d)
    X = rng.standard_normal((cfg.n_train + cfg.n_heldout, cfg.d))
    y = _synth_labels(X, w_star)
    n = cfg.n_train
    train = Dataset(X[:n], y[:n], "train", "true", 2, "synth")
    heldout = Dataset(X[n:], y[n:], "heldout", "true", 2, "synth")
    return train, heldout, w_star


def randomize_labels(ds: Dataset, K: int | None = None, seed: int = 0) -> Dataset:
    """Replace labels by i.i.d. uniform draws on {1..K}; inputs are untouched."""
    K = ds.n_classes if K is None else K
    rng = np.random.default_rng(seed)
    labels = rng.integers(1, K + 1, size=len(ds))
    return replace(ds, labels=labels, label_mode="random", n_classes=K)


def minibatch_stream(ds, batch_size: int, epoch_seed) -> list[np.ndarray]:
    """Seeded permutation of 0..n-1 cut into ceil(n / batch_size) batches.

    ``ds`` is a Dataset or a plain length; ``epoch_seed`` is an int or a
    numpy Generator (which is consumed).
    """
    n = ds if isinstance(ds, (int, np.integer)) else len(ds)
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch_size must lie in [1, {n}], got {batch_size}")
    perm = np.random.default_rng(epoch_seed).permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


# --- persistence ---------------------------------------------------------

def write_synth_csv(ds: Dataset, path, sidecar: dict | None = None) -> Path:
    """CSV with columns x1..xd,label; an optional JSON sidecar records the config."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(ds.dim)] + ["label"])
        for x, y in zip(ds.inputs, ds.labels):
            w.writerow([format(v, ".17g") for v in x] + [int(y)])
    if sidecar is not None:
        meta = dict(sidecar, split=ds.split, label_mode=ds.label_mode, n=len(ds))
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def read_synth_csv(path, split: str = "train", label_mode: str | None = None) -> Dataset:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows or rows[0][-1] != "label":
        raise DataError(f"{path}: missing header with a trailing 'label' column")
    body = rows[1:]
    try:
        X = np.array([[float(v) for v in r[:-1]] for r in body])
        y = np.array([int(r[-1]) for r in body])
    except ValueError as exc:
        raise DataError(f"{path}: malformed row ({exc})") from exc
    meta_path = path.with_suffix(".json")
    if label_mode is None:
        label_mode = "true"
        if meta_path.exists():
            label_mode = json.loads(meta_path.read_text()).get("label_mode", "true")
    return Dataset(X, y, split, label_mode, int(max(2, y.max())), "synth")


# --- MNIST ---------------------------------------------------------------

def _read_maybe_gzip(path) -> bytes:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if raw[:2] == b"\x1f\x8b":
        try:
            return gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise IdxTruncatedError(f"{path}: corrupt gzip stream ({exc})") from exc
    return raw


def read_idx_images(path) -> np.ndarray:
    """IDX3 image file -> uint8 array (n, rows, cols)."""
    buf = _read_maybe_gzip(path)
    if len(buf) < 16:
        raise IdxTruncatedError(f"{path}: header shorter than 16 bytes")
    magic, n, rows, cols = struct.unpack(">IIII", buf[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise IdxMagicError(f"{path}: bad image magic 0x{magic:08x}")
    need = 16 + n * rows * cols
    if len(buf) < need:
        raise IdxTruncatedError(f"{path}: expected {need} bytes, found {len(buf)}")
    return np.frombuffer(buf, dtype=np.uint8, count=n * rows * cols, offset=16).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    buf = _read_maybe_gzip(path)
    if len(buf) < 8:
        raise IdxTruncatedError(f"{path}: header shorter than 8 bytes")
    magic, n = struct.unpack(">II", buf[:8])
    if magic != IDX_LABELS_MAGIC:
        raise IdxMagicError(f"{path}: bad label magic 0x{magic:08x}")
    if len(buf) < 8 + n:
        raise IdxTruncatedError(f"{path}: expected {8 + n} bytes, found {len(buf)}")
    return np.frombuffer(buf, dtype=np.uint8, count=n, offset=8)


@dataclass(frozen=True)
class MnistPaths:
    train_images: Path
    train_labels: Path
    heldout_images: Path
    heldout_labels: Path

    @classmethod
    def from_dir(cls, root, gz: bool = True):
        root = Path(root)
        ext = ".gz" if gz else ""
        return cls(root / f"train-images-idx3-ubyte{ext}", root / f"train-labels-idx1-ubyte{ext}",
                   root / f"t10k-images-idx3-ubyte{ext}", root / f"t10k-labels-idx1-ubyte{ext}")


def _load_split(images_path, labels_path, split, limit):
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(
            f"{images_path} has {images.shape[0]} images but {labels_path} has {labels.shape[0]} labels")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(X, labels.astype(np.int64) + 1, split, "true", 10, "mnist")


def mnist_load(paths: MnistPaths, limit: int | None = None, heldout_limit: int | None = None):
    """(train, heldout) with pixels in [0, 1] and labels shifted to 1..10.

    ``limit`` truncates both splits from the front unless ``heldout_limit``
    is given separately.
    """
    heldout_limit = limit if heldout_limit is None else heldout_limit
    train = _load_split(paths.train_images, paths.train_labels, "train", limit)
    heldout = _load_split(paths.heldout_images, paths.heldout_labels, "heldout", heldout_limit)
    return train, heldout


def write_idx(images, labels, images_path, labels_path, compress: bool = False) -> None:
    """Write uint8 images (n, rows, cols) and labels (n,) in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    img = struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes()
    lab = struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]) + labels.tobytes()
    opener = (lambda p: gzip.GzipFile(p, "wb", mtime=0)) if compress else (lambda p: open(p, "wb"))
    with opener(images_path) as fh:
        fh.write(img)
    with opener(labels_path) as fh:
        fh.write(lab)


MNIST_FILES = {
    "train-images-idx3-ubyte.gz": "f68b3c2dcbeaaa9fbdd348bbdeb94873",
    "train-labels-idx1-ubyte.gz": "d53e105ee54ea40749a09fcbcd1e9432",
    "t10k-images-idx3-ubyte.gz": "9fb629c4189551a2d022fa330f9573f3",
    "t10k-labels-idx1-ubyte.gz": "ec29112dd5afa0611ce80d1b7f02629c",
}
MNIST_MIRROR = "https://ossci-datasets.s3.amazonaws.com/mnist/"
