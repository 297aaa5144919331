"""Datasets: CSV regression tables, IDX image files, synthetic teacher data."""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import TwoLayerNet

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataError(ValueError):
    pass


class BadMagicError(DataError):
    pass


class TruncatedFileError(DataError):
    pass


class CountMismatchError(DataError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    """Samples as rows of ``X`` with targets ``y``.

    Features were transformed as ``raw * feature_scale + feature_shift``;
    ``raw_features`` undoes it.
    """

    X: np.ndarray
    y: np.ndarray
    feature_scale: np.ndarray = field(default=None)
    feature_shift: np.ndarray = field(default=None)
    normalization: str = "none"

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if X.ndim != 2 or X.shape[0] < 1:
            raise DataError(f"X must be a non-empty 2-D array, got shape {X.shape}")
        if X.shape[0] != y.shape[0]:
            raise DataError(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DataError("dataset contains NaN or Inf")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        n = X.shape[1]
        if self.feature_scale is None:
            object.__setattr__(self, "feature_scale", np.ones(n))
        if self.feature_shift is None:
            object.__setattr__(self, "feature_shift", np.zeros(n))

    def __len__(self):
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], self.feature_scale, self.feature_shift,
                       self.normalization)

    def raw_features(self) -> np.ndarray:
        return (self.X - self.feature_shift) / self.feature_scale


def _normalizer(raw: np.ndarray, normalize: str):
    n = raw.shape[1]
    if normalize == "none":
        return np.ones(n), np.zeros(n)
    if normalize == "zscore":
        mean = raw.mean(axis=0)
        std = raw.std(axis=0, ddof=1) if raw.shape[0] > 1 else np.zeros(n)
        std = np.where(std > 0, std, 1.0)  # constant columns are only centred
        return 1.0 / std, -mean / std
    if normalize.startswith("minmax"):
        lo, hi = parse_minmax(normalize)
        cmin, cmax = raw.min(axis=0), raw.max(axis=0)
        span = np.where(cmax > cmin, cmax - cmin, 1.0)
        scale = (hi - lo) / span
        return scale, lo - cmin * scale
    raise DataError(f"unknown normalization {normalize!r}")


def parse_minmax(spec: str) -> tuple[float, float]:
    """``"minmax"`` -> (-1, 1); ``"minmax[a,b]"`` -> (a, b)."""
    if spec == "minmax":
        return -1.0, 1.0
    body = spec[len("minmax"):].strip()
    if not (body.startswith("[") and body.endswith("]")):
        raise DataError(f"bad minmax spec {spec!r}, expected minmax[a,b]")
    try:
        lo, hi = (float(t) for t in body[1:-1].split(","))
    except ValueError:
        raise DataError(f"bad minmax spec {spec!r}, expected minmax[a,b]") from None
    if not lo < hi:
        raise DataError(f"minmax range must satisfy a < b, got {spec!r}")
    return lo, hi


def load_csv(path, target_column: str, normalize: str = "none") -> Dataset:
    """Read a headed numeric CSV; every non-target column is a feature."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if target_column not in header:
            raise DataError(f"{path}: target column {target_column!r} not in header {header}")
        t = header.index(target_column)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}:{lineno}: expected {len(header)} fields, found {len(row)}")
            vals = []
            for col, cell in enumerate(row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}:{lineno}: column {col + 1} ({header[col]!r}): "
                        f"non-numeric value {cell!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}:{lineno}: column {col + 1}: non-finite value")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    table = np.array(rows)
    y = table[:, t]
    raw = np.delete(table, t, axis=1)
    if raw.shape[1] == 0:
        raise DataError(f"{path}: no feature columns")
    scale, shift = _normalizer(raw, normalize)
    return Dataset(raw * scale + shift, y, scale, shift, normalize)


def _read_idx(path: Path, magic: int, ndims: int) -> tuple[list[int], bytes]:
    data = path.read_bytes()
    head = 4 + 4 * ndims
    if len(data) < 4:
        raise TruncatedFileError(f"{path}: file too short for IDX magic")
    (got,) = struct.unpack(">I", data[:4])
    if got != magic:
        raise BadMagicError(f"{path}: magic 0x{got:08x}, expected 0x{magic:08x}")
    if len(data) < head:
        raise TruncatedFileError(f"{path}: header truncated")
    dims = list(struct.unpack(f">{ndims}I", data[4:head]))
    need = math.prod(dims)
    if len(data) - head < need:
        raise TruncatedFileError(f"{path}: expected {need} payload bytes, found {len(data) - head}")
    return dims, data[head:head + need]


def load_idx(images_path, labels_path) -> Dataset:
    """Images flattened row-major with pixels mapped ``p -> p/127.5 - 1``."""
    (count, rows, cols), pix = _read_idx(Path(images_path), IDX_IMAGES_MAGIC, 3)
    (nlab,), lab = _read_idx(Path(labels_path), IDX_LABELS_MAGIC, 1)
    if count != nlab:
        raise CountMismatchError(f"{count} images but {nlab} labels")
    raw = np.frombuffer(pix, dtype=np.uint8).reshape(count, rows * cols).astype(np.float64)
    labels = np.frombuffer(lab, dtype=np.uint8).astype(np.float64)
    scale = np.full(rows * cols, 1.0 / 127.5)
    shift = np.full(rows * cols, -1.0)
    return Dataset(raw / 127.5 - 1.0, labels, scale, shift, "minmax[-1,1]")


def write_idx(images_path, labels_path, images: np.ndarray, labels) -> None:
    """Write uint8 images ``(count, rows, cols)`` and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    count, rows, cols = images.shape
    Path(images_path).write_bytes(
        struct.pack(">4I", IDX_IMAGES_MAGIC, count, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(
        struct.pack(">2I", IDX_LABELS_MAGIC, labels.shape[0]) + labels.tobytes())


def make_teacher(n: int, rank: int, width: int, rng: np.random.Generator) -> TwoLayerNet:
    """Random ReLU net whose first-layer matrix has exactly ``rank``."""
    if not 1 <= rank <= n:
        raise ValueError(f"teacher rank must be in [1, {n}], got {rank}")
    if rank > width:
        raise ValueError("teacher rank cannot exceed teacher width")
    left = rng.normal(0.0, 1.0 / math.sqrt(rank), size=(width, rank))
    right = rng.normal(0.0, 1.0 / math.sqrt(n), size=(rank, n))
    U = rng.normal(0.0, 1.0 / math.sqrt(width), size=(1, width))
    return TwoLayerNet(U, left @ right, np.zeros(width))


def synthetic_teacher(n: int, N: int, rank: int, noise_std: float = 0.0, seed: int | None = 0,
                      width: int = 32, return_teacher: bool = False):
    """Gaussian inputs labelled by a low-rank teacher network plus Gaussian noise."""
    rng = np.random.default_rng(seed)
    teacher = make_teacher(n, rank, width, rng)
    X = rng.normal(size=(N, n))
    y = teacher.predict(X)
    if noise_std > 0:
        y = y + rng.normal(0.0, noise_std, size=N)
    ds = Dataset(X, y)
    return (ds, teacher) if return_teacher else ds


def split(dataset: Dataset, n_train: int, n_test: int, seed: int | None = 0):
    if n_train < 1 or n_test < 1:
        raise DataError("n_train and n_test must be positive")
    if n_train + n_test > len(dataset):
        raise DataError(
            f"requested {n_train} + {n_test} samples from a dataset of {len(dataset)}")
    perm = np.random.default_rng(seed).permutation(len(dataset))
    return dataset.subset(perm[:n_train]), dataset.subset(perm[n_train:n_train + n_test])
