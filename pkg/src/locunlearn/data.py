"""Datasets, file readers, forget/retain splits and MIA calibration subsets."""
from __future__ import annotations

import hashlib
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ParseError, ValidationError


def _readonly(a):
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable labeled examples. ``features`` is float32, ``labels`` int64."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = "dataset"
    checksum: str = field(default="", init=False)

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float32)
        y = np.asarray(self.labels)
        if not np.issubdtype(y.dtype, np.integer):
            raise ValidationError("labels must be integers")
        y = y.astype(np.int64)
        if x.shape[0] == 0 or x.shape[0] != y.shape[0]:
            raise ValidationError(f"need n > 0 matching features/labels, got {x.shape[0]}/{y.shape[0]}")
        if y.min() < 0 or y.max() >= self.num_classes:
            bad = int(np.flatnonzero((y < 0) | (y >= self.num_classes))[0])
            raise ValidationError(
                f"label {int(y[bad])} at row {bad} outside [0, {self.num_classes})"
            )
        if not np.all(np.isfinite(x)):
            raise ValidationError("features contain non-finite values")
        object.__setattr__(self, "features", _readonly(x))
        object.__setattr__(self, "labels", _readonly(y))
        h = hashlib.sha256(x.tobytes())
        h.update(y.tobytes())
        object.__setattr__(self, "checksum", h.hexdigest())

    def __len__(self):
        return self.labels.shape[0]

    @property
    def input_shape(self) -> tuple:
        return tuple(self.features.shape[1:])

    def subset(self, indices, name=None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes, name or self.name)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


class AccessAudit:
    """Counts how many times each example of a base dataset is read."""

    def __init__(self, n: int):
        self.counts = np.zeros(n, dtype=np.int64)

    def record(self, indices):
        np.add.at(self.counts, np.asarray(indices, dtype=np.int64), 1)

    def reads_of(self, indices) -> int:
        return int(self.counts[np.asarray(indices, dtype=np.int64)].sum())


class DataView:
    """A subset of a dataset, addressed by position within the view.

    Every read goes through :meth:`take`, so an attached :class:`AccessAudit`
    sees exactly which base examples an algorithm touched.
    """

    def __init__(self, dataset: Dataset, indices=None, audit: AccessAudit | None = None):
        self.dataset = dataset
        if indices is None:
            indices = np.arange(len(dataset))
        self.indices = _readonly(np.asarray(indices, dtype=np.int64))
        self.audit = audit

    def __len__(self):
        return self.indices.shape[0]

    @property
    def num_classes(self):
        return self.dataset.num_classes

    @property
    def input_shape(self):
        return self.dataset.input_shape

    def take(self, positions=None):
        idx = self.indices if positions is None else self.indices[np.asarray(positions)]
        if self.audit is not None:
            self.audit.record(idx)
        return self.dataset.features[idx], self.dataset.labels[idx]

    def labels_unaudited(self) -> np.ndarray:
        """Labels only (no features), for bookkeeping such as histograms."""
        return self.dataset.labels[self.indices]

    def batches(self, batch_size: int, seed: int, epoch: int = 0, shuffle: bool = True):
        """Yield ``(x, y)`` mini-batches; the order is a function of (seed, epoch)."""
        for pos in batch_positions(len(self), batch_size, seed, epoch, shuffle):
            yield self.take(pos)


def batch_positions(n: int, batch_size: int, seed: int, epoch: int, shuffle: bool = True):
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    order = np.random.default_rng([seed, epoch]).permutation(n) if shuffle else np.arange(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


# --------------------------------------------------------------------- loaders

_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


def read_idx(path) -> np.ndarray:
    """Read an IDX file (big-endian magic + dims) into an array of its native type."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise ParseError("truncated IDX magic", offset=len(raw))
    if raw[0] != 0 or raw[1] != 0:
        raise ParseError("IDX magic must start with two zero bytes", offset=0)
    if raw[2] not in _IDX_TYPES:
        raise ParseError(f"unknown IDX type code 0x{raw[2]:02x}", offset=2)
    dtype, ndim = _IDX_TYPES[raw[2]], raw[3]
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise ParseError("truncated IDX dimension header", offset=len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) - header_end != expected:
        raise ParseError(
            f"IDX payload has {len(raw) - header_end} bytes, expected {expected}",
            offset=header_end + min(expected, len(raw) - header_end),
        )
    return np.frombuffer(raw, dtype=dtype, offset=header_end).reshape(dims)


def write_idx(path, array) -> None:
    array = np.asarray(array)
    code = next((c for c, dt in _IDX_TYPES.items() if dt.kind == array.dtype.kind
                 and dt.itemsize == array.dtype.itemsize), None)
    if code is None:
        raise ConfigError(f"dtype {array.dtype} has no IDX encoding")
    header = bytes([0, 0, code, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.astype(_IDX_TYPES[code]).tobytes())


def _minmax(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.float64)
    lo, hi = x.min(), x.max()
    scale = hi - lo if hi > lo else 1.0
    return ((x - lo) / scale).astype(np.float32)


def load_idx(images_path, labels_path, num_classes=None, name=None) -> Dataset:
    x = read_idx(images_path)
    y = read_idx(labels_path).astype(np.int64).reshape(-1)
    if x.ndim == 3:  # (n, H, W) grayscale -> (n, 1, H, W)
        x = x[:, None]
    num_classes = int(y.max()) + 1 if num_classes is None else num_classes
    return Dataset(_minmax(x), y, num_classes, name or Path(images_path).stem)


def load_csv(path, num_classes=None, input_shape=None, name=None) -> Dataset:
    """Headerless CSV, label in the first column, features after it."""
    raw = Path(path).read_bytes()
    rows, labels = [], []
    offset = 0
    width = None
    for line in raw.splitlines(keepends=True):
        text = line.strip()
        if text:
            cells = text.split(b",")
            try:
                label = int(cells[0])
                feats = [float(c) for c in cells[1:]]
            except ValueError:
                raise ParseError(f"non-numeric cell in row {len(rows)}", offset=offset) from None
            if width is None:
                width = len(feats)
            elif len(feats) != width:
                raise ParseError(
                    f"row {len(rows)} has {len(feats)} features, expected {width}", offset=offset
                )
            labels.append(label)
            rows.append(feats)
        offset += len(line)
    if not rows:
        raise ParseError("CSV file has no rows", offset=0)
    x = np.asarray(rows, dtype=np.float64)
    if input_shape is not None:
        x = x.reshape((len(rows), *input_shape))
    y = np.asarray(labels, dtype=np.int64)
    num_classes = int(y.max()) + 1 if num_classes is None else num_classes
    return Dataset(_minmax(x), y, num_classes, name or Path(path).stem)


@dataclass(frozen=True)
class SyntheticSpec:
    """Class-conditional Gaussians: mean_c ~ N(0, mean_scale^2 I), x ~ N(mean_c, noise_scale^2 I)."""

    num_classes: int = 2
    dim: int = 2
    n: int = 8
    seed: int = 0
    mean_scale: float = 1.0
    noise_scale: float = 1.0
    input_shape: tuple | None = None

    def __post_init__(self):
        if self.num_classes < 1 or self.dim < 1 or self.n < 1:
            raise ConfigError("num_classes, dim and n must be positive")
        if self.input_shape is not None and int(np.prod(self.input_shape)) != self.dim:
            raise ConfigError(f"input_shape {self.input_shape} does not hold dim={self.dim}")


def make_synthetic(spec: SyntheticSpec, name="synthetic") -> Dataset:
    """Balanced (round-robin labels) Gaussian dataset, deterministic in ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    means = rng.normal(0.0, spec.mean_scale, size=(spec.num_classes, spec.dim))
    labels = np.arange(spec.n) % spec.num_classes
    labels = labels[rng.permutation(spec.n)]
    x = means[labels] + rng.normal(0.0, spec.noise_scale, size=(spec.n, spec.dim))
    if spec.input_shape is not None:
        x = x.reshape((spec.n, *spec.input_shape))
    return Dataset(x.astype(np.float32), labels, spec.num_classes, name)


def load_dataset(source: dict) -> Dataset:
    """Dispatch on ``source['kind']`` in {'synthetic', 'idx', 'csv'}."""
    source = dict(source)
    kind = source.pop("kind", None)
    if kind == "synthetic":
        if "input_shape" in source and source["input_shape"] is not None:
            source["input_shape"] = tuple(source["input_shape"])
        return make_synthetic(SyntheticSpec(**source))
    if kind == "idx":
        return load_idx(source["images"], source["labels"], source.get("num_classes"))
    if kind == "csv":
        shape = source.get("input_shape")
        return load_csv(source["path"], source.get("num_classes"), tuple(shape) if shape else None)
    raise ConfigError(f"unknown dataset source kind {kind!r}")


def train_test_split(dataset: Dataset, test_fraction: float, seed: int):
    """Unstratified random split into (train, test)."""
    if not 0 < test_fraction < 1:
        raise ConfigError("test_fraction must be in (0, 1)")
    n = len(dataset)
    n_test = int(math.floor(test_fraction * n + 0.5))
    order = np.random.default_rng(seed).permutation(n)
    test_idx, train_idx = np.sort(order[:n_test]), np.sort(order[n_test:])
    return (dataset.subset(train_idx, dataset.name + "-train"),
            dataset.subset(test_idx, dataset.name + "-test"))


# ---------------------------------------------------------------------- splits


@dataclass(frozen=True)
class ForgetSpec:
    kind: str = "iid"
    fraction: float = 0.1
    classes: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("iid", "non_iid"):
            raise ConfigError(f"unknown forget-set kind {self.kind!r}")
        if not 0 < self.fraction < 1:
            raise ConfigError("fraction must be in (0, 1)")
        if self.kind == "non_iid" and not self.classes:
            raise ConfigError("non_iid forget set needs a non-empty class list")
        object.__setattr__(self, "classes", tuple(int(c) for c in self.classes))


@dataclass(frozen=True, eq=False)
class SplitSet:
    dataset: Dataset
    forget_indices: np.ndarray
    retain_indices: np.ndarray

    def forget(self, audit=None) -> DataView:
        return DataView(self.dataset, self.forget_indices, audit)

    def retain(self, audit=None) -> DataView:
        return DataView(self.dataset, self.retain_indices, audit)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def make_split(dataset: Dataset, spec: ForgetSpec) -> SplitSet:
    """Choose the forget set S; the retain set is its complement.

    iid: ``round(fraction * n)`` indices uniformly without replacement.
    non_iid: the same total drawn only from ``spec.classes``, allocated evenly
    across them; a class that is too small passes its shortfall to the
    others, and an error is raised if the listed classes cannot cover it.
    """
    n = len(dataset)
    target = _round_half_up(spec.fraction * n)
    if target < 1:
        raise ConfigError(f"fraction {spec.fraction} of n={n} selects no examples")
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "iid":
        forget = rng.choice(n, size=target, replace=False)
    else:
        for c in spec.classes:
            if not 0 <= c < dataset.num_classes:
                raise ConfigError(f"class {c} not in [0, {dataset.num_classes})")
        pools = [np.flatnonzero(dataset.labels == c) for c in spec.classes]
        avail = np.array([len(pool) for pool in pools])
        if avail.sum() < target:
            short = ", ".join(f"class {c}: {a}" for c, a in zip(spec.classes, avail))
            raise ConfigError(
                f"non_iid forget set needs {target} examples but classes only hold "
                f"{avail.sum()} ({short}); shortfall {target - avail.sum()}"
            )
        k = len(pools)
        quota = np.full(k, target // k)
        quota[: target % k] += 1
        # pass any shortfall to classes with spare room, in listed order
        overflow = int(np.maximum(quota - avail, 0).sum())
        quota = np.minimum(quota, avail)
        for i in range(k):
            extra = min(overflow, avail[i] - quota[i])
            quota[i] += extra
            overflow -= extra
        forget = np.concatenate(
            [rng.choice(pool, size=int(q), replace=False) for pool, q in zip(pools, quota)]
        )
    forget = np.sort(forget.astype(np.int64))
    retain = np.setdiff1d(np.arange(n, dtype=np.int64), forget)
    return SplitSet(dataset, _readonly(forget), _readonly(retain))


def mia_calibration_subset(retain: DataView, test: Dataset, seed: int) -> np.ndarray:
    """Base-dataset indices of a retain subset matching the test set's class histogram.

    Per-class quotas that retain cannot meet are filled uniformly from the
    remaining retain examples, with a warning.
    """
    if len(retain) < len(test):
        raise ConfigError(f"retain set ({len(retain)}) smaller than test set ({len(test)})")
    rng = np.random.default_rng(seed)
    labels = retain.labels_unaudited()
    want = np.bincount(test.labels, minlength=test.num_classes)
    chosen = []
    missing = 0
    for c, q in enumerate(want):
        pos = np.flatnonzero(labels == c)
        take = min(int(q), len(pos))
        missing += int(q) - take
        if take:
            chosen.append(rng.choice(pos, size=take, replace=False))
    chosen = np.concatenate(chosen) if chosen else np.empty(0, dtype=np.int64)
    if missing:
        warnings.warn(
            f"retain set cannot match the test label histogram; filling {missing} slots uniformly",
            stacklevel=2,
        )
        rest = np.setdiff1d(np.arange(len(labels)), chosen)
        chosen = np.concatenate([chosen, rng.choice(rest, size=missing, replace=False)])
    return np.sort(retain.indices[chosen])


def concat_datasets(parts: Sequence[tuple], num_classes: int, name="concat") -> Dataset:
    """Build a dataset from ``(features, labels)`` pairs."""
    x = np.concatenate([p[0] for p in parts])
    y = np.concatenate([p[1] for p in parts])
    return Dataset(x, y, num_classes, name)
