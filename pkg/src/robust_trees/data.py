"""Datasets, min-max scaling and the perturbation-budget configuration.

Features are kept dense (``N x d`` float arrays). All robust training and
attacks operate in the normalized cube ``[0, 1]^d``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence, Union

import numpy as np


class DataError(ValueError):
    """Raised for malformed input files or inconsistent arrays."""


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.float64)
        if X.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise DataError(f"labels shape {y.shape} does not match {X.shape[0]} examples")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain NaN or infinite values")
        if not np.all(np.isfinite(y)):
            raise DataError("labels contain NaN or infinite values")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def example_count(self) -> int:
        return self.features.shape[0]

    @property
    def feature_count(self) -> int:
        return self.features.shape[1]

    def is_binary(self) -> bool:
        return bool(np.all((self.labels == 0) | (self.labels == 1)))

    def subset(self, rows=None, columns=None) -> "Dataset":
        X, y = self.features, self.labels
        if rows is not None:
            X, y = X[rows], y[rows]
        if columns is not None:
            X = X[:, columns]
        return Dataset(X, y)


@dataclass(frozen=True)
class Scaler:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64)
        hi = np.asarray(self.max, dtype=np.float64)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DataError("scaler min/max must be 1-D vectors of equal length")
        if np.any(lo > hi):
            raise DataError("scaler requires min <= max for every feature")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def feature_count(self) -> int:
        return self.min.shape[0]

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.feature_count:
            raise DataError(
                f"dimension mismatch: scaler has {self.feature_count} features, data has {X.shape[1]}")
        span = self.max - self.min
        safe = np.where(span > 0, span, 1.0)
        out = np.clip((X - self.min) / safe, 0.0, 1.0)
        out[:, span == 0] = 0.0
        return out

    def to_json(self) -> str:
        return json.dumps({"min": self.min.tolist(), "max": self.max.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "Scaler":
        try:
            obj = json.loads(text)
            return cls(np.array(obj["min"], dtype=float), np.array(obj["max"], dtype=float))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise DataError(f"invalid scaler JSON: {exc}") from exc


class RobustConfig:
    """Per-feature l-infinity perturbation radius, in normalized units.

    A scalar ``epsilon`` is the same as a vector with all entries equal;
    :meth:`for_features` broadcasts it.
    """

    def __init__(self, epsilon: Union[float, Sequence[float]] = 0.0):
        eps = np.asarray(epsilon, dtype=np.float64)
        if eps.ndim > 1:
            raise ValueError("epsilon must be a scalar or a 1-D vector")
        if not np.all(np.isfinite(eps)) or np.any(eps < 0):
            raise ValueError(f"epsilon entries must be finite and >= 0, got {epsilon!r}")
        self.epsilon = float(eps) if eps.ndim == 0 else eps.copy()

    @property
    def is_vector(self) -> bool:
        return isinstance(self.epsilon, np.ndarray)

    def for_features(self, d: int) -> np.ndarray:
        if self.is_vector:
            if self.epsilon.shape[0] != d:
                raise ValueError(f"epsilon vector has {self.epsilon.shape[0]} entries, expected {d}")
            return self.epsilon
        return np.full(d, self.epsilon)

    def subset(self, columns) -> "RobustConfig":
        if not self.is_vector:
            return self
        return RobustConfig(self.epsilon[np.asarray(columns)])

    def is_zero(self) -> bool:
        return bool(np.all(np.asarray(self.epsilon) == 0))

    def to_jsonable(self):
        return self.epsilon.tolist() if self.is_vector else self.epsilon

    def __eq__(self, other):
        if not isinstance(other, RobustConfig):
            return NotImplemented
        return np.array_equal(np.asarray(self.epsilon), np.asarray(other.epsilon))

    def __repr__(self):
        return f"RobustConfig(epsilon={self.to_jsonable()!r})"

    @classmethod
    def parse(cls, text: str) -> "RobustConfig":
        """Parse ``"0.3"`` or ``"0.1,0.2,0.3"``."""
        parts = [p for p in text.split(",") if p.strip()]
        try:
            values = [float(p) for p in parts]
        except ValueError as exc:
            raise ValueError(f"cannot parse epsilon {text!r}") from exc
        if len(values) == 1 and "," not in text:
            return cls(values[0])
        return cls(values)


def parse_libsvm(lines, source: str = "<input>") -> Dataset:
    labels = []
    rows = []
    width = 0
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            label = float(tokens[0])
        except ValueError:
            raise DataError(f"{source}:{lineno}: invalid label {tokens[0]!r}") from None
        if not math.isfinite(label):
            raise DataError(f"{source}:{lineno}: non-finite label")
        entries = {}
        prev = 0
        for tok in tokens[1:]:
            idx_text, sep, val_text = tok.partition(":")
            try:
                if not sep:
                    raise ValueError
                idx = int(idx_text)
                val = float(val_text)
            except ValueError:
                raise DataError(f"{source}:{lineno}: malformed entry {tok!r}") from None
            if idx <= prev:
                raise DataError(f"{source}:{lineno}: indices must be 1-based and strictly increasing")
            if not math.isfinite(val):
                raise DataError(f"{source}:{lineno}: non-finite value in {tok!r}")
            entries[idx] = val
            prev = idx
        width = max(width, prev)
        labels.append(label)
        rows.append(entries)
    if not rows:
        raise DataError(f"{source}: no examples")
    X = np.zeros((len(rows), width))
    for i, entries in enumerate(rows):
        for idx, val in entries.items():
            X[i, idx - 1] = val
    return Dataset(X, np.array(labels))


def load_libsvm(path) -> Dataset:
    """Read a LIBSVM text file into a dense :class:`Dataset`.

    Missing indices are filled with 0.0 and the feature count is the largest
    index that appears in the file.
    """
    path = Path(path)
    with path.open() as fh:
        return parse_libsvm(fh, source=str(path))


def save_libsvm(dataset: Dataset, path) -> None:
    with Path(path).open("w") as fh:
        for x, y in zip(dataset.features, dataset.labels):
            items = " ".join(f"{j + 1}:{v!r}" for j, v in enumerate(x.tolist()) if v != 0)
            label = int(y) if float(y).is_integer() else repr(float(y))
            fh.write(f"{label} {items}\n".rstrip(" \n") + "\n")


def fit_scaler(train: Dataset) -> Scaler:
    if train.example_count == 0:
        raise DataError("cannot fit a scaler on an empty dataset")
    return Scaler(train.features.min(axis=0), train.features.max(axis=0))


def apply_scaler(scaler: Scaler, data: Dataset) -> Dataset:
    return Dataset(scaler.transform(data.features), data.labels)


def to_binary_labels(dataset: Dataset) -> Dataset:
    """Map a two-valued label column (e.g. -1/+1 or 2/4) onto 0/1.

    The smaller label becomes 0. Labels already in {0, 1} are left alone.
    """
    if dataset.is_binary():
        return dataset
    values = np.unique(dataset.labels)
    if values.size != 2:
        raise DataError(f"expected two distinct labels, found {values.size}")
    return Dataset(dataset.features, (dataset.labels == values[1]).astype(float))


def train_test_split(dataset: Dataset, test_fraction: float = 0.2, seed: int = 0):
    rng = np.random.default_rng(seed)
    order = rng.permutation(dataset.example_count)
    n_test = int(round(test_fraction * dataset.example_count))
    test_rows = np.sort(order[:n_test])
    train_rows = np.sort(order[n_test:])
    return dataset.subset(rows=train_rows), dataset.subset(rows=test_rows)


def bundled_path(name: str) -> Path:
    """Filesystem path of a dataset shipped with the package."""
    return Path(str(resources.files("robust_trees") / "datasets" / f"{name}.libsvm"))


def load_bundled(name: str) -> Dataset:
    """Load ``"breast-cancer"`` or ``"diabetes"`` (raw, unnormalized, 0/1 labels)."""
    path = bundled_path(name)
    if not path.exists():
        raise DataError(f"unknown bundled dataset {name!r}")
    return load_libsvm(path)


def toy_split_dataset() -> Dataset:
    """Ten labelled points where the accurate split is fragile.

    Feature 1 (index 1) separates the classes with 8/10 accuracy, but every
    point sits within 0.1 of that boundary. Feature 0 gives only 7/10, with
    a margin wider than 0.1 on both sides of its best cut.
    """
    # columns: x0, x1, label
    pts = [
        (0.05, 0.54, 1),
        (0.10, 0.44, 1),
        (0.50, 0.42, 0),
        (0.55, 0.55, 1),
        (0.60, 0.56, 0),
        (0.70, 0.57, 1),
        (0.75, 0.43, 0),
        (0.80, 0.45, 0),
        (0.90, 0.46, 0),
        (0.95, 0.58, 1),
    ]
    arr = np.array(pts, dtype=float)
    return Dataset(arr[:, :2], arr[:, 2])
