"""Synthetic regression datasets, standardization and CSV ingestion."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from symmcmc.model import RegressionData

log = logging.getLogger(__name__)


@dataclass
class Standardization:
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray, Y: np.ndarray) -> "Standardization":
        return cls(X.mean(axis=0), _safe_std(X, "feature"), Y.mean(axis=0), _safe_std(Y, "target"))

    def apply(self, X: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return (X - self.x_mean) / self.x_std, (Y - self.y_mean) / self.y_std

    def invert(self, X: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return X * self.x_std + self.x_mean, Y * self.y_std + self.y_mean

    def to_json(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("x_mean", "x_std", "y_mean", "y_std")}


def _safe_std(A: np.ndarray, what: str) -> np.ndarray:
    # a constant column is passed through shifted but unscaled
    std = A.std(axis=0)
    flat = std == 0.0
    if np.any(flat):
        log.warning("%s column(s) %s have zero variance; leaving them unscaled", what, np.flatnonzero(flat).tolist())
        std = np.where(flat, 1.0, std)
    return std


@dataclass
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    name: str = "dataset"
    standardization: Standardization | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.asarray(self.Y, dtype=float)
        self.Y = Y[:, None] if Y.ndim == 1 else Y
        if self.X.shape[0] != self.Y.shape[0]:
            raise ValueError("X and Y have different numbers of rows")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def regression_data(self) -> RegressionData:
        return RegressionData(self.X, self.Y)

    def to_csv(self, path: str | Path) -> None:
        n, m = self.X.shape[1], self.Y.shape[1]
        header = [f"x{i + 1}" for i in range(n)] + (["y"] if m == 1 else [f"y{i + 1}" for i in range(m)])
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for x, y in zip(self.X, self.Y):
                writer.writerow([repr(float(v)) for v in np.concatenate([x, y])])

    def metadata(self) -> dict:
        out = {"name": self.name, **self.meta}
        if self.standardization is not None:
            out["standardization"] = self.standardization.to_json()
        return out


def regression2d_surface(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    return x1 * np.sin(x1) + np.cos(x2)


def gen_regression2d(n_points: int = 256, seed: int = 0, noise: float = 0.1) -> Dataset:
    """``x1, x2 ~ U(-2, 2)``, ``y ~ N(x1 sin(x1) + cos(x2), noise^2)``."""
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    rng = np.random.default_rng(seed)
    X = rng.uniform(-2.0, 2.0, size=(n_points, 2))
    y = regression2d_surface(X[:, 0], X[:, 1]) + noise * rng.standard_normal(n_points)
    return Dataset(X, y, "regression2d", meta={"seed": seed, "n_points": n_points})


@dataclass
class SinusoidSpec:
    """``y = amplitude * sin(2 pi frequency x) + noise``, ``x`` uniform on the union of ``intervals``."""

    amplitude: float = 1.0
    frequency: float = 1.0
    noise: float = 0.1
    intervals: tuple[tuple[float, float], ...] = ((-1.0, 1.0),)


def gen_sinusoidal(n_points: int = 150, seed: int = 0, spec: SinusoidSpec | None = None) -> Dataset:
    """A 1D sinusoid, optionally with gaps between input intervals.

    This is a stand-in for small 1D demo sets; it is not a copy of any
    published dataset.
    """
    spec = spec or SinusoidSpec()
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    rng = np.random.default_rng(seed)
    bounds = np.asarray(spec.intervals, dtype=float)
    if bounds.ndim != 2 or bounds.shape[1] != 2 or np.any(bounds[:, 1] <= bounds[:, 0]):
        raise ValueError(f"bad intervals {spec.intervals}")
    lengths = bounds[:, 1] - bounds[:, 0]
    which = rng.choice(len(bounds), size=n_points, p=lengths / lengths.sum())
    x = bounds[which, 0] + rng.random(n_points) * lengths[which]
    y = spec.amplitude * np.sin(2 * np.pi * spec.frequency * x)
    if spec.noise > 0:
        y = y + spec.noise * rng.standard_normal(n_points)
    return Dataset(x[:, None], y, "sinusoidal", meta={"seed": seed, "n_points": n_points})


def split_standardize(dataset: Dataset, train_frac: float = 0.8, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded random split; the train split's moments standardize both parts (targets included)."""
    N = len(dataset)
    if N < 2:
        raise ValueError("need at least two observations to split")
    n_train = int(round(train_frac * N))
    n_train = min(max(n_train, 1), N - 1)
    perm = np.random.default_rng(seed).permutation(N)
    tr, te = perm[:n_train], perm[n_train:]
    std = Standardization.fit(dataset.X[tr], dataset.Y[tr])
    meta = {**dataset.meta, "split_seed": seed, "train_frac": train_frac}
    Xtr, Ytr = std.apply(dataset.X[tr], dataset.Y[tr])
    Xte, Yte = std.apply(dataset.X[te], dataset.Y[te])
    return (
        Dataset(Xtr, Ytr, f"{dataset.name}-train", std, {**meta, "split": "train"}),
        Dataset(Xte, Yte, f"{dataset.name}-test", std, {**meta, "split": "test"}),
    )


class CSVFormatError(ValueError):
    pass


def load_csv(path: str | Path, target_columns: list[str] | None = None, name: str | None = None) -> Dataset:
    """Numeric CSV with a header row. Targets default to the last column."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CSVFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if not header or any(_is_number(h) for h in header):
        raise CSVFormatError(f"{path}: missing header row")
    if target_columns is None:
        target_columns = [header[-1]]
    missing = [c for c in target_columns if c not in header]
    if missing:
        raise CSVFormatError(f"{path}: target column(s) {missing} not in header {header}")
    values = np.empty((len(rows) - 1, len(header)))
    for r, row in enumerate(rows[1:]):
        if len(row) != len(header):
            raise CSVFormatError(f"{path}: row {r + 2} has {len(row)} fields, expected {len(header)}")
        for c, cell in enumerate(row):
            try:
                values[r, c] = float(cell)
            except ValueError:
                raise CSVFormatError(f"{path}: row {r + 2}, column {c + 1} ({header[c]!r}): "
                                     f"non-numeric value {cell!r}") from None
    if values.shape[0] == 0:
        raise CSVFormatError(f"{path}: no data rows")
    t_idx = [header.index(c) for c in target_columns]
    f_idx = [i for i in range(len(header)) if i not in t_idx]
    return Dataset(values[:, f_idx], values[:, t_idx], name or path.stem,
                   meta={"features": [header[i] for i in f_idx], "targets": target_columns})


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def save_metadata(dataset: Dataset, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(dataset.metadata(), fh, indent=2)
