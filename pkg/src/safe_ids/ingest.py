"""Loading, cleaning, splitting and min-max scaling of tabular flow data.

Every downstream fit step consumes ``filter_normal(train)`` only; validation and
test partitions are transformed with statistics fitted on that subset.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError
from .serialize import FORMAT_VERSION, check_version, dump_json, load_json

logger = logging.getLogger(__name__)

# a column is numeric when at least this share of its non-missing cells parse
NUMERIC_SHARE = 0.95


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with binary labels (0 normal, 1 attack).

    ``row_ids`` are positions in the cleaned source table; they survive
    splitting and filtering so fit steps can be audited for leakage.
    """

    features: np.ndarray
    labels: np.ndarray
    column_names: tuple[str, ...]
    row_ids: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {features.shape}")
        n, d = features.shape
        if labels.shape != (n,):
            raise DataError(f"labels shape {labels.shape} does not match {n} rows")
        if len(self.column_names) != d:
            raise DataError(f"{len(self.column_names)} column names for {d} columns")
        if len(set(self.column_names)) != d:
            raise DataError("column names must be unique")
        if not np.all(np.isfinite(features)):
            raise DataError("features contain non-finite values")
        if not np.all((labels == 0) | (labels == 1)):
            raise DataError("labels must be 0 or 1")
        row_ids = np.arange(n) if self.row_ids is None else np.asarray(self.row_ids, dtype=np.int64)
        if row_ids.shape != (n,):
            raise DataError("row_ids length does not match rows")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "column_names", tuple(self.column_names))
        object.__setattr__(self, "row_ids", row_ids)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def constant_columns(self) -> list[str]:
        """Names of columns whose values never vary (kept, only flagged)."""
        if self.n == 0:
            return []
        flat = np.ptp(self.features, axis=0) == 0
        return [name for name, c in zip(self.column_names, flat) if c]

    def take(self, idx: np.ndarray) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.column_names, self.row_ids[idx])

    def select_columns(self, indices: Sequence[int]) -> "Dataset":
        indices = list(indices)
        names = tuple(self.column_names[i] for i in indices)
        return Dataset(self.features[:, indices], self.labels, names, self.row_ids)

    def to_frame(self, label_column: str = "label") -> pd.DataFrame:
        df = pd.DataFrame(self.features, columns=list(self.column_names))
        df[label_column] = self.labels
        return df


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.6
    val_frac: float = 0.2
    test_frac: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if any(f <= 0 for f in fracs):
            raise ConfigError(f"split fractions must be positive, got {fracs}")
        if abs(math.fsum(fracs) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {math.fsum(fracs)}")


def _parse_numeric(col: pd.Series) -> pd.Series:
    cells = col.str.strip()
    out = pd.to_numeric(cells, errors="coerce")
    ok = out.notna()
    # to_numeric's fast parser is not correctly rounded; re-parse exactly
    out[ok] = cells[ok].astype(np.float64)
    return out


def load_dataset(
    path: str | Path,
    label_column: str,
    positive_label_values: Iterable[str],
    delimiter: str = ",",
    drop_columns: Iterable[str] = (),
) -> Dataset:
    """Read a delimited flow table into a :class:`Dataset`.

    Args:
        path: Text table with a header row.
        label_column: Column holding the raw class label.
        positive_label_values: Raw label values counted as attacks (label 1).
            Every other value maps to 0.
        delimiter: Field separator.
        drop_columns: Extra columns to discard (identifiers, timestamps...).

    Returns:
        The cleaned dataset. Non-numeric feature columns are integer-coded in
        first-appearance order; rows with missing or non-finite values in any
        feature are dropped.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    raw = pd.read_csv(path, sep=delimiter, dtype=str, keep_default_na=False, encoding="utf-8")
    raw.columns = [c.strip() for c in raw.columns]
    if label_column not in raw.columns:
        raise DataError(f"label column {label_column!r} not in {list(raw.columns)}")
    positives = {str(v).strip() for v in positive_label_values}
    drop = set(drop_columns)
    missing_drop = drop - set(raw.columns)
    if missing_drop:
        raise DataError(f"drop columns not found: {sorted(missing_drop)}")

    labels_raw = raw[label_column].str.strip()
    feature_cols = [c for c in raw.columns if c != label_column and c not in drop]
    if not feature_cols:
        raise DataError("no feature columns left")

    keep = (labels_raw != "").to_numpy()
    numeric: dict[str, pd.Series] = {}
    categorical: list[str] = []
    for col in feature_cols:
        cells = raw[col].str.strip()
        present = cells != ""
        keep &= present.to_numpy()
        parsed = _parse_numeric(raw[col])
        n_present = int(present.sum())
        share = parsed[present].notna().sum() / n_present if n_present else 1.0
        if share >= NUMERIC_SHARE:
            numeric[col] = parsed
            keep &= np.isfinite(parsed.to_numpy(dtype=np.float64, na_value=np.nan))
        else:
            categorical.append(col)

    n_dropped = int((~keep).sum())
    if n_dropped:
        logger.info("dropped %d of %d rows with missing/unparseable values", n_dropped, len(raw))
    if not keep.any():
        raise DataError(f"zero rows left after cleaning {path}")

    columns = []
    for col in feature_cols:
        if col in numeric:
            columns.append(numeric[col].to_numpy(dtype=np.float64, na_value=np.nan)[keep])
        else:
            cells = raw[col].str.strip()[keep]
            codes, _ = pd.factorize(cells, sort=False)
            columns.append(codes.astype(np.float64))
    if categorical:
        logger.info("integer-encoded categorical columns: %s", categorical)
    features = np.column_stack(columns)
    labels = labels_raw[keep].isin(positives).to_numpy().astype(np.int64)
    ds = Dataset(features, labels, tuple(feature_cols))
    if ds.constant_columns:
        logger.info("constant columns: %s", ds.constant_columns)
    return ds


def split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Uniform random train/val/test partition.

    Sizes are ``floor(n * frac)`` for train and validation; the remainder goes
    to test.
    """
    n = ds.n
    if n < 5:
        raise DataError(f"need at least 5 rows to split, got {n}")
    n_train = int(math.floor(n * spec.train_frac + 1e-9))
    n_val = int(math.floor(n * spec.val_frac + 1e-9))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) <= 0:
        raise DataError(f"degenerate split sizes ({n_train}, {n_val}, {n_test}) for n={n}")
    perm = np.random.default_rng(spec.seed).permutation(n)
    return (
        ds.take(perm[:n_train]),
        ds.take(perm[n_train : n_train + n_val]),
        ds.take(perm[n_train + n_val :]),
    )


def filter_normal(ds: Dataset) -> Dataset:
    mask = ds.labels == 0
    if not mask.any():
        raise DataError("dataset has no normal (label 0) rows")
    return ds.take(np.flatnonzero(mask))


@dataclass(frozen=True)
class Normalizer:
    """Per-column min-max scaler; out-of-range values are clipped to [0, 1]."""

    column_names: tuple[str, ...]
    mins: np.ndarray
    maxs: np.ndarray

    def transform(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.shape[-1] != len(self.mins):
            raise DataError(f"expected {len(self.mins)} columns, got {features.shape[-1]}")
        span = self.maxs - self.mins
        flat = span == 0
        safe_span = np.where(flat, 1.0, span)
        out = np.clip((features - self.mins) / safe_span, 0.0, 1.0)
        out[..., flat] = 0.0
        return out

    def to_dict(self) -> dict:
        return {
            "kind": "normalizer",
            "version": FORMAT_VERSION,
            "columns": [
                {"name": n, "min": float(lo), "max": float(hi)}
                for n, lo, hi in zip(self.column_names, self.mins, self.maxs)
            ],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Normalizer":
        check_version(obj, "normalizer")
        cols = obj["columns"]
        return cls(
            tuple(c["name"] for c in cols),
            np.array([c["min"] for c in cols], dtype=np.float64),
            np.array([c["max"] for c in cols], dtype=np.float64),
        )

    def save(self, path: str | Path) -> None:
        dump_json(self.to_dict(), path)

    @classmethod
    def load(cls, path: str | Path) -> "Normalizer":
        return cls.from_dict(load_json(path))


def fit_normalizer(train_normal: Dataset) -> Normalizer:
    if train_normal.n == 0:
        raise DataError("cannot fit a normalizer on zero rows")
    if np.any(train_normal.labels != 0):
        raise DataError("normalizer must be fitted on normal rows only")
    return Normalizer(
        train_normal.column_names,
        train_normal.features.min(axis=0),
        train_normal.features.max(axis=0),
    )


def apply_normalizer(nrm: Normalizer, ds: Dataset) -> Dataset:
    if tuple(ds.column_names) != tuple(nrm.column_names):
        raise DataError("dataset columns do not match the fitted normalizer")
    return Dataset(nrm.transform(ds.features), ds.labels, ds.column_names, ds.row_ids)


def save_dataset(ds: Dataset, path: str | Path, label_column: str = "label") -> None:
    """Write a dataset as CSV with a numeric 0/1 label column."""
    ds.to_frame(label_column).to_csv(path, index=False, float_format="%.17g")


def read_dataset(path: str | Path, label_column: str = "label") -> Dataset:
    """Read a CSV previously written by :func:`save_dataset`."""
    return load_dataset(path, label_column, {"1"})
