"""Dataset ingestion, normalization, splitting, and windowing.

Loaders produce an immutable :class:`Dataset` (row-major feature matrix plus
aligned targets). Supported sources: IDX image/label pairs, numeric CSV
tables, and per-unit run-to-failure time series turned into strided windows
with a clamped remaining-useful-life target. A JSON manifest describes which
loader to use and with which options.
"""

from __future__ import annotations

import csv
import gzip
import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .genotype import ProblemKind

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataError(ValueError):
    """A dataset could not be loaded or is malformed."""


@dataclass(frozen=True)
class Dataset:
    """Immutable feature matrix with aligned targets."""

    features: np.ndarray
    targets: np.ndarray
    problem: ProblemKind
    column_names: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        if feats.ndim != 2:
            raise DataError(f"features must be 2-D (samples x features), got shape {feats.shape}")
        if self.problem == ProblemKind.CLASSIFICATION:
            targets = np.asarray(self.targets, dtype=np.int64)
        else:
            targets = np.asarray(self.targets, dtype=np.float64)
        if targets.ndim != 1:
            raise DataError(f"targets must be 1-D, got shape {targets.shape}")
        if len(feats) != len(targets):
            raise DataError(
                f"feature rows ({len(feats)}) and targets ({len(targets)}) are misaligned"
            )
        if not np.all(np.isfinite(feats)):
            raise DataError("features contain non-finite values")
        if targets.dtype.kind == "f" and not np.all(np.isfinite(targets)):
            raise DataError("targets contain non-finite values")
        feats.setflags(write=False)
        targets.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "targets", targets)

    @property
    def sample_count(self) -> int:
        return self.features.shape[0]

    @property
    def feature_count(self) -> int:
        return self.features.shape[1]

    def take(self, indices) -> "Dataset":
        idx = np.asarray(indices)
        return Dataset(
            self.features[idx].copy(), self.targets[idx].copy(), self.problem, self.column_names
        )


# --- IDX --------------------------------------------------------------------

def _read_idx(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    blob = path.read_bytes()
    if blob[:2] == b"\x1f\x8b":
        blob = gzip.decompress(blob)
    if len(blob) < 4:
        raise DataError(f"{path}: truncated header")
    magic = int.from_bytes(blob[:4], "big")
    if magic not in (IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC):
        raise DataError(f"{path}: bad magic 0x{magic:08x}")
    ndim = blob[3]
    header_len = 4 + 4 * ndim
    if len(blob) < header_len:
        raise DataError(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", blob[4:header_len])
    expected = int(np.prod(dims))
    payload = np.frombuffer(blob, dtype=np.uint8, offset=header_len)
    if payload.size != expected:
        raise DataError(
            f"{path}: payload has {payload.size} bytes, header promises {expected}"
        )
    return payload.reshape(dims)


def load_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label pair; pixels scaled to [0, 1] and unrolled."""
    images = _read_idx(images_path)
    labels = _read_idx(labels_path)
    if images.ndim != 3:
        raise DataError(f"{images_path}: expected a rank-3 image tensor, got rank {images.ndim}")
    if labels.ndim != 1:
        raise DataError(f"{labels_path}: expected a rank-1 label vector, got rank {labels.ndim}")
    if len(images) != len(labels):
        raise DataError(
            f"image count {len(images)} does not match label count {len(labels)}"
        )
    feats = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return Dataset(feats, labels.astype(np.int64), ProblemKind.CLASSIFICATION)


# --- normalization ----------------------------------------------------------

def normalize_features(features: np.ndarray, mode: str) -> np.ndarray:
    """Column-wise z-score or min-max scaling; ``mode='none'`` is identity.

    Constant columns map to zero under either mode (with a warning), which
    also makes both modes idempotent.
    """
    X = np.asarray(features, dtype=np.float64)
    if mode == "none":
        return X.copy()
    if mode == "zscore":
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        flat = std == 0.0
        if flat.any():
            warnings.warn(f"{int(flat.sum())} constant column(s) zeroed by z-score scaling")
        safe = np.where(flat, 1.0, std)
        out = (X - mean) / safe
        out[:, flat] = 0.0
        return out
    if mode == "minmax":
        lo = X.min(axis=0)
        hi = X.max(axis=0)
        flat = hi == lo
        if flat.any():
            warnings.warn(f"{int(flat.sum())} constant column(s) zeroed by min-max scaling")
        span = np.where(flat, 1.0, hi - lo)
        out = (X - lo) / span
        out[:, flat] = 0.0
        return out
    raise DataError(f"unknown normalization mode {mode!r}")


# --- CSV --------------------------------------------------------------------

def load_csv(
    path,
    feature_columns: Sequence,
    target_column,
    header: bool = True,
    normalization: str = "none",
    problem: ProblemKind = ProblemKind.REGRESSION,
) -> Dataset:
    """Load a rectangular numeric CSV table.

    Columns may be addressed by name (requires ``header=True``) or by
    zero-based index. Malformed input is rejected with row/column
    diagnostics.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    names = None
    if header:
        names = [c.strip() for c in rows[0]]
        rows = rows[1:]
        if not rows:
            raise DataError(f"{path}: header only, no data rows")

    def resolve(col) -> int:
        if isinstance(col, int):
            if not 0 <= col < len(rows[0]):
                raise DataError(f"column index {col} out of range (row width {len(rows[0])})")
            return col
        if names is None:
            raise DataError(f"column {col!r} addressed by name but the file has no header")
        try:
            return names.index(col)
        except ValueError:
            raise DataError(f"no column named {col!r} (have: {', '.join(names)})") from None

    width = len(rows[0])
    feat_idx = [resolve(c) for c in feature_columns]
    tgt_idx = resolve(target_column)

    feats = np.empty((len(rows), len(feat_idx)), dtype=np.float64)
    tgts = np.empty(len(rows), dtype=np.float64)
    for r, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"{path}: row {r} has {len(row)} cells, expected {width}")
        for j, c in enumerate(feat_idx + [tgt_idx]):
            try:
                value = float(row[c])
            except ValueError:
                raise DataError(
                    f"{path}: row {r}, column {c}: not numeric: {row[c]!r}"
                ) from None
            if j < len(feat_idx):
                feats[r, j] = value
            else:
                tgts[r] = value
    feats = normalize_features(feats, normalization)
    if problem == ProblemKind.CLASSIFICATION:
        tgts = tgts.astype(np.int64)
    col_names = tuple(names[i] for i in feat_idx) if names else None
    return Dataset(feats, tgts, problem, col_names)


# --- sliding-window RUL -----------------------------------------------------

def window_rul(
    series: Mapping,
    window: int = 24,
    stride: int = 1,
    early_rul: float = 129,
    sensor_columns: Sequence[int] | None = None,
) -> Dataset:
    """Turn per-unit run-to-failure series into flattened strided windows.

    ``series`` maps a unit id to a (cycles x sensors) array whose last row
    is the failure point. Each window of ``window`` consecutive rows becomes
    one sample; its target is the cycles left until failure at the window's
    end, clamped to ``early_rul``.
    """
    if window < 1 or stride < 1:
        raise DataError("window and stride must be positive")
    feats_out, tgts_out = [], []
    for unit in sorted(series):
        arr = np.asarray(series[unit], dtype=np.float64)
        if arr.ndim != 2:
            raise DataError(f"unit {unit}: series must be 2-D (cycles x sensors)")
        if sensor_columns is not None:
            bad = [c for c in sensor_columns if not 0 <= c < arr.shape[1]]
            if bad:
                raise DataError(f"unit {unit}: sensor column(s) {bad} out of range")
            arr = arr[:, list(sensor_columns)]
        T = len(arr)
        if T < window:
            raise DataError(f"unit {unit}: series length {T} shorter than window {window}")
        for start in range(0, T - window + 1, stride):
            feats_out.append(arr[start : start + window].reshape(-1))
            rul = T - start - window  # cycles to failure at window end
            tgts_out.append(min(float(rul), float(early_rul)))
    return Dataset(np.asarray(feats_out), np.asarray(tgts_out), ProblemKind.REGRESSION)


def load_rul_table(
    path,
    unit_column: int = 0,
    sensor_columns: Sequence[int] | None = None,
    window: int = 24,
    stride: int = 1,
    early_rul: float = 129,
    normalization: str = "minmax",
) -> Dataset:
    """Load a whitespace-separated run-to-failure table and window it.

    Rows are grouped by the unit id column in file order; the selected
    sensor columns are normalized over the whole table before windowing.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    try:
        table = np.loadtxt(path, dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: not a numeric table: {exc}") from None
    if table.ndim == 1:
        table = table[None, :]
    if sensor_columns is None:
        sensor_columns = [c for c in range(table.shape[1]) if c != unit_column]
    bad = [c for c in sensor_columns if not 0 <= c < table.shape[1]]
    if bad:
        raise DataError(f"sensor column(s) {bad} out of range (table width {table.shape[1]})")
    sensors = normalize_features(table[:, list(sensor_columns)], normalization)
    units = table[:, unit_column]
    series = {}
    for unit in np.unique(units):
        series[float(unit)] = sensors[units == unit]
    return window_rul(series, window=window, stride=stride, early_rul=early_rul)


# --- splitting --------------------------------------------------------------

def split(ds: Dataset, ratio: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic shuffled train/validation split; ``ratio`` is the validation share."""
    if not 0.0 < ratio < 1.0:
        raise DataError(f"split ratio must be in (0, 1), got {ratio}")
    n = ds.sample_count
    n_val = round(ratio * n)
    if n_val == 0 or n_val == n:
        raise DataError(f"split of {n} samples at ratio {ratio} leaves one side empty")
    perm = np.random.default_rng(seed).permutation(n)
    return ds.take(perm[n_val:]), ds.take(perm[:n_val])


def kfold(ds: Dataset, k: int, seed: int) -> list[np.ndarray]:
    """Deterministic disjoint folds covering the dataset; sizes differ by at most one."""
    if k < 2:
        raise DataError(f"need at least 2 folds, got {k}")
    n = ds.sample_count
    if k > n:
        raise DataError(f"cannot make {k} folds from {n} samples")
    perm = np.random.default_rng(seed).permutation(n)
    base, extra = divmod(n, k)
    folds, at = [], 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        folds.append(np.sort(perm[at : at + size]))
        at += size
    return folds


# --- manifest ---------------------------------------------------------------

def load_manifest(path) -> Dataset:
    """Load a dataset as described by a JSON manifest.

    The manifest names the format (``idx``, ``csv`` or ``rul``) and its
    loader options; relative paths resolve against the manifest's own
    directory. An optional ``limit`` keeps only the first N samples.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such manifest: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or "format" not in doc:
        raise DataError(f"{path}: manifest must be an object with a 'format' field")
    base = path.parent

    def resolve(p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else base / p

    fmt = doc["format"]
    if fmt == "idx":
        ds = load_idx(resolve(doc["images"]), resolve(doc["labels"]))
    elif fmt == "csv":
        ds = load_csv(
            resolve(doc["path"]),
            feature_columns=doc["feature_columns"],
            target_column=doc["target_column"],
            header=doc.get("header", True),
            normalization=doc.get("normalization", "none"),
            problem=ProblemKind(doc.get("problem", "regression")),
        )
    elif fmt == "rul":
        ds = load_rul_table(
            resolve(doc["path"]),
            unit_column=doc.get("unit_column", 0),
            sensor_columns=doc.get("sensor_columns"),
            window=doc.get("window", 24),
            stride=doc.get("stride", 1),
            early_rul=doc.get("early_rul", 129),
            normalization=doc.get("normalization", "minmax"),
        )
    else:
        raise DataError(f"{path}: unknown dataset format {fmt!r}")
    limit = doc.get("limit")
    if limit is not None:
        if not isinstance(limit, int) or limit < 1:
            raise DataError(f"{path}: 'limit' must be a positive integer")
        ds = ds.take(np.arange(min(limit, ds.sample_count)))
    return ds
