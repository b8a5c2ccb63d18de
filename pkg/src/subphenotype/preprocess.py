"""Measurement aggregation, ratio derivation, mean imputation and z-scoring.

The order is fixed: aggregate -> derive ratios -> impute -> standardize.
Ratios are only formed from measured values so that imputed constants never
leak into them.
"""
from __future__ import annotations

import csv
import logging
from collections import Counter
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from .domain import BASE_IDS, RATIOS, VARIABLES, FeatureMatrix, Measurement, ScalerState
from .ingest import MeasurementTable

log = logging.getLogger(__name__)

_COL = {v: i for i, v in enumerate(BASE_IDS)}
DENOMINATOR_EPS = 1e-9


def _lookup(column: pd.Series, index: pd.Series) -> np.ndarray:
    """Map string ids to integer positions (NaN when unknown)."""
    if isinstance(column.dtype, pd.CategoricalDtype):
        per_category = pd.Series(np.asarray(column.cat.categories, dtype=object)).map(index).to_numpy(dtype=float)
        codes = column.cat.codes.to_numpy()
        out = np.full(codes.shape, np.nan)
        valid = codes >= 0
        out[valid] = per_category[codes[valid]]
        return out
    return pd.Series(np.asarray(column, dtype=object)).map(index).to_numpy(dtype=float)


def aggregate_admission(ms: Iterable[Measurement]) -> dict[str, float]:
    """Summarize one admission's measurements per variable.

    Abnormal-flagged values win: if any measurement of a variable is abnormal
    the feature is the mean of the abnormal values, otherwise the mean of the
    normal ones. Variables never measured are absent from the result.
    """
    abnormal: dict[str, list[float]] = {}
    normal: dict[str, list[float]] = {}
    admission = None
    for m in ms:
        if admission is None:
            admission = m.admission_id
        elif m.admission_id != admission:
            raise ValueError("measurements span more than one admission")
        (abnormal if m.abnormal else normal).setdefault(m.variable, []).append(m.value)
    out = {}
    for var in set(abnormal) | set(normal):
        vals = abnormal.get(var) or normal[var]
        out[var] = float(np.mean(np.sort(vals)))
    return out


def aggregate_measurements(table: MeasurementTable, row_ids: list[str]) -> FeatureMatrix:
    """Vectorized abnormal-preference aggregation for many admissions at once.

    Returns a 51-column matrix over ``row_ids`` with NaN where a variable was
    never measured. Measurements for admissions outside ``row_ids`` are ignored.
    """
    n, d = len(row_ids), len(BASE_IDS)
    frame = table.frame
    row_index = pd.Series(np.arange(n), index=pd.Index(row_ids, dtype=object))
    rows = _lookup(frame["admission_id"], row_index)
    cols = _lookup(frame["variable_id"], pd.Series(_COL))
    keep = ~(np.isnan(rows) | np.isnan(cols))
    cell = rows[keep].astype(np.int64) * d + cols[keep].astype(np.int64)
    value = frame["value"].to_numpy(dtype=float)[keep]
    ab = frame["abnormal"].to_numpy(dtype=bool)[keep]

    size = n * d
    sum_ab = np.bincount(cell[ab], weights=value[ab], minlength=size)
    cnt_ab = np.bincount(cell[ab], minlength=size)
    sum_nm = np.bincount(cell[~ab], weights=value[~ab], minlength=size)
    cnt_nm = np.bincount(cell[~ab], minlength=size)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(cnt_ab > 0, sum_ab / np.maximum(cnt_ab, 1), np.where(cnt_nm > 0, sum_nm / np.maximum(cnt_nm, 1), np.nan))
    values = out.reshape(n, d)
    return FeatureMatrix(list(row_ids), list(BASE_IDS), values, np.isnan(values))


def derive_ratios(m: FeatureMatrix, zero_denominators: Counter | None = None) -> FeatureMatrix:
    """Append the six ratio columns to a 51-column base matrix.

    A ratio is missing when either side is missing or the denominator is
    within 1e-9 of zero; the latter are tallied in ``zero_denominators``.
    """
    cols = list(m.column_ids)
    extra = np.empty((m.shape[0], len(RATIOS)))
    for j, r in enumerate(RATIOS):
        num = m.values[:, cols.index(r.numerator)]
        den = m.values[:, cols.index(r.denominator)]
        tiny = np.abs(den) <= DENOMINATOR_EPS
        n_tiny = int(tiny.sum())
        if n_tiny:
            log.warning("%s: %d near-zero denominators set missing", r.id, n_tiny)
            if zero_denominators is not None:
                zero_denominators[r.id] += n_tiny
        with np.errstate(divide="ignore", invalid="ignore"):
            extra[:, j] = np.where(tiny, np.nan, num / np.where(tiny, 1.0, den))
    values = np.hstack([m.values, extra])
    mask = np.hstack([m.missing_mask, np.isnan(extra)])
    return FeatureMatrix(list(m.row_ids), cols + [r.id for r in RATIOS], values, mask)


def compute_global_normal_means(table: MeasurementTable | Iterable[Measurement] | None) -> dict[str, float]:
    """Per-variable mean of normal (non-abnormal) measurements.

    Falls back to the catalog mean for variables without normal readings.
    """
    means = {v.id: v.normal_mean for v in VARIABLES}
    if table is None:
        return means
    if not isinstance(table, MeasurementTable):
        table = MeasurementTable.from_measurements(list(table))
    frame = table.frame
    if len(frame) == 0:
        return means
    normal = ~frame["abnormal"].to_numpy(dtype=bool)
    cols = _lookup(frame["variable_id"], pd.Series(_COL))
    ok = normal & ~np.isnan(cols)
    idx = cols[ok].astype(np.int64)
    sums = np.bincount(idx, weights=frame["value"].to_numpy(dtype=float)[ok], minlength=len(BASE_IDS))
    counts = np.bincount(idx, minlength=len(BASE_IDS))
    for j, var in enumerate(BASE_IDS):
        if counts[j] > 0:
            means[var] = float(sums[j] / counts[j])
    return means


def ratio_means(m: FeatureMatrix, base_means: Mapping[str, float]) -> dict[str, float]:
    """Imputation defaults for ratio columns.

    Mean of the observed ratio values when any exist, else ratio of the
    numerator and denominator base means.
    """
    out = {}
    for r in RATIOS:
        if r.id in m.column_ids:
            j = m.column_ids.index(r.id)
            observed = m.values[~m.missing_mask[:, j], j]
            if observed.size:
                out[r.id] = float(observed.mean())
                continue
        den = base_means[r.denominator]
        out[r.id] = base_means[r.numerator] / den if abs(den) > DENOMINATOR_EPS else 0.0
    return out


def impute(m: FeatureMatrix, means: Mapping[str, float]) -> FeatureMatrix:
    missing_cols = [c for c in m.column_ids if c not in means]
    if missing_cols:
        raise KeyError(f"no imputation mean for columns {missing_cols}")
    values = m.values.copy()
    mask = np.isnan(values) | m.missing_mask
    fill = np.array([means[c] for c in m.column_ids], dtype=float)
    if not np.isfinite(fill).all():
        raise ValueError("imputation means must be finite")
    values = np.where(mask, fill[None, :], values)
    return FeatureMatrix(list(m.row_ids), list(m.column_ids), values, mask, m.scaler)


def fit_scaler(values: np.ndarray, column_ids: list[str]) -> ScalerState:
    values = np.asarray(values, dtype=float)
    if values.shape[0] == 0:
        raise ValueError("cannot fit a scaler on zero rows")
    mean = values.mean(axis=0)
    std = values.std(axis=0)  # population std (divisor n)
    std[np.ptp(values, axis=0) == 0] = 0.0
    return ScalerState(list(column_ids), mean, std)


def _scale(values: np.ndarray, s: ScalerState) -> np.ndarray:
    safe = np.where(s.std > 0, s.std, 1.0)
    z = (values - s.mean) / safe
    z[:, s.std == 0] = 0.0
    return z


def standardize(m: FeatureMatrix) -> tuple[FeatureMatrix, ScalerState]:
    if np.isnan(m.values).any():
        raise ValueError("standardize requires an imputed matrix")
    scaler = fit_scaler(m.values, m.column_ids)
    out = FeatureMatrix(list(m.row_ids), list(m.column_ids), _scale(m.values, scaler), m.missing_mask.copy(), scaler)
    return out, scaler


def apply_scaler(m: FeatureMatrix, s: ScalerState) -> FeatureMatrix:
    if list(m.column_ids) != list(s.column_ids):
        raise ValueError("column ids do not match the scaler")
    return FeatureMatrix(list(m.row_ids), list(m.column_ids), _scale(m.values, s), m.missing_mask.copy(), s)


def physiological_matrix(
    table: MeasurementTable,
    row_ids: list[str],
    base_means: Mapping[str, float],
    ratio_defaults: Mapping[str, float] | None = None,
) -> tuple[FeatureMatrix, dict[str, float]]:
    """Aggregate, derive ratios and impute; returns the unstandardized 57-column matrix.

    ``ratio_defaults`` lets a second population reuse the first one's ratio
    means; when omitted they are computed from this matrix.
    """
    raw = derive_ratios(aggregate_measurements(table, row_ids))
    means = dict(base_means)
    means.update(ratio_defaults if ratio_defaults is not None else ratio_means(raw, base_means))
    return impute(raw, means), means


# ---------------------------------------------------------------------------
# CSV round trip


def write_feature_matrix(m: FeatureMatrix, path: str | Path) -> list[Path]:
    """Write ``<stem>.csv`` plus ``<stem>_mask.csv`` and, if fitted, ``<stem>_scaler.csv``."""
    path = Path(path)
    written = [path, path.with_name(path.stem + "_mask.csv")]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_id"] + m.column_ids)
        for rid, row in zip(m.row_ids, m.values):
            w.writerow([rid] + [repr(float(x)) for x in row])
    with written[1].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_id"] + m.column_ids)
        for rid, row in zip(m.row_ids, m.missing_mask):
            w.writerow([rid] + [int(x) for x in row])
    if m.scaler is not None:
        sp = path.with_name(path.stem + "_scaler.csv")
        with sp.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["column_id", "mean", "std"])
            for c, mu, sd in zip(m.scaler.column_ids, m.scaler.mean, m.scaler.std):
                w.writerow([c, repr(float(mu)), repr(float(sd))])
        written.append(sp)
    return written


def read_feature_matrix(path: str | Path) -> FeatureMatrix:
    path = Path(path)
    frame = pd.read_csv(path, dtype={"row_id": str})
    columns = list(frame.columns[1:])
    mask_path = path.with_name(path.stem + "_mask.csv")
    mask = pd.read_csv(mask_path, dtype={"row_id": str})[columns].to_numpy(dtype=bool) if mask_path.exists() else None
    scaler = None
    scaler_path = path.with_name(path.stem + "_scaler.csv")
    if scaler_path.exists():
        s = pd.read_csv(scaler_path, dtype={"column_id": str})
        scaler = ScalerState(list(s["column_id"]), s["mean"].to_numpy(dtype=float), s["std"].to_numpy(dtype=float))
    return FeatureMatrix(list(frame["row_id"]), columns, frame[columns].to_numpy(dtype=float), mask, scaler)
