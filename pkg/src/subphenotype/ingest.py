"""CSV ingestion, delirium labelling and the cohort exclusion cascade."""
from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Iterator

import numpy as np
import pandas as pd
from pandas.api.types import union_categoricals

from .domain import (
    BASE_IDS,
    AdmissionRecord,
    AdmissionType,
    Gender,
    Measurement,
    validate_record,
)

log = logging.getLogger(__name__)

ADMISSION_COLUMNS = [
    "admission_id",
    "patient_id",
    "age",
    "gender",
    "admit_time",
    "discharge_time",
    "admission_type",
    "ventilation",
    "icd_codes",
    "cam_icu_positive_times",
    "haloperidol_given",
    "died_in_hospital",
    "total_admission_count",
    "admission_rank_order",
]
MEASUREMENT_COLUMNS = ["admission_id", "variable_id", "value", "abnormal", "time"]

# ICD-9 and ICD-10 delirium ascertainment codes
DELIRIUM_ICD_CODES = frozenset(
    {
        "290.11", "290.3", "290.41", "291.0", "291.1", "292.81", "292.89",
        "293.0", "293.1", "308.9", "780.09",
        "F05", "F01.51", "F02.81", "F03.91",
        "F10.221", "F10.231", "F10.921", "F10.96", "F10.121",
        "F11.121", "F11.221", "F11.921",
        "F12.121", "F12.221", "F12.921",
        "F13.121", "F13.221", "F13.231", "F13.921", "F13.931",
        "F14.121", "F14.221", "F14.921",
        "F15.121", "F15.221", "F15.921",
        "F16.121", "F16.221", "F16.921",
        "F18.121", "F18.221", "F18.921",
        "F19.121", "F19.221", "F19.231", "F19.921", "F19.931",
        "R41.0", "F43.0",
    }
)


class ParseError(ValueError):
    """Malformed input file; message carries the 1-based line number."""


class ExclusionReason(str, Enum):
    INVALID_RECORD = "INVALID_RECORD"
    AGE = "AGE"
    LOS = "LOS"
    DISQUALIFYING_DX = "DISQUALIFYING_DX"
    NO_MEASUREMENTS = "NO_MEASUREMENTS"
    EARLY_DELIRIUM = "EARLY_DELIRIUM"
    NOT_INDEX = "NOT_INDEX"


@dataclass(frozen=True)
class CohortSpec:
    delirium_icd_codes: frozenset[str] = DELIRIUM_ICD_CODES
    # no default list is published for the sensory/cognitive disability codes
    disqualifying_icd_codes: frozenset[str] = frozenset()
    min_age: float = 18.0
    min_los_days: float = 1.0
    exclude_delirium_within_hours: float = 24.0

    def __post_init__(self):
        if not self.delirium_icd_codes:
            raise ValueError("delirium_icd_codes must be non-empty")
        if self.min_age <= 0 or self.min_los_days <= 0 or self.exclude_delirium_within_hours <= 0:
            raise ValueError("cohort thresholds must be positive")
        object.__setattr__(self, "delirium_icd_codes", frozenset(c.strip() for c in self.delirium_icd_codes))
        object.__setattr__(
            self, "disqualifying_icd_codes", frozenset(c.strip() for c in self.disqualifying_icd_codes)
        )


# ---------------------------------------------------------------------------
# timestamps and scalar fields


def parse_timestamp(text: str) -> datetime:
    """Parse ISO-8601; aware values are converted to naive UTC."""
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is not None:
        ts = ts.astimezone(timezone.utc).replace(tzinfo=None)
    return ts


def format_timestamp(ts: datetime) -> str:
    return ts.strftime("%Y-%m-%dT%H:%M:%SZ")


def _parse_bool(text: str, column: str) -> bool:
    text = text.strip()
    if text == "1":
        return True
    if text == "0":
        return False
    raise ValueError(f"column {column!r}: expected 0/1, got {text!r}")


def _split_list(text: str) -> list[str]:
    return [part.strip() for part in text.split(";") if part.strip()]


# ---------------------------------------------------------------------------
# admissions


def _record_from_row(row: dict[str, str]) -> AdmissionRecord:
    for col in ADMISSION_COLUMNS:
        value = row.get(col)
        if value is None or (value.strip() == "" and col not in ("icd_codes", "cam_icu_positive_times")):
            raise ValueError(f"missing value for column {col!r}")
    try:
        admission_type = AdmissionType(row["admission_type"].strip())
    except ValueError:
        raise ValueError(f"unknown admission_type {row['admission_type']!r}") from None
    try:
        gender = Gender(row["gender"].strip())
    except ValueError:
        raise ValueError(f"unknown gender {row['gender']!r}") from None
    return AdmissionRecord(
        admission_id=row["admission_id"].strip(),
        patient_id=row["patient_id"].strip(),
        age=float(row["age"]),
        gender=gender,
        admit_time=parse_timestamp(row["admit_time"]),
        discharge_time=parse_timestamp(row["discharge_time"]),
        admission_type=admission_type,
        ventilation=_parse_bool(row["ventilation"], "ventilation"),
        icd_codes=frozenset(_split_list(row["icd_codes"])),
        cam_icu_positive_times=tuple(parse_timestamp(t) for t in _split_list(row["cam_icu_positive_times"])),
        haloperidol_given=_parse_bool(row["haloperidol_given"], "haloperidol_given"),
        died_in_hospital=_parse_bool(row["died_in_hospital"], "died_in_hospital"),
        total_admission_count=int(row["total_admission_count"]),
        admission_rank_order=int(row["admission_rank_order"]),
    )


def parse_admissions(path: str | Path) -> list[AdmissionRecord]:
    """Read admissions.csv into records, one per row."""
    path = Path(path)
    records = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in ADMISSION_COLUMNS if c not in header]
        if missing:
            raise ParseError(f"{path}: line 1: header missing columns {missing}")
        for row in reader:
            try:
                records.append(_record_from_row(row))
            except (ValueError, TypeError) as exc:
                raise ParseError(f"{path}: line {reader.line_num}: {exc}") from None
    return records


def write_admissions(records: list[AdmissionRecord], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ADMISSION_COLUMNS)
        for r in records:
            w.writerow(
                [
                    r.admission_id,
                    r.patient_id,
                    _fmt_number(r.age),
                    r.gender.value,
                    format_timestamp(r.admit_time),
                    format_timestamp(r.discharge_time),
                    r.admission_type.value,
                    int(r.ventilation),
                    ";".join(sorted(r.icd_codes)),
                    ";".join(format_timestamp(t) for t in r.cam_icu_positive_times),
                    int(r.haloperidol_given),
                    int(r.died_in_hospital),
                    r.total_admission_count,
                    r.admission_rank_order,
                ]
            )


def _fmt_number(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


# ---------------------------------------------------------------------------
# measurements


@dataclass
class MeasurementTable:
    """Columnar store of measurements.

    Iterating yields :class:`Measurement` objects; the pipeline itself works on
    the underlying frame (columns admission_id, variable_id, value, abnormal,
    time).
    """

    frame: pd.DataFrame
    dropped_unknown: int = 0

    def __len__(self) -> int:
        return len(self.frame)

    def __iter__(self) -> Iterator[Measurement]:
        times = self.frame["time"] if "time" in self.frame else None
        for i, (aid, var, val, ab) in enumerate(
            zip(self.frame["admission_id"], self.frame["variable_id"], self.frame["value"], self.frame["abnormal"])
        ):
            t = None
            if times is not None and not pd.isna(times.iloc[i]):
                t = times.iloc[i].to_pydatetime()
            yield Measurement(str(aid), str(var), float(val), bool(ab), t)

    @classmethod
    def from_measurements(cls, ms: list[Measurement]) -> MeasurementTable:
        frame = pd.DataFrame(
            {
                "admission_id": [m.admission_id for m in ms],
                "variable_id": [m.variable for m in ms],
                "value": np.array([m.value for m in ms], dtype=float),
                "abnormal": np.array([m.abnormal for m in ms], dtype=bool),
                "time": pd.to_datetime([m.time for m in ms]),
            }
        )
        return cls(frame)

    def admission_ids(self) -> np.ndarray:
        return np.asarray(self.frame["admission_id"], dtype=object).astype(str)

    def counts_by_admission(self) -> dict[str, int]:
        counts = self.frame["admission_id"].value_counts(sort=False)
        return {str(k): int(v) for k, v in counts.items() if v > 0}

    def restrict(self, admission_ids) -> MeasurementTable:
        keep = self.frame["admission_id"].isin(set(admission_ids)).to_numpy()
        frame = self.frame.loc[keep].reset_index(drop=True)
        if isinstance(frame["admission_id"].dtype, pd.CategoricalDtype):
            frame["admission_id"] = frame["admission_id"].cat.remove_unused_categories()
        return MeasurementTable(frame, self.dropped_unknown)


_CHUNK_ROWS = 500_000


def _parse_measurement_chunk(frame: pd.DataFrame, first_line: int, path: Path) -> tuple[pd.DataFrame, int]:
    def fail(bad: np.ndarray, message: str):
        i = int(np.flatnonzero(bad)[0])
        raise ParseError(f"{path}: line {first_line + i}: {message.format(**frame.iloc[i].to_dict())}")

    values = pd.to_numeric(frame["value"].str.strip(), errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(values)
    if bad.any():
        fail(bad, "non-numeric value {value!r}")
    abnormal = frame["abnormal"].str.strip()
    bad = ~abnormal.isin(["0", "1"]).to_numpy()
    if bad.any():
        fail(bad, "column 'abnormal': expected 0/1, got {abnormal!r}")
    admission = frame["admission_id"].str.strip()
    bad = (admission == "").to_numpy()
    if bad.any():
        fail(bad, "missing admission_id")
    times = frame["time"].str.strip()
    parsed = pd.to_datetime(times.where(times != "", None), utc=True, format="ISO8601", errors="coerce")
    bad = (parsed.isna() & (times != "")).to_numpy()
    if bad.any():
        fail(bad, "unparseable time {time!r}")

    variable = frame["variable_id"].str.strip()
    known = variable.isin(BASE_IDS).to_numpy()
    out = pd.DataFrame(
        {
            "admission_id": pd.Categorical(admission.to_numpy()[known]),
            "variable_id": pd.Categorical(variable.to_numpy()[known], categories=list(BASE_IDS)),
            "value": values[known],
            "abnormal": (abnormal.to_numpy() == "1")[known],
            "time": parsed.dt.tz_localize(None).to_numpy()[known],
        }
    )
    return out, int((~known).sum())


def parse_measurements(path: str | Path) -> MeasurementTable:
    """Read measurements.csv; rows naming variables outside the catalog are dropped and counted."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), [])
    missing = [c for c in MEASUREMENT_COLUMNS if c not in header]
    if missing:
        raise ParseError(f"{path}: line 1: header missing columns {missing}")
    reader = pd.read_csv(
        path,
        dtype=str,
        usecols=MEASUREMENT_COLUMNS,
        keep_default_na=False,
        na_values=[],
        chunksize=_CHUNK_ROWS,
    )
    parts = []
    dropped = 0
    line = 2  # header is line 1
    for chunk in reader:
        part, n_dropped = _parse_measurement_chunk(chunk, line, path)
        parts.append(part)
        dropped += n_dropped
        line += len(chunk)
    if dropped:
        log.info("dropped %d measurements with variables outside the catalog", dropped)
    if not parts:
        return MeasurementTable(_empty_measurement_frame(), dropped)
    frame = pd.DataFrame(
        {
            "admission_id": union_categoricals([p["admission_id"] for p in parts]),
            "variable_id": union_categoricals([p["variable_id"] for p in parts]),
            "value": np.concatenate([p["value"].to_numpy() for p in parts]),
            "abnormal": np.concatenate([p["abnormal"].to_numpy() for p in parts]),
            "time": np.concatenate([p["time"].to_numpy() for p in parts]),
        }
    )
    return MeasurementTable(frame, dropped)


def _empty_measurement_frame() -> pd.DataFrame:
    return pd.DataFrame(
        {
            "admission_id": pd.Categorical([]),
            "variable_id": pd.Categorical([], categories=list(BASE_IDS)),
            "value": np.array([], dtype=float),
            "abnormal": np.array([], dtype=bool),
            "time": np.array([], dtype="datetime64[ns]"),
        }
    )


# ---------------------------------------------------------------------------
# labelling and exclusion


def delirium_triggers(r: AdmissionRecord, spec: CohortSpec) -> tuple[str, ...]:
    """Which delirium criteria fire for a record (ICD, CAM-ICU, haloperidol)."""
    fired = []
    if any(code.strip() in spec.delirium_icd_codes for code in r.icd_codes):
        fired.append("icd")
    if r.cam_icu_positive_times:
        fired.append("cam_icu")
    if r.haloperidol_given:
        fired.append("haloperidol")
    return tuple(fired)


def label_delirium(r: AdmissionRecord, spec: CohortSpec) -> bool:
    return bool(delirium_triggers(r, spec))


@dataclass
class Cohort:
    admissions: list[AdmissionRecord]
    measurements: MeasurementTable
    delirium_label: dict[str, bool] = field(default_factory=dict)
    exclusion_log: dict[str, ExclusionReason] = field(default_factory=dict)
    triggers: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def by_id(self) -> dict[str, AdmissionRecord]:
        return {r.admission_id: r for r in self.admissions}

    def cases(self) -> list[AdmissionRecord]:
        return [r for r in self.admissions if self.delirium_label[r.admission_id]]

    def noncases(self) -> list[AdmissionRecord]:
        return [r for r in self.admissions if not self.delirium_label[r.admission_id]]

    def exclusion_counts(self) -> dict[str, int]:
        counts = Counter(reason.value for reason in self.exclusion_log.values())
        return dict(sorted(counts.items()))


def label_cohort(records: list[AdmissionRecord], measurements: MeasurementTable, spec: CohortSpec) -> Cohort:
    seen = set()
    for r in records:
        if r.admission_id in seen:
            raise ValueError(f"duplicate admission_id {r.admission_id!r}")
        seen.add(r.admission_id)
    triggers = {r.admission_id: delirium_triggers(r, spec) for r in records}
    labels = {aid: bool(t) for aid, t in triggers.items()}
    admissions = sorted(records, key=lambda r: r.admission_id)
    return Cohort(admissions, measurements, labels, {}, triggers)


def exclusion_reason(
    r: AdmissionRecord, is_case: bool, n_measurements: int, spec: CohortSpec
) -> ExclusionReason | None:
    """First exclusion rule an admission trips, or None if it stays."""
    if validate_record(r):
        return ExclusionReason.INVALID_RECORD
    if r.age < spec.min_age:
        return ExclusionReason.AGE
    if r.los_days < spec.min_los_days:
        return ExclusionReason.LOS
    if any(code.strip() in spec.disqualifying_icd_codes for code in r.icd_codes):
        return ExclusionReason.DISQUALIFYING_DX
    if n_measurements == 0:
        return ExclusionReason.NO_MEASUREMENTS
    if is_case:
        limit = spec.exclude_delirium_within_hours * 3600.0
        for t in r.cam_icu_positive_times:
            if (t - r.admit_time).total_seconds() < limit:
                return ExclusionReason.EARLY_DELIRIUM
    return None


def apply_exclusions(cohort: Cohort, spec: CohortSpec) -> Cohort:
    counts = cohort.measurements.counts_by_admission()
    kept = []
    log_ = dict(cohort.exclusion_log)
    for r in cohort.admissions:
        reason = exclusion_reason(r, cohort.delirium_label[r.admission_id], counts.get(r.admission_id, 0), spec)
        if reason is None:
            kept.append(r)
        else:
            log_[r.admission_id] = reason
    return Cohort(kept, cohort.measurements, dict(cohort.delirium_label), log_, dict(cohort.triggers))


def select_index_admissions(cohort: Cohort) -> Cohort:
    """Keep one admission per patient.

    Patients with any remaining delirious admission keep their earliest
    delirious one; everyone else keeps their earliest admission. Ties on
    admit_time go to the lower admission_id.
    """
    by_patient: dict[str, list[AdmissionRecord]] = {}
    for r in cohort.admissions:
        by_patient.setdefault(r.patient_id, []).append(r)
    kept = []
    log_ = dict(cohort.exclusion_log)
    for records in by_patient.values():
        delirious = [r for r in records if cohort.delirium_label[r.admission_id]]
        pool = delirious or records
        chosen = min(pool, key=lambda r: (r.admit_time, r.admission_id))
        kept.append(chosen)
        for r in records:
            if r is not chosen:
                log_[r.admission_id] = ExclusionReason.NOT_INDEX
    kept.sort(key=lambda r: r.admission_id)
    return Cohort(kept, cohort.measurements, dict(cohort.delirium_label), log_, dict(cohort.triggers))


def build_cohort(
    admissions_path: str | Path, measurements_path: str | Path, spec: CohortSpec | None = None
) -> Cohort:
    """Parse both files, label, exclude, and reduce to index admissions."""
    return cohort_from_tables(parse_admissions(admissions_path), parse_measurements(measurements_path), spec)


def cohort_from_tables(
    records: list[AdmissionRecord], table: MeasurementTable, spec: CohortSpec | None = None
) -> Cohort:
    spec = spec or CohortSpec()
    cohort = label_cohort(records, table, spec)
    cohort = apply_exclusions(cohort, spec)
    cohort = select_index_admissions(cohort)
    cohort.measurements = table.restrict(r.admission_id for r in cohort.admissions)
    return cohort
