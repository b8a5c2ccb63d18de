"""Core record types and the fixed physiological feature catalog.

Every downstream stage joins on the snake-case ids defined here. Display
names and units follow the published variable table; the normal means are
the imputation defaults used when no normal measurements are available.
"""
from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class VariableId:
    id: str
    display_name: str
    unit: str
    normal_mean: float
    # population SD from the same table; used by the synthetic generator
    normal_sd: float


@dataclass(frozen=True)
class RatioId:
    id: str
    display_name: str
    numerator: str
    denominator: str


# (id, display name, unit, mean, sd)
_CATALOG_ROWS = [
    ("weight", "Weight", "kg", 80.87, 23.31),
    ("heart_rate", "Heart Rate", "bpm", 88.41, 19.98),
    ("bp_systolic", "Blood Pressure, Systolic", "mmHg", 125.43, 24.77),
    ("bp_diastolic", "Blood Pressure, Diastolic", "mmHg", 69.17, 17.93),
    ("bp_mean", "Blood Pressure, Mean", "mmHg", 83.13, 20.38),
    ("temperature", "Temperature", "Celsius", 36.84, 1.31),
    ("albumin", "Blood Albumin", "g/dL", 4.08, 0.39),
    ("alkaline_phosphatase", "Alkaline Phosphatase", "IU/L", 77.01, 20.16),
    ("alt", "Alanine Transaminase (ALT)", "IU/L", 20.63, 41.99),
    ("ast", "Aspartate Aminotransferase (AST)", "IU/L", 24.35, 36.65),
    ("anion_gap", "Anion Gap", "mEq/L", 14.78, 2.62),
    ("base_excess", "Base Excess", "mEq/L", -1.07, 6.6),
    ("bicarbonate", "Bicarbonate", "mEq/L", 25.66, 2.5),
    ("bun", "Blood Urea Nitrogen (BUN)", "mg/dL", 13.77, 3.88),
    ("calcium", "Calcium", "mg/dL", 9.09, 0.89),
    ("chloride", "Chloride", "mEq/L", 102.33, 3.23),
    ("creatine_kinase", "Creatine Kinase/Phosphokinase", "IU/L", 104.46, 163.38),
    ("creatinine", "Creatinine", "mg/dL", 0.85, 0.19),
    ("fio2", "Fraction Of Inspired O2 (FiO2)", "%", 74.36, 26.83),
    ("glucose", "Glucose", "mg/dL", 113.44, 53.1),
    ("hematocrit", "Hematocrit", "%", 40.42, 4.29),
    ("hemoglobin", "Hemoglobin", "g/dL", 13.74, 1.35),
    ("inr", "International Normalized Ratio", "-", 1.04, 0.24),
    ("lactate", "Lactate", "mmol/L", 1.4, 0.37),
    ("ldh", "Lactate Dehydrogenase", "IU/L", 193.01, 61.26),
    ("magnesium", "Magnesium", "mg/dL", 2.01, 0.23),
    ("mch", "Mean Corpuscular Hemoglobin", "pg", 29.72, 1.4),
    ("mchc", "Mean Corpuscular Hemoglobin Concentration", "g/dL", 33.31, 1.01),
    ("mcv", "Mean Corpuscular Volume", "fL", 89.9, 4.18),
    ("basophils", "Basophils", "K/uL", 0.17, 0.24),
    ("eosinophils", "Eosinophils", "K/uL", 0.14, 0.16),
    ("lymphocytes", "Lymphocytes", "K/uL", 2.0, 0.76),
    ("monocytes", "Monocytes", "K/uL", 0.54, 0.34),
    ("neutrophils", "Neutrophils", "K/uL", 4.59, 2.66),
    ("pao2", "Partial Pressure Of O2 (PaO2)", "mmHg", 95.09, 9.61),
    ("paco2", "Partial Pressure Of CO2", "mmHg", 40.07, 14.71),
    ("peep", "Positive End-Expiratory Pressure", "-", 5.88, 5.3),
    ("ph", "PH", "-", 7.4, 0.08),
    ("platelets", "Platelets", "K/uL", 250.48, 66.37),
    ("potassium", "Potassium", "mEq/L", 4.16, 0.45),
    ("pt", "Prothrombin Time", "sec", 11.72, 1.38),
    ("ptt", "Partial Prothrombin Time", "sec", 29.15, 3.85),
    ("rbc", "Red Blood Cells (RBC)", "m/uL", 4.7, 0.41),
    ("rdw", "Red Cell Distribution Width", "%", 13.63, 0.92),
    ("so2", "Saturated O2 (SO2)", "%", 93.93, 11.46),
    ("sodium", "Sodium", "mEq/L", 138.92, 2.93),
    ("total_bilirubin", "Total Bilirubin", "mg/dL", 0.55, 0.33),
    ("total_co2", "Total CO2", "mEq/L", 25.35, 2.67),
    ("troponin", "Troponin", "ng/mL", 0.01, 0.5),
    ("urea_nitrogen", "Urea Nitrogen", "mg/dL", 13.54, 3.76),
    ("wbc", "White Blood Cells", "K/uL", 7.56, 1.8),
]

_RATIO_ROWS = [
    ("ast_alt", "AST:ALT", "ast", "alt"),
    ("bun_creatinine", "BUN:Creatinine", "bun", "creatinine"),
    ("fio2_pao2", "FiO2:PaO2", "fio2", "pao2"),
    ("so2_fio2", "SO2:FiO2", "so2", "fio2"),
    ("neutrophils_lymphocytes", "Neutrophils:Lymphocytes", "neutrophils", "lymphocytes"),
    ("platelets_rbc", "Platelets:RBC", "platelets", "rbc"),
]

VARIABLES: tuple[VariableId, ...] = tuple(VariableId(*row) for row in _CATALOG_ROWS)
RATIOS: tuple[RatioId, ...] = tuple(RatioId(*row) for row in _RATIO_ROWS)

BASE_IDS: tuple[str, ...] = tuple(v.id for v in VARIABLES)
RATIO_IDS: tuple[str, ...] = tuple(r.id for r in RATIOS)
PHYSIOLOGICAL_IDS: tuple[str, ...] = BASE_IDS + RATIO_IDS
DEMOGRAPHIC_IDS: tuple[str, ...] = (
    "age",
    "gender",
    "ventilation",
    "total_admission_count",
    "admission_rank_order",
)
PREDICTOR_IDS: tuple[str, ...] = PHYSIOLOGICAL_IDS + DEMOGRAPHIC_IDS

_BY_ID = {v.id: v for v in VARIABLES}
_RATIO_BY_ID = {r.id: r for r in RATIOS}
_DEMOGRAPHIC_NAMES = {
    "age": "Age",
    "gender": "Gender (male)",
    "ventilation": "Ventilation",
    "total_admission_count": "Patients' Total Admissions",
    "admission_rank_order": "Admission Rank Order",
}


def feature_catalog() -> tuple[tuple[VariableId, ...], tuple[RatioId, ...]]:
    """Return the 51 base variables and the 6 derived ratios."""
    return VARIABLES, RATIOS


def lookup(variable_id: str) -> VariableId | None:
    return _BY_ID.get(variable_id)


def display_name(feature_id: str) -> str:
    if feature_id in _BY_ID:
        return _BY_ID[feature_id].display_name
    if feature_id in _RATIO_BY_ID:
        return _RATIO_BY_ID[feature_id].display_name
    if feature_id in _DEMOGRAPHIC_NAMES:
        return _DEMOGRAPHIC_NAMES[feature_id]
    raise KeyError(feature_id)


def catalog_csv() -> str:
    """Serialize the catalog as CSV text (id, display_name, unit, normal_mean)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "display_name", "unit", "normal_mean"])
    for v in VARIABLES:
        w.writerow([v.id, v.display_name, v.unit, repr(v.normal_mean)])
    return buf.getvalue()


def catalog_digest() -> str:
    return hashlib.sha256(catalog_csv().encode("utf-8")).hexdigest()


class Gender(str, Enum):
    M = "M"
    F = "F"


class AdmissionType(str, Enum):
    EMER = "EMER"
    OBSERVATION = "OBSERVATION"
    SURGICAL = "SURGICAL"
    ELECTIVE = "ELECTIVE"


@dataclass
class AdmissionRecord:
    admission_id: str
    patient_id: str
    age: float
    gender: Gender
    admit_time: datetime
    discharge_time: datetime
    admission_type: AdmissionType
    ventilation: bool
    icd_codes: frozenset[str]
    cam_icu_positive_times: tuple[datetime, ...]
    haloperidol_given: bool
    died_in_hospital: bool
    total_admission_count: int
    admission_rank_order: int

    @property
    def los_days(self) -> float:
        return (self.discharge_time - self.admit_time).total_seconds() / 86400.0


@dataclass(frozen=True)
class Measurement:
    admission_id: str
    variable: str
    value: float
    abnormal: bool
    time: datetime | None = None


def validate_record(r: AdmissionRecord) -> list[str]:
    """List the invariant violations of a record; empty when well-formed."""
    problems = []
    if r.discharge_time < r.admit_time:
        problems.append("negative LOS: discharge_time precedes admit_time")
    if r.total_admission_count < 1:
        problems.append("total_admission_count must be >= 1")
    if r.admission_rank_order < 1:
        problems.append("admission_rank_order must be >= 1")
    if r.admission_rank_order > r.total_admission_count:
        problems.append(
            f"admission_rank_order {r.admission_rank_order} exceeds "
            f"total_admission_count {r.total_admission_count}"
        )
    if not math.isfinite(r.age) or r.age < 0:
        problems.append(f"invalid age {r.age!r}")
    return problems


def validate_measurement(m: Measurement) -> list[str]:
    problems = []
    if not math.isfinite(m.value):
        problems.append("non-finite value")
    if m.variable not in _BY_ID:
        problems.append(f"unknown variable {m.variable!r}")
    return problems


@dataclass
class ScalerState:
    """Per-column (mean, population std) used for z-scoring."""

    column_ids: list[str]
    mean: np.ndarray
    std: np.ndarray


@dataclass
class FeatureMatrix:
    row_ids: list[str]
    column_ids: list[str]
    values: np.ndarray
    missing_mask: np.ndarray = field(default=None)  # type: ignore[assignment]
    scaler: ScalerState | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("values must be 2-D")
        if self.values.shape != (len(self.row_ids), len(self.column_ids)):
            raise ValueError(
                f"shape {self.values.shape} does not match "
                f"{len(self.row_ids)} rows x {len(self.column_ids)} columns"
            )
        if self.missing_mask is None:
            self.missing_mask = np.isnan(self.values)
        else:
            self.missing_mask = np.asarray(self.missing_mask, dtype=bool)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def column(self, column_id: str) -> np.ndarray:
        return self.values[:, self.column_ids.index(column_id)]

    def select_rows(self, index: Sequence[int] | np.ndarray) -> FeatureMatrix:
        index = np.asarray(index, dtype=int)
        return FeatureMatrix(
            [self.row_ids[i] for i in index],
            list(self.column_ids),
            self.values[index].copy(),
            self.missing_mask[index].copy(),
            self.scaler,
        )

    def select_columns(self, column_ids: Iterable[str]) -> FeatureMatrix:
        column_ids = list(column_ids)
        idx = [self.column_ids.index(c) for c in column_ids]
        return FeatureMatrix(
            list(self.row_ids),
            column_ids,
            self.values[:, idx].copy(),
            self.missing_mask[:, idx].copy(),
            None,
        )


class ClusterMethod(str, Enum):
    KMEANS = "kmeans"
    HIERARCHICAL = "hierarchical"


class Metric(str, Enum):
    EUCLIDEAN = "euclidean"
    COSINE = "cosine"


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    k: int
    method: ClusterMethod
    metric: Metric
    objective: float

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int)
        self.method = ClusterMethod(self.method)
        self.metric = Metric(self.metric)
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.k):
            raise ValueError("labels out of range [0, k)")
        counts = np.bincount(self.labels, minlength=self.k)
        if self.labels.size and (counts == 0).any():
            raise ValueError(f"empty clusters: {np.flatnonzero(counts == 0).tolist()}")

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)
