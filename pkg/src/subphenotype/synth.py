"""Synthetic cohorts with planted subgroup structure.

Every admission carries a latent vector over the 51 base variables drawn from
a Gaussian mixture (one component per planted subgroup). Measurements are
noisy readings of that latent vector mapped to physical units, so the whole
ingest -> preprocess -> cluster chain has real work to do. Cases in a
subgroup with a planted signal are shifted on the signal variable by
``effect`` cluster spreads, which for a rare outcome is the same as raising
the log-odds of being a case by ``effect`` per spread.

A small share of extra admissions is generated that the cohort rules must
drop (minors, short stays, early CAM-ICU positives, admissions with no
measurements, and readmissions that are not the index stay).
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from statistics import NormalDist

import numpy as np
import pandas as pd

from .domain import BASE_IDS, VARIABLES, AdmissionRecord, AdmissionType, Gender
from .ingest import (
    ADMISSION_COLUMNS,
    DELIRIUM_ICD_CODES,
    MEASUREMENT_COLUMNS,
    Cohort,
    CohortSpec,
    ExclusionReason,
    MeasurementTable,
    build_cohort,
    cohort_from_tables,
    parse_admissions,
    parse_measurements,
    write_admissions,
)

log = logging.getLogger(__name__)

GROUND_TRUTH_COLUMNS = ["admission_id", "planted_subgroup", "planted_signal_features", "is_case", "expected_exclusion"]
MAX_CV = 0.5
EPOCH = datetime(2130, 1, 1)
_DAY = 86400.0
_OTHER_CODES = ("I10", "E11.9", "J18.9", "N17.9", "I50.9", "K21.9", "E78.5", "J44.1", "A41.9", "N39.0")
_DISTRACTORS = (
    ExclusionReason.AGE,
    ExclusionReason.LOS,
    ExclusionReason.EARLY_DELIRIUM,
    ExclusionReason.NO_MEASUREMENTS,
    ExclusionReason.NOT_INDEX,
)


@dataclass
class SynthSpec:
    n_cases: int = 2000
    n_noncases: int = 20000
    k_planted: int = 4
    mixture_weights: list[float] = field(default_factory=lambda: [0.4, 0.3, 0.2, 0.1])
    separation: float = 6.0  # min pairwise center distance in units of the largest spread
    cluster_spreads: list[float] | None = None
    cluster_centers: list[list[float]] | None = None  # k x 51 latent offsets; sampled when omitted
    delirium_signal: dict[int, list] = field(default_factory=lambda: {1: ["lactate", 1.5]})
    missing_rate: float = 0.05
    abnormal_threshold: float = 1.5
    measurement_noise: float = 0.25
    extra_measurement_rate: float = 0.4
    distractor_rate: float = 0.03
    demographic_signal: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.delirium_signal = {int(s): [str(f), float(e)] for s, (f, e) in dict(self.delirium_signal).items()}
        self.mixture_weights = [float(w) for w in self.mixture_weights]
        if self.cluster_spreads is None:
            self.cluster_spreads = [1.0] * self.k_planted
        self.cluster_spreads = [float(s) for s in self.cluster_spreads]

    def validate(self) -> list[str]:
        errors = []
        if self.k_planted < 2:
            errors.append("k_planted must be >= 2")
        if len(self.mixture_weights) != self.k_planted:
            errors.append("mixture_weights must have k_planted entries")
        w = np.asarray(self.mixture_weights, dtype=float)
        if (w < 0).any() or abs(w.sum() - 1.0) > 1e-9:
            errors.append("mixture_weights must be non-negative and sum to 1")
        if len(self.cluster_spreads) != self.k_planted or min(self.cluster_spreads, default=0) <= 0:
            errors.append("cluster_spreads must be k_planted positive values")
        if self.cluster_centers is not None and np.shape(self.cluster_centers) != (self.k_planted, len(BASE_IDS)):
            errors.append(f"cluster_centers must be {self.k_planted} x {len(BASE_IDS)}")
        if not 0.0 <= self.missing_rate < 1.0:
            errors.append("missing_rate must lie in [0, 1)")
        if not 0.0 <= self.distractor_rate < 1.0:
            errors.append("distractor_rate must lie in [0, 1)")
        if self.separation < 0:
            errors.append("separation must be >= 0")
        if self.n_cases < self.k_planted or self.n_noncases < 0:
            errors.append("need at least one case per planted subgroup")
        for s, (feature, effect) in self.delirium_signal.items():
            if not 0 <= s < self.k_planted:
                errors.append(f"signal subgroup {s} out of range")
            if feature not in BASE_IDS:
                errors.append(f"signal feature {feature!r} is not a base variable")
            if not np.isfinite(effect):
                errors.append("signal effect must be finite")
        if self.measurement_noise < 0 or self.extra_measurement_rate < 0:
            errors.append("noise and extra measurement rate must be non-negative")
        return errors

    def check(self) -> "SynthSpec":
        errors = self.validate()
        if errors:
            raise ValueError("invalid synth spec: " + "; ".join(errors))
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["delirium_signal"] = {str(k): v for k, v in self.delirium_signal.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synth spec keys {sorted(unknown)}")
        return cls(**d)


PRESETS = {
    "desk": dict(n_cases=2000, n_noncases=20000),
    "paper-scale": dict(
        n_cases=10066,
        n_noncases=114324,
        mixture_weights=[0.5441, 0.0259, 0.2961, 0.1339],
        extra_measurement_rate=0.2,
        delirium_signal={2: ["lactate", 1.5]},
    ),
    "structureless": dict(n_cases=2000, n_noncases=2000, separation=0.0, delirium_signal={}),
}


def preset(name: str, **overrides) -> SynthSpec:
    try:
        base = dict(PRESETS[name])
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    base.update(overrides)
    return SynthSpec(**base).check()


# ---------------------------------------------------------------------------
# latent structure


def planted_centers(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Random directions rescaled so the closest pair sits ``separation * max spread`` apart."""
    d = len(BASE_IDS)
    if spec.cluster_centers is not None:
        return np.asarray(spec.cluster_centers, dtype=float)
    C = rng.normal(size=(spec.k_planted, d))
    C -= C.mean(axis=0)
    gaps = [np.linalg.norm(C[i] - C[j]) for i in range(len(C)) for j in range(i + 1, len(C))]
    target = spec.separation * max(spec.cluster_spreads)
    return C * (target / min(gaps))


def allocate(total: int, weights) -> np.ndarray:
    """Largest-remainder integer split of ``total`` by ``weights``."""
    w = np.asarray(weights, dtype=float)
    raw = total * w / w.sum()
    out = np.floor(raw).astype(np.int64)
    short = total - int(out.sum())
    order = np.lexsort((np.arange(w.size), -(raw - out)))
    out[order[:short]] += 1
    return out


_MEANS = np.array([v.normal_mean for v in VARIABLES])
_SDS = np.array([v.normal_sd for v in VARIABLES])
_LOGNORMAL = _MEANS > 0
_CV = np.where(_LOGNORMAL, np.minimum(_SDS / np.where(_LOGNORMAL, _MEANS, 1.0), MAX_CV), 0.0)


def to_physical(z: np.ndarray, cols: np.ndarray | None = None) -> np.ndarray:
    """Map latent units to physical units per variable column."""
    cols = np.arange(len(BASE_IDS)) if cols is None else cols
    m, sd, cv, ln = _MEANS[cols], _SDS[cols], _CV[cols], _LOGNORMAL[cols]
    return np.where(ln, m * np.exp(z * cv), m + z * sd)


def to_latent(x: np.ndarray, cols: np.ndarray | None = None) -> np.ndarray:
    cols = np.arange(len(BASE_IDS)) if cols is None else cols
    m, sd, cv, ln = _MEANS[cols], _SDS[cols], _CV[cols], _LOGNORMAL[cols]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(ln, np.log(x / np.where(ln, m, 1.0)) / np.where(ln, cv, 1.0), (x - m) / sd)


def is_abnormal(values: np.ndarray, cols: np.ndarray, threshold: float) -> np.ndarray:
    return np.abs(values - _MEANS[cols]) > threshold * _SDS[cols]


# ---------------------------------------------------------------------------
# cohort plan


@dataclass
class SyntheticCohort:
    spec: SynthSpec
    centers: np.ndarray
    admissions: list[AdmissionRecord]
    truth: pd.DataFrame  # one row per admission, ordered like ``admissions``
    latent: np.ndarray  # admissions x 51
    observed: np.ndarray  # admissions x 51 boolean, cells with at least one measurement


def _ids(prefix: str, n: int) -> list[str]:
    width = max(7, len(str(n)))
    return [f"{prefix}{i:0{width}d}" for i in range(1, n + 1)]


def simulate(spec: SynthSpec) -> SyntheticCohort:
    """Draw the admission plan and latent vectors (no measurements yet)."""
    spec.check()
    root = np.random.SeedSequence(spec.seed)
    r_centers, r_people, r_latent, r_demo, r_extra, r_missing = (np.random.default_rng(s) for s in root.spawn(6))
    k = spec.k_planted
    centers = planted_centers(spec, r_centers)
    spreads = np.asarray(spec.cluster_spreads)

    # index admissions: exact subgroup counts for cases and non-cases
    case_counts = allocate(spec.n_cases, spec.mixture_weights)
    non_counts = allocate(spec.n_noncases, spec.mixture_weights)
    subgroup = np.concatenate([np.repeat(np.arange(k), case_counts), np.repeat(np.arange(k), non_counts)])
    is_case = np.concatenate([np.ones(spec.n_cases, bool), np.zeros(spec.n_noncases, bool)])
    n_index = subgroup.size
    n_extra = int(round(spec.distractor_rate * n_index))
    extra_reason = np.array([_DISTRACTORS[i % len(_DISTRACTORS)] for i in range(n_extra)], dtype=object)
    extra_case = r_extra.random(n_extra) < spec.n_cases / max(n_index, 1)
    extra_case[[r is ExclusionReason.EARLY_DELIRIUM for r in extra_reason]] = True
    extra_case[[r is ExclusionReason.NOT_INDEX for r in extra_reason]] = False
    extra_group = r_extra.choice(k, size=n_extra, p=np.asarray(spec.mixture_weights))

    subgroup = np.concatenate([subgroup, extra_group])
    is_case = np.concatenate([is_case, extra_case])
    reason = np.concatenate([np.full(n_index, None, dtype=object), extra_reason])
    n = subgroup.size
    readmit = np.array([r is ExclusionReason.NOT_INDEX for r in reason], dtype=bool)

    # readmissions belong to an index patient of the same subgroup
    order = r_people.permutation(n)  # position -> plan row, so ids do not reveal subgroups
    adm_ids = np.empty(n, dtype=object)
    adm_ids[order] = _ids("A", n)
    patient_of = np.empty(n, dtype=object)
    n_patients = n - int(readmit.sum())
    pat_ids = _ids("P", n_patients)
    owner = np.full(n, -1, dtype=np.int64)
    next_patient = 0
    for row in order:
        if reason[row] is ExclusionReason.NOT_INDEX:
            continue
        patient_of[row] = pat_ids[next_patient]
        next_patient += 1
    for row in np.flatnonzero(readmit):
        pool = np.flatnonzero((subgroup[:n_index] == subgroup[row]))
        host = int(r_people.choice(pool))
        while owner[host] >= 0:
            host = int(r_people.choice(pool))
        owner[host] = row
        patient_of[row] = patient_of[host]

    # latent vectors
    z = centers[subgroup] + spreads[subgroup, None] * r_latent.normal(size=(n, len(BASE_IDS)))
    signal_name = np.full(n, "", dtype=object)
    for s, (feature, effect) in spec.delirium_signal.items():
        j = BASE_IDS.index(feature)
        in_group = subgroup == s
        signal_name[in_group] = feature
        z[in_group & is_case, j] += effect * spreads[s]

    observed = r_missing.random(z.shape) >= spec.missing_rate
    none_seen = ~observed.any(axis=1)
    observed[none_seen, r_missing.integers(0, z.shape[1], int(none_seen.sum()))] = True
    observed[[r is ExclusionReason.NO_MEASUREMENTS for r in reason]] = False

    admissions = _demographics(spec, r_demo, adm_ids, patient_of, subgroup, is_case, reason, owner)
    truth = pd.DataFrame(
        {
            "admission_id": adm_ids,
            "planted_subgroup": subgroup,
            "planted_signal_features": signal_name,
            "is_case": is_case.astype(int),
            "expected_exclusion": [r.value if r is not None else "" for r in reason],
        }
    )
    return SyntheticCohort(spec, centers, admissions, truth, z, observed)


def _demographics(spec, rng, adm_ids, patient_of, subgroup, is_case, reason, owner) -> list[AdmissionRecord]:
    n = subgroup.size
    k = spec.k_planted
    shift = spec.demographic_signal
    group_age = np.linspace(-1.0, 1.0, k) * 4.0 * (1.0 + shift)
    group_vent = np.linspace(0.2, 0.45, k)
    age = np.clip(rng.normal(64.0 + group_age[subgroup] + shift * 3.0 * is_case, 15.0), 18.0, 99.0).round(1)
    gender = rng.random(n) < 0.55
    los = 1.0 + np.exp(rng.normal(1.0 + 0.1 * subgroup + 0.2 * is_case, 0.6))
    start = rng.uniform(0, 3650, n)
    vent = rng.random(n) < group_vent[subgroup]
    died = rng.random(n) < np.where(is_case, 0.15, 0.08) + 0.02 * subgroup
    adm_type = rng.choice(4, size=n, p=[0.62, 0.1, 0.16, 0.12])
    halo = rng.random(n) < 0.3
    use_icd = rng.random(n) < 0.55
    use_cam = rng.random(n) < 0.5
    cam_frac = rng.uniform(0.05, 0.95, n)
    code_pick = rng.integers(0, 1 << 30, size=(n, 3))
    delirium_codes = sorted(DELIRIUM_ICD_CODES)
    types = list(AdmissionType)

    total = np.ones(n, dtype=np.int64)
    rank = np.ones(n, dtype=np.int64)
    for host in np.flatnonzero(owner >= 0):
        extra = owner[host]
        total[host] = total[extra] = 2
        rank[extra] = 2

    records = []
    for i in range(n):
        r = reason[i]
        a = float(age[i])
        stay = float(los[i])
        if r is ExclusionReason.AGE:
            a = float(rng.integers(14, 18))
        elif r is ExclusionReason.LOS:
            stay = float(rng.uniform(0.2, 0.9))
        admit = EPOCH + timedelta(seconds=int(start[i] * _DAY))
        if r is ExclusionReason.NOT_INDEX:
            host = int(np.flatnonzero(owner == i)[0])
            host_start = start[host]
            admit = EPOCH + timedelta(seconds=int((host_start + los[host] + 30.0 + 60.0 * cam_frac[i]) * _DAY))
        discharge = admit + timedelta(seconds=int(stay * _DAY))
        codes = {_OTHER_CODES[code_pick[i, 0] % len(_OTHER_CODES)], _OTHER_CODES[code_pick[i, 1] % len(_OTHER_CODES)]}
        cam: tuple[datetime, ...] = ()
        haloperidol = False
        if is_case[i]:
            if r is ExclusionReason.EARLY_DELIRIUM:
                cam = (admit + timedelta(hours=float(rng.uniform(1.0, 20.0))),)
            else:
                icd, c, h = bool(use_icd[i]), bool(use_cam[i]), bool(halo[i])
                if not (icd or c or h):
                    icd = True
                if icd:
                    codes.add(delirium_codes[code_pick[i, 2] % len(delirium_codes)])
                if c:
                    offset = 24.0 * 3600.0 + cam_frac[i] * (stay * _DAY - 24.0 * 3600.0)
                    cam = (admit + timedelta(seconds=int(offset)),)
                haloperidol = h
        records.append(
            AdmissionRecord(
                admission_id=adm_ids[i],
                patient_id=patient_of[i],
                age=a,
                gender=Gender.M if gender[i] else Gender.F,
                admit_time=admit,
                discharge_time=discharge,
                admission_type=types[int(adm_type[i])],
                ventilation=bool(vent[i]),
                icd_codes=frozenset(codes),
                cam_icu_positive_times=cam,
                haloperidol_given=haloperidol,
                died_in_hospital=bool(died[i]),
                total_admission_count=int(total[i]),
                admission_rank_order=int(rank[i]),
            )
        )
    return records


# ---------------------------------------------------------------------------
# measurement emission


def _measurement_chunk(sim: SyntheticCohort, rows: np.ndarray, rng: np.random.Generator) -> pd.DataFrame:
    spec = sim.spec
    obs = sim.observed[rows]
    r_idx, c_idx = np.nonzero(obs)
    reps = 1 + rng.poisson(spec.extra_measurement_rate, size=r_idx.size)
    r_all = np.repeat(r_idx, reps)
    c_all = np.repeat(c_idx, reps)
    z = sim.latent[rows[r_all], c_all] + spec.measurement_noise * rng.normal(size=r_all.size)
    values = to_physical(z, c_all)
    abnormal = is_abnormal(values, c_all, spec.abnormal_threshold)
    admit = np.array([sim.admissions[i].admit_time for i in rows], dtype="datetime64[s]")
    discharge = np.array([sim.admissions[i].discharge_time for i in rows], dtype="datetime64[s]")
    span = (discharge - admit).astype(np.int64)
    offset = (rng.random(r_all.size) * span[r_all]).astype(np.int64)
    times = admit[r_all] + offset.astype("timedelta64[s]")
    ids = np.array([sim.admissions[i].admission_id for i in rows], dtype=object)
    frame = pd.DataFrame(
        {
            "admission_id": ids[r_all],
            "variable_id": np.asarray(BASE_IDS, dtype=object)[c_all],
            "value": values,
            "abnormal": abnormal.astype(np.int8),
            "time": np.char.add(np.datetime_as_string(times, unit="s"), "Z"),
        }
    )
    return frame.sort_values(["admission_id", "time", "variable_id"], kind="stable")


def generate_cohort(spec: SynthSpec, out_dir: str | Path, chunk_rows: int = 20000) -> dict[str, Path]:
    """Write admissions.csv, measurements.csv and ground_truth.csv into ``out_dir``."""
    sim = simulate(spec)
    return write_cohort(sim, out_dir, chunk_rows)


def write_cohort(sim: SyntheticCohort, out_dir: str | Path, chunk_rows: int = 20000) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / f"{name}.csv" for name in ("admissions", "measurements", "ground_truth")}
    order = _admission_order(sim)
    write_admissions([sim.admissions[i] for i in order], paths["admissions"])
    sim.truth.iloc[order].to_csv(paths["ground_truth"], index=False, lineterminator="\n")

    with paths["measurements"].open("w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(MEASUREMENT_COLUMNS) + "\n")
        for chunk in _measurement_chunks(sim, order, chunk_rows):
            chunk.to_csv(fh, header=False, index=False, float_format="%.8g", lineterminator="\n")
    return paths


def _admission_order(sim: SyntheticCohort) -> np.ndarray:
    return np.argsort(np.array([r.admission_id for r in sim.admissions], dtype=object), kind="stable")


def _measurement_chunks(sim: SyntheticCohort, order: np.ndarray, chunk_rows: int):
    seeds = np.random.SeedSequence([sim.spec.seed, 1]).spawn((order.size + chunk_rows - 1) // chunk_rows or 1)
    for c, start in enumerate(range(0, order.size, chunk_rows)):
        yield _measurement_chunk(sim, order[start : start + chunk_rows], np.random.default_rng(seeds[c]))


def measurement_table(sim: SyntheticCohort, chunk_rows: int = 20000) -> MeasurementTable:
    """The measurements ``write_cohort`` would write, as a table, without touching disk."""
    parts = list(_measurement_chunks(sim, _admission_order(sim), chunk_rows))
    frame = pd.concat(parts, ignore_index=True)
    # same 8 significant digits as the CSV so both routes see identical values
    values = np.char.mod("%.8g", frame["value"].to_numpy()).astype(float)
    return MeasurementTable(
        pd.DataFrame(
            {
                "admission_id": pd.Categorical(frame["admission_id"].to_numpy()),
                "variable_id": pd.Categorical(frame["variable_id"].to_numpy(), categories=list(BASE_IDS)),
                "value": values,
                "abnormal": frame["abnormal"].to_numpy() == 1,
                "time": pd.to_datetime(frame["time"].str[:-1]).to_numpy(),
            }
        )
    )


def to_cohort(sim: SyntheticCohort, spec: CohortSpec | None = None) -> Cohort:
    """Cohort built straight from a simulation; equals ingesting the written files."""
    return cohort_from_tables(list(sim.admissions), measurement_table(sim), spec)


# ---------------------------------------------------------------------------
# self check


@dataclass
class CheckReport:
    passed: bool
    failures: list[str]
    stats: dict[str, float]

    def summary(self) -> str:
        head = "self-check passed" if self.passed else f"self-check FAILED ({len(self.failures)} issues)"
        return "\n".join([head] + [f"  - {f}" for f in self.failures])


def _family_z(m: int, single: float = 3.0) -> float:
    # per-test critical value that keeps the family-wise false-alarm rate of one `single`-sigma test
    alpha = 2.0 * (1.0 - NormalDist().cdf(single))
    return NormalDist().inv_cdf(1.0 - (1.0 - (1.0 - alpha) ** (1.0 / m)) / 2.0)


def self_check(spec: SynthSpec, files: dict[str, Path] | str | Path) -> CheckReport:
    """Re-read generated files and compare their statistics with the spec."""
    errors = spec.validate()
    if errors:
        return CheckReport(False, errors, {})
    if not isinstance(files, dict):
        base = Path(files)
        files = {name: base / f"{name}.csv" for name in ("admissions", "measurements", "ground_truth")}
    failures: list[str] = []
    stats: dict[str, float] = {}
    for name, cols in (("admissions", ADMISSION_COLUMNS), ("measurements", MEASUREMENT_COLUMNS),
                       ("ground_truth", GROUND_TRUTH_COLUMNS)):
        path = Path(files[name])
        if not path.exists():
            failures.append(f"{name}: file missing")
            continue
        with path.open(newline="", encoding="utf-8") as fh:
            header = next(csv.reader(fh), [])
        missing = [c for c in cols if c not in header]
        if missing:
            failures.append(f"{name}: schema check failed, missing columns {missing}")
    if failures:
        return CheckReport(False, failures, stats)

    try:
        parse_admissions(files["admissions"])
        table = parse_measurements(files["measurements"])
        cohort = build_cohort(files["admissions"], files["measurements"])
    except ValueError as exc:
        return CheckReport(False, [f"parse failure: {exc}"], stats)
    truth = pd.read_csv(files["ground_truth"], dtype={"admission_id": str, "planted_signal_features": str},
                        keep_default_na=False)
    truth = truth.set_index("admission_id")
    kept = [r.admission_id for r in cohort.admissions]
    n_cases = sum(cohort.delirium_label[a] for a in kept)
    stats["n_cases"] = n_cases
    stats["n_noncases"] = len(kept) - n_cases
    if n_cases != spec.n_cases or len(kept) - n_cases != spec.n_noncases:
        failures.append(f"cohort size: {n_cases} cases / {len(kept) - n_cases} non-cases after exclusions, "
                        f"expected {spec.n_cases} / {spec.n_noncases}")
    unexpected = [a for a in kept if truth.at[a, "expected_exclusion"] != ""]
    if unexpected:
        failures.append(f"{len(unexpected)} planted exclusions survived the cohort rules")

    groups = truth.loc[kept, "planted_subgroup"].to_numpy()
    weights = np.bincount(groups, minlength=spec.k_planted) / len(kept)
    for c, (got, want) in enumerate(zip(weights, spec.mixture_weights)):
        stats[f"weight_{c}"] = float(got)
        if abs(got - want) > 0.02:
            failures.append(f"mixture weight {c}: {got:.4f} vs {want:.4f}")

    frame = table.restrict(kept).frame
    n_cells = len(kept) * len(BASE_IDS)
    seen = frame[["admission_id", "variable_id"]].drop_duplicates()
    missing_rate = 1.0 - len(seen) / n_cells
    stats["missing_rate"] = missing_rate
    if abs(missing_rate - spec.missing_rate) > 0.01:
        failures.append(f"missingness {missing_rate:.4f} vs {spec.missing_rate:.4f}")

    # per-subgroup latent means from the first reading of each cell
    sim_centers = planted_centers(spec, np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(6)[0]))
    first = frame.drop_duplicates(["admission_id", "variable_id"], keep="first")
    col = pd.Series(range(len(BASE_IDS)), index=BASE_IDS)
    cols = first["variable_id"].astype(str).map(col).to_numpy()
    ids = first["admission_id"].astype(str).to_numpy()
    g = truth.loc[ids, "planted_subgroup"].to_numpy()
    case = truth.loc[ids, "is_case"].to_numpy().astype(bool)
    shifted = np.zeros(ids.size, dtype=bool)
    for s, (feature, _) in spec.delirium_signal.items():
        shifted |= (g == s) & case & (cols == BASE_IDS.index(feature))
    z = to_latent(first["value"].to_numpy(dtype=float), cols)
    keep = ~shifted
    m = spec.k_planted * len(BASE_IDS)
    crit = _family_z(m)
    worst = 0.0
    for c in range(spec.k_planted):
        sd = float(np.hypot(spec.cluster_spreads[c], spec.measurement_noise))
        sel = keep & (g == c)
        sums = np.bincount(cols[sel], weights=z[sel], minlength=len(BASE_IDS))
        counts = np.bincount(cols[sel], minlength=len(BASE_IDS))
        for j in np.flatnonzero(counts):
            dev = abs(sums[j] / counts[j] - sim_centers[c, j]) / (sd / np.sqrt(counts[j]))
            worst = max(worst, dev)
            if dev > crit:
                failures.append(f"subgroup {c} {BASE_IDS[j]} mean off by {dev:.2f} standard errors")
    stats["max_center_deviation_se"] = worst
    return CheckReport(not failures, failures, stats)


def save_spec(spec: SynthSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")


def load_spec(path: str | Path) -> SynthSpec:
    return SynthSpec.from_dict(json.loads(Path(path).read_text()))
