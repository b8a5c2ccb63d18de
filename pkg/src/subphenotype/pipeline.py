"""End-to-end run: cohort -> features -> subgroups -> validation -> expansion -> models -> bundle."""
from __future__ import annotations

import csv
import json
import logging
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .cluster import hierarchical, kmeans, select_k
from .config import RunConfig
from .domain import (
    DEMOGRAPHIC_IDS,
    PHYSIOLOGICAL_IDS,
    PREDICTOR_IDS,
    AdmissionRecord,
    AdmissionType,
    ClusterAssignment,
    ClusterMethod,
    FeatureMatrix,
    Gender,
    Metric,
    display_name,
)
from .embed import TsneConfig, TsneResult, tsne
from .ingest import Cohort, CohortSpec, build_cohort
from .learn import (
    GbdtModel,
    ImportanceRanking,
    accuracy,
    auroc,
    ensemble_rank,
    f_score,
    macro_f_score,
    predict,
    train_forest,
    train_gbdt,
    train_logreg,
    train_test_split,
)
from .preprocess import apply_scaler, compute_global_normal_means, fit_scaler, physiological_matrix
from .stats import AgreementReport, HeterogeneityRow, chi_square, compare_assignments, heterogeneity_summary

log = logging.getLogger(__name__)

MODEL_NAMES = ("LR", "RF", "GBDT")
BUNDLE_FILES = (
    "assignments.csv",
    "silhouette.csv",
    "kappa.json",
    "agreement.csv",
    "embedding.csv",
    "subgroup_profiles.csv",
    "heterogeneity.csv",
    "model_metrics.csv",
    "importance_ranks.csv",
    "demographics.csv",
    "categorical_tests.csv",
    "run_manifest.json",
)


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


# ---------------------------------------------------------------------------
# seeds

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _fnv1a(text: str) -> int:
    h = 0xCBF29CE484222325
    for b in text.encode():
        h = ((h ^ b) * 0x100000001B3) & _MASK64
    return h


def stage_seed(master: int, stage: str) -> int:
    """Stage seed = splitmix64(master XOR fnv1a64(stage)), truncated to 32 bits."""
    return splitmix64((int(master) & _MASK64) ^ _fnv1a(stage)) & 0xFFFFFFFF


# ---------------------------------------------------------------------------
# feature matrices


def demographic_matrix(records: list[AdmissionRecord]) -> np.ndarray:
    return np.array(
        [
            [r.age, 1.0 if r.gender is Gender.M else 0.0, float(r.ventilation), r.total_admission_count,
             r.admission_rank_order]
            for r in records
        ],
        dtype=float,
    ).reshape(len(records), len(DEMOGRAPHIC_IDS))


@dataclass
class PreparedFeatures:
    case_ids: list[str]
    noncase_ids: list[str]
    case_raw: FeatureMatrix  # 62 columns, imputed, physical units
    noncase_raw: FeatureMatrix
    case_scaled: FeatureMatrix  # 62 columns on the case scaler
    noncase_scaled: FeatureMatrix

    def clustering_matrix(self) -> np.ndarray:
        return self.case_scaled.values[:, : len(PHYSIOLOGICAL_IDS)]


def prepare_features(cohort: Cohort) -> PreparedFeatures:
    """Aggregate, derive ratios and impute both populations, then z-score on the cases only."""
    cases = cohort.cases()
    noncases = cohort.noncases()
    if len(cases) < 2:
        raise ValueError("need at least two case admissions")
    base_means = compute_global_normal_means(cohort.measurements)
    case_ids = [r.admission_id for r in cases]
    non_ids = [r.admission_id for r in noncases]
    case_phys, means = physiological_matrix(cohort.measurements, case_ids, base_means)
    ratio_defaults = {c: means[c] for c in PHYSIOLOGICAL_IDS if c not in base_means}
    non_phys, _ = physiological_matrix(cohort.measurements, non_ids, base_means, ratio_defaults)

    def full(phys: FeatureMatrix, records) -> FeatureMatrix:
        demo = demographic_matrix(records)
        mask = np.hstack([phys.missing_mask, np.zeros(demo.shape, dtype=bool)])
        return FeatureMatrix(list(phys.row_ids), list(PREDICTOR_IDS), np.hstack([phys.values, demo]), mask)

    case_raw = full(case_phys, cases)
    non_raw = full(non_phys, noncases)
    scaler = fit_scaler(case_raw.values, list(PREDICTOR_IDS))
    return PreparedFeatures(case_ids, non_ids, case_raw, non_raw, apply_scaler(case_raw, scaler),
                            apply_scaler(non_raw, scaler))


# ---------------------------------------------------------------------------
# discovery


def canonical_labels(labels: np.ndarray, k: int) -> np.ndarray:
    """Relabel so cluster 0 is the largest; equal sizes keep first-appearance order."""
    sizes = np.bincount(labels, minlength=k)
    first = np.array([np.flatnonzero(labels == c)[0] for c in range(k)])
    order = np.lexsort((first, -sizes))
    remap = np.empty(k, dtype=np.int64)
    remap[order] = np.arange(k)
    return remap[labels]


@dataclass
class Discovery:
    k: int
    silhouette_profiles: dict[tuple[str, str], dict[int, float]]
    assignment: ClusterAssignment  # primary: k-means on the primary metric
    clusterings: dict[tuple[str, str], ClusterAssignment]  # (method, metric) -> assignment
    agreement: dict[str, AgreementReport]  # per metric: k-means vs hierarchical
    kappa: float
    unstable: bool
    embeddings: dict[str, TsneResult] = field(default_factory=dict)
    embedding_rows: np.ndarray | None = None


def discover_subgroups(X: np.ndarray, config: RunConfig, seed: int | None = None) -> Discovery:
    c = config.clustering
    seed = config.seed if seed is None else seed
    primary = Metric(c.metric)
    ks = range(c.k_min, c.k_max + 1)
    profiles = {}
    for metric in (Metric.EUCLIDEAN, Metric.COSINE):
        _, profiles[("kmeans", metric.value)] = select_k(
            X, ClusterMethod.KMEANS, metric, ks, seed=stage_seed(seed, f"select_k:{metric.value}"),
            restarts=c.restarts, sample_size=c.silhouette_sample,
        )
    prof = profiles[("kmeans", primary.value)]
    k = min(prof, key=lambda kk: (-prof[kk], kk))

    clusterings = {}
    for metric in (Metric.EUCLIDEAN, Metric.COSINE):
        _, km = kmeans(X, k, metric, seed=stage_seed(seed, f"select_k:{metric.value}"), restarts=c.restarts,
                       max_iter=c.max_iter)
        km = ClusterAssignment(canonical_labels(km.labels, k), k, km.method, km.metric, km.objective)
        linkage = c.linkage if metric is Metric.EUCLIDEAN else c.cosine_linkage
        _, hc = hierarchical(X, k, metric, linkage)
        clusterings[("kmeans", metric.value)] = km
        clusterings[("hierarchical", metric.value)] = hc
    agreement = {
        m.value: compare_assignments(clusterings[("kmeans", m.value)], clusterings[("hierarchical", m.value)])
        for m in (Metric.EUCLIDEAN, Metric.COSINE)
    }
    kappa = agreement[primary.value].kappa
    unstable = kappa < c.kappa_threshold
    if unstable:
        log.warning("k-means vs hierarchical kappa %.3f below %.2f: clustering looks unstable", kappa,
                    c.kappa_threshold)
    result = Discovery(k, profiles, clusterings[("kmeans", primary.value)], clusterings, agreement, kappa, unstable)

    t = config.tsne
    if t.enabled:
        n = X.shape[0]
        rows = np.arange(n)
        if n > t.max_points:
            rng = np.random.default_rng(stage_seed(seed, "tsne:subsample"))
            rows = np.sort(rng.choice(n, size=t.max_points, replace=False))
        perplexity = min(t.perplexity, (rows.size - 1) / 3.0 - 1e-9)
        if rows.size >= 10 and perplexity > 1:
            for metric in (Metric.EUCLIDEAN, Metric.COSINE):
                cfg = TsneConfig(perplexity=perplexity, iterations=t.iterations, learning_rate=t.learning_rate,
                                 seed=stage_seed(seed, f"tsne:{metric.value}"), metric=metric)
                result.embeddings[metric.value] = tsne(X[rows], cfg)
            result.embedding_rows = rows
    return result


# ---------------------------------------------------------------------------
# validation and expansion


@dataclass
class FeatureSetValidation:
    model: GbdtModel
    accuracy: float
    f_macro: float
    n_train: int
    n_test: int


def validate_feature_set(X: np.ndarray, assignment: ClusterAssignment, seed: int, config: RunConfig | None = None
                         ) -> FeatureSetValidation:
    """Hold out 20% of cases, train a multiclass GBDT on cluster labels, score re-assignment."""
    m = (config or RunConfig()).models
    sizes = assignment.sizes()
    if (sizes < m.min_cluster_size).any():
        raise ValueError(f"clusters {np.flatnonzero(sizes < m.min_cluster_size).tolist()} have fewer than "
                         f"{m.min_cluster_size} members; cannot stratify")
    y = assignment.labels
    split = train_test_split(X, y, m.split_ratio, seed=seed)
    model = train_gbdt(X[split.train], y[split.train], n_rounds=m.validation_rounds, lr=m.gbdt_learning_rate,
                       max_depth=m.gbdt_max_depth, l2_leaf=m.gbdt_l2_leaf, n_classes=assignment.k)
    pred = predict(model, X[split.test])
    return FeatureSetValidation(model, accuracy(y[split.test], pred),
                                macro_f_score(y[split.test], pred, range(assignment.k)),
                                split.train.size, split.test.size)


def refit_on_all_cases(X: np.ndarray, assignment: ClusterAssignment, config: RunConfig) -> GbdtModel:
    m = config.models
    return train_gbdt(X, assignment.labels, n_rounds=m.validation_rounds, lr=m.gbdt_learning_rate,
                      max_depth=m.gbdt_max_depth, l2_leaf=m.gbdt_l2_leaf, n_classes=assignment.k)


@dataclass
class Expansion:
    labels: np.ndarray  # -1 where filtered by the minimum-probability rule
    max_probability: np.ndarray
    histogram: np.ndarray


def expand_clusters(model, X_noncase: np.ndarray, min_probability: float = 0.0) -> Expansion:
    """Argmax subgroup per non-case row (ties to the lower label)."""
    k = model.n_classes
    X_noncase = np.asarray(X_noncase, dtype=float)
    if X_noncase.shape[0] == 0:
        return Expansion(np.empty(0, dtype=np.int64), np.empty(0), np.zeros(k, dtype=np.int64))
    P = model.predict_proba(X_noncase)
    labels = np.argmax(P, axis=1)
    top = P[np.arange(P.shape[0]), labels]
    if min_probability > 0:
        labels = np.where(top >= min_probability, labels, -1)
    return Expansion(labels, top, np.bincount(labels[labels >= 0], minlength=k))


# ---------------------------------------------------------------------------
# characterization


@dataclass
class SubgroupProfile:
    subgroup: int
    count: int
    percent: float
    los_mean: float
    age_mean: float
    mortality_pct: float
    emergency_pct: float
    total_admissions_mean: float
    rank_order_mean: float
    ventilation_pct: float
    feature_means: dict[str, float]


def _outcomes(records: list[AdmissionRecord]) -> dict[str, float]:
    n = len(records)
    if n == 0:
        nan = float("nan")
        return dict(los_mean=nan, age_mean=nan, mortality_pct=nan, emergency_pct=nan, total_admissions_mean=nan,
                    rank_order_mean=nan, ventilation_pct=nan, female_pct=nan, age_sd=nan)
    ages = np.array([r.age for r in records])
    return dict(
        los_mean=float(np.mean([r.los_days for r in records])),
        age_mean=float(ages.mean()),
        age_sd=float(ages.std()),
        mortality_pct=100.0 * sum(r.died_in_hospital for r in records) / n,
        emergency_pct=100.0 * sum(r.admission_type is AdmissionType.EMER for r in records) / n,
        total_admissions_mean=float(np.mean([r.total_admission_count for r in records])),
        rank_order_mean=float(np.mean([r.admission_rank_order for r in records])),
        ventilation_pct=100.0 * sum(r.ventilation for r in records) / n,
        female_pct=100.0 * sum(r.gender is Gender.F for r in records) / n,
    )


AGE_BANDS = ((18, 25, "18-24"), (25, 45, "25-44"), (45, 65, "45-64"), (65, 85, "65-84"), (85, float("inf"), "85+"))
DEMOGRAPHIC_COLUMNS = ("section", "stratum", "count", "los_mean", "mortality_pct", "age_mean", "female_pct",
                       "ventilation_pct")


def demographics_table(cases: list[AdmissionRecord], noncases: list[AdmissionRecord]) -> list[tuple]:
    """Count, LOS and mortality for the case cohort by sex, age band and admission type."""
    def row(section, stratum, recs):
        o = _outcomes(recs)
        return (section, stratum, len(recs), o["los_mean"], o["mortality_pct"], o["age_mean"], o["female_pct"],
                o["ventilation_pct"])

    rows = [row("cohort", "delirium", cases), row("cohort", "non_delirium", noncases), row("all", "all", cases)]
    rows += [row("sex", g.value, [r for r in cases if r.gender is g]) for g in Gender]
    rows += [row("age", name, [r for r in cases if lo <= r.age < hi]) for lo, hi, name in AGE_BANDS]
    rows += [row("admission_type", t.value, [r for r in cases if r.admission_type is t]) for t in AdmissionType]
    return rows


@dataclass
class CategoricalTest:
    variable: str
    statistic: float
    df: int
    p_value: float


def _categorical_tests(records, labels, k) -> list[CategoricalTest]:
    fields_: dict[str, Callable[[AdmissionRecord], str]] = {
        "gender": lambda r: r.gender.value,
        "admission_type": lambda r: r.admission_type.value,
        "ventilation": lambda r: str(int(r.ventilation)),
        "mortality": lambda r: str(int(r.died_in_hospital)),
    }
    out = []
    for name, getter in fields_.items():
        values = [getter(r) for r in records]
        cats = sorted(set(values))
        table = np.zeros((k, len(cats)))
        for lab, v in zip(labels, values):
            table[lab, cats.index(v)] += 1
        table = table[table.sum(axis=1) > 0]
        if table.shape[0] < 2 or table.shape[1] < 2:
            out.append(CategoricalTest(name, 0.0, 0, 1.0))
            continue
        res = chi_square(table)
        out.append(CategoricalTest(name, res.statistic, res.df, res.p_value))
    return out


@dataclass
class Characterization:
    profiles: list[SubgroupProfile]
    heterogeneity: list[HeterogeneityRow]
    categorical: list[CategoricalTest]


def characterize_subgroups(records: list[AdmissionRecord], assignment: ClusterAssignment, raw: np.ndarray,
                           scaled: np.ndarray) -> Characterization:
    """Table III style outcome summaries, per-feature means and heterogeneity statistics."""
    labels = assignment.labels
    n = labels.size
    profiles = []
    for c in range(assignment.k):
        rows = np.flatnonzero(labels == c)
        members = [records[i] for i in rows]
        o = _outcomes(members)
        means = raw[rows, : len(PHYSIOLOGICAL_IDS)].mean(axis=0)
        profiles.append(SubgroupProfile(
            c, int(rows.size), 100.0 * rows.size / n, o["los_mean"], o["age_mean"], o["mortality_pct"],
            o["emergency_pct"], o["total_admissions_mean"], o["rank_order_mean"], o["ventilation_pct"],
            dict(zip(PHYSIOLOGICAL_IDS, means.tolist())),
        ))
    het = heterogeneity_summary(scaled[:, : len(PHYSIOLOGICAL_IDS)], assignment, list(PHYSIOLOGICAL_IDS))
    return Characterization(profiles, het, _categorical_tests(records, labels, assignment.k))


# ---------------------------------------------------------------------------
# subgroup models


@dataclass
class ScopeResult:
    scope: str
    n_delirium: int
    n_non_delirium: int
    status: str = "ok"
    metrics: dict[str, dict[str, float]] = field(default_factory=dict)
    ranking: ImportanceRanking | None = None
    n_train: int = 0
    n_test: int = 0

    @property
    def delirium_pct(self) -> float:
        total = self.n_delirium + self.n_non_delirium
        return 100.0 * self.n_delirium / total if total else float("nan")


def _fit_scope(X, y, seed, m) -> tuple[dict, ImportanceRanking, int, int]:
    split = train_test_split(X, y, m.split_ratio, seed=stage_seed(seed, "split"))
    Xtr, ytr, Xte, yte = X[split.train], y[split.train], X[split.test], y[split.test]
    models = {
        "LR": train_logreg(Xtr, ytr, l2=m.lr_l2, max_iter=m.lr_max_iter),
        "RF": train_forest(Xtr, ytr, n_trees=m.rf_trees, max_depth=m.rf_max_depth, seed=stage_seed(seed, "rf")),
        "GBDT": train_gbdt(Xtr, ytr, n_rounds=m.gbdt_rounds, lr=m.gbdt_learning_rate, max_depth=m.gbdt_max_depth,
                           l2_leaf=m.gbdt_l2_leaf, n_classes=2),
    }
    majority = int(np.bincount(ytr, minlength=2).argmax())
    metrics = {}
    for name, model in models.items():
        proba = model.predict_proba(Xte)
        pred = np.argmax(proba, axis=1)
        both = np.unique(yte).size == 2
        metrics[name] = {
            "f_majority": f_score(yte, pred, majority),
            "f_delirium": f_score(yte, pred, 1),
            "f_non_delirium": f_score(yte, pred, 0),
            "f_macro": macro_f_score(yte, pred, (0, 1)),
            "auroc": auroc(yte, proba[:, 1]) if both else float("nan"),
            "accuracy": accuracy(yte, pred),
        }
    ranking = ensemble_rank([models[n].feature_importance() for n in MODEL_NAMES], list(PREDICTOR_IDS),
                            list(MODEL_NAMES))
    return metrics, ranking, split.train.size, split.test.size


def train_subgroup_models(X: np.ndarray, y: np.ndarray, groups: np.ndarray, k: int, seed: int,
                          config: RunConfig | None = None) -> list[ScopeResult]:
    """Fit LR/RF/GBDT on the delirium label in the all-patient scope and in each subgroup."""
    m = (config or RunConfig()).models
    y = np.asarray(y, dtype=np.int64)
    scopes = [("all", np.ones(y.size, dtype=bool))] + [(f"subgroup_{c}", groups == c) for c in range(k)]
    results = []
    for name, rows in scopes:
        yy = y[rows]
        res = ScopeResult(name, int(yy.sum()), int(rows.sum() - yy.sum()))
        counts = np.bincount(yy, minlength=2)
        if (counts < 2).any():
            log.warning("scope %s skipped: single-class outcome (%d / %d)", name, counts[1], counts[0])
            res.status = "skipped"
            results.append(res)
            continue
        res.metrics, res.ranking, res.n_train, res.n_test = _fit_scope(X[rows], yy, stage_seed(seed, name), m)
        results.append(res)
    return results


# ---------------------------------------------------------------------------
# full run


@dataclass
class ReportBundle:
    out_dir: Path | None
    features: PreparedFeatures
    discovery: Discovery
    validation: FeatureSetValidation
    expansion: Expansion
    characterization: Characterization
    scopes: list[ScopeResult]
    seeds: dict[str, int]
    timings: dict[str, float]
    cohort_counts: dict[str, int]
    files: dict[str, Path] = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "k": self.discovery.k,
            "kappa": self.discovery.kappa,
            "unstable": self.discovery.unstable,
            "validation_accuracy": self.validation.accuracy,
            "validation_f_macro": self.validation.f_macro,
            "cohort": self.cohort_counts,
            "expansion_histogram": self.expansion.histogram.tolist(),
        }


def _stage(name, timings, fn, *args, **kwargs):
    start = time.perf_counter()
    log.info("stage %s", name)
    try:
        out = fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage name attached
        raise PipelineError(name, exc) from exc
    timings[name] = time.perf_counter() - start
    return out


def run_on_cohort(cohort: Cohort, config: RunConfig, out_dir: str | Path | None = None,
                  timings: dict[str, float] | None = None) -> ReportBundle:
    timings = {} if timings is None else timings
    seed = config.seed
    seeds = {s: stage_seed(seed, s) for s in ("discover", "validate", "models")}
    feats = _stage("preprocess", timings, prepare_features, cohort)
    Xc = feats.clustering_matrix()
    disc = _stage("discover", timings, discover_subgroups, Xc, config, seeds["discover"])
    val = _stage("validate", timings, validate_feature_set, Xc, disc.assignment, seeds["validate"], config)
    full_model = _stage("expand_fit", timings, refit_on_all_cases, Xc, disc.assignment, config)
    exp = _stage("expand", timings, expand_clusters, full_model,
                 feats.noncase_scaled.values[:, : len(PHYSIOLOGICAL_IDS)], config.models.expansion_min_probability)
    by_id = cohort.by_id()
    case_records = [by_id[a] for a in feats.case_ids]
    char = _stage("characterize", timings, characterize_subgroups, case_records, disc.assignment,
                  feats.case_raw.values, feats.case_scaled.values)

    keep_non = exp.labels >= 0
    X = np.vstack([feats.case_scaled.values, feats.noncase_scaled.values[keep_non]])
    y = np.concatenate([np.ones(len(feats.case_ids), dtype=np.int64), np.zeros(int(keep_non.sum()), dtype=np.int64)])
    groups = np.concatenate([disc.assignment.labels, exp.labels[keep_non]])
    scopes = _stage("models", timings, train_subgroup_models, X, y, groups, disc.k, seeds["models"], config)

    counts = {"cases": len(feats.case_ids), "noncases": len(feats.noncase_ids),
              "excluded": len(cohort.exclusion_log), **{f"excluded_{k}": v for k, v in cohort.exclusion_counts().items()}}
    bundle = ReportBundle(None, feats, disc, val, exp, char, scopes, seeds, timings, counts)
    if out_dir is not None:
        bundle.out_dir = Path(out_dir)
        _stage("write", timings, write_bundle, bundle, config, cohort)
    return bundle


def run_full_pipeline(config: RunConfig) -> ReportBundle:
    config.validate()
    timings: dict[str, float] = {}
    spec = CohortSpec(
        disqualifying_icd_codes=frozenset(config.cohort.disqualifying_icd_codes),
        min_age=config.cohort.min_age,
        min_los_days=config.cohort.min_los_days,
        exclude_delirium_within_hours=config.cohort.exclude_delirium_within_hours,
    )
    cohort = _stage("ingest", timings, build_cohort, config.admissions_path, config.measurements_path, spec)
    return run_on_cohort(cohort, config, config.out_dir, timings)


# ---------------------------------------------------------------------------
# bundle writing


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: Path, header: list[str], rows) -> Path:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(type(o))


def write_bundle(bundle: ReportBundle, config: RunConfig, cohort: Cohort) -> dict[str, Path]:
    out = bundle.out_dir
    out.mkdir(parents=True, exist_ok=True)
    f, d = bundle.features, bundle.discovery
    files = {}

    rows = [(a, 1, int(lab), "cluster", "") for a, lab in zip(f.case_ids, d.assignment.labels)]
    rows += [(a, 0, int(lab), "expanded", float(p))
             for a, lab, p in zip(f.noncase_ids, bundle.expansion.labels, bundle.expansion.max_probability)]
    rows.sort(key=lambda r: r[0])
    files["assignments.csv"] = _write_csv(out / "assignments.csv",
                                          ["admission_id", "delirium", "subgroup", "source", "max_probability"], rows)

    rows = []
    for (method, metric), prof in sorted(d.silhouette_profiles.items()):
        for k, w in sorted(prof.items()):
            rows.append((method, metric, k, w, int(k == d.k and metric == config.clustering.metric)))
    files["silhouette.csv"] = _write_csv(out / "silhouette.csv",
                                         ["method", "metric", "k", "mean_width", "selected"], rows)

    kappa = {
        "k": d.k,
        "primary_metric": config.clustering.metric,
        "kappa": d.kappa,
        "threshold": config.clustering.kappa_threshold,
        "unstable": d.unstable,
        "per_metric": {m: {"kappa": r.kappa, "alignment": r.alignment.tolist()} for m, r in sorted(d.agreement.items())},
    }
    (out / "kappa.json").write_text(json.dumps(kappa, indent=2, sort_keys=True, default=_json_default) + "\n")
    files["kappa.json"] = out / "kappa.json"

    rows = []
    for metric, rep in sorted(d.agreement.items()):
        for i in range(d.k):
            for j in range(d.k):
                rows.append((metric, i, j, int(rep.confusion[i, j]), float(rep.row_percent[i, j])))
    files["agreement.csv"] = _write_csv(out / "agreement.csv",
                                        ["metric", "kmeans_label", "hierarchical_label", "count", "row_fraction"], rows)

    rows = []
    if d.embedding_rows is not None:
        for metric, res in sorted(d.embeddings.items()):
            km = d.clusterings[("kmeans", metric)].labels
            hc = d.clusterings[("hierarchical", metric)].labels
            for pos, i in enumerate(d.embedding_rows):
                rows.append((f.case_ids[i], metric, res.embedding[pos, 0], res.embedding[pos, 1],
                             int(d.assignment.labels[i]), int(km[i]), int(hc[i])))
    files["embedding.csv"] = _write_csv(out / "embedding.csv", ["admission_id", "metric", "x", "y", "cluster_label",
                                                                "kmeans_label", "hierarchical_label"], rows)

    char = bundle.characterization
    head = ["subgroup", "count", "percent", "los_mean", "age_mean", "mortality_pct", "emergency_pct",
            "total_admissions_mean", "rank_order_mean", "ventilation_pct"] + [f"mean_{c}" for c in PHYSIOLOGICAL_IDS]
    rows = [[p.subgroup, p.count, p.percent, p.los_mean, p.age_mean, p.mortality_pct, p.emergency_pct,
             p.total_admissions_mean, p.rank_order_mean, p.ventilation_pct] + [p.feature_means[c] for c in PHYSIOLOGICAL_IDS]
            for p in char.profiles]
    files["subgroup_profiles.csv"] = _write_csv(out / "subgroup_profiles.csv", head, rows)

    head = ["feature", "display_name"] + [f"mean_subgroup_{c}" for c in range(d.k)] + [
        "std_of_means", "avg_neglog10_p", "highlighted"]
    rows = [[h.feature, display_name(h.feature)] + h.subgroup_means.tolist() + [h.std_of_means, h.avg_neglog10_p,
                                                                               h.highlighted]
            for h in char.heterogeneity]
    files["heterogeneity.csv"] = _write_csv(out / "heterogeneity.csv", head, rows)

    rows = []
    for s in bundle.scopes:
        for name in MODEL_NAMES:
            m = s.metrics.get(name, {})
            nan = float("nan")
            rows.append((s.scope, s.n_delirium, s.n_non_delirium, s.delirium_pct, name, s.status,
                         m.get("f_majority", nan), m.get("f_delirium", nan), m.get("f_non_delirium", nan),
                         m.get("f_macro", nan), m.get("auroc", nan), m.get("accuracy", nan), s.n_train, s.n_test))
    files["model_metrics.csv"] = _write_csv(out / "model_metrics.csv", [
        "scope", "n_delirium", "n_non_delirium", "delirium_pct", "model", "status", "f_majority", "f_delirium",
        "f_non_delirium", "f_macro", "auroc", "accuracy", "n_train", "n_test"], rows)

    rows = []
    for s in bundle.scopes:
        if s.ranking is None:
            continue
        r = s.ranking
        for j, feat in enumerate(r.feature_ids):
            rows.append([s.scope, feat] + [r.ranks[i, j] for i in range(len(MODEL_NAMES))] + [r.mean_rank[j]]
                        + [r.scores[i, j] for i in range(len(MODEL_NAMES))])
    files["importance_ranks.csv"] = _write_csv(out / "importance_ranks.csv", [
        "scope", "feature", "rank_LR", "rank_RF", "rank_GBDT", "mean_rank", "score_LR", "score_RF", "score_GBDT"], rows)

    by_id = cohort.by_id()
    rows = demographics_table([by_id[a] for a in f.case_ids], [by_id[a] for a in f.noncase_ids])
    files["demographics.csv"] = _write_csv(out / "demographics.csv", list(DEMOGRAPHIC_COLUMNS), rows)

    files["categorical_tests.csv"] = _write_csv(out / "categorical_tests.csv", ["variable", "statistic", "df", "p_value"],
                                                [(c.variable, c.statistic, c.df, c.p_value) for c in char.categorical])

    manifest = {
        "config": config.to_dict(),
        "seeds": bundle.seeds,
        "summary": bundle.summary(),
        "validation": {"accuracy": bundle.validation.accuracy, "f_macro": bundle.validation.f_macro,
                       "n_train": bundle.validation.n_train, "n_test": bundle.validation.n_test},
        "stage_timings_s": bundle.timings,
        "versions": {"subphenotype": __version__, "python": platform.python_version(), "numpy": np.__version__},
    }
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
    files["run_manifest.json"] = out / "run_manifest.json"
    bundle.files = files
    return files
