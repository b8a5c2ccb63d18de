from __future__ import annotations

import os
import sys

os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

from datetime import datetime, timedelta

import numpy as np
import pytest

from subphenotype.domain import AdmissionRecord, AdmissionType, Gender

T0 = datetime(2020, 1, 1)


def make_record(
    admission_id="a1",
    patient_id="p1",
    age=60.0,
    gender=Gender.M,
    admit=T0,
    los_days=3.0,
    admission_type=AdmissionType.EMER,
    ventilation=False,
    icd_codes=(),
    cam_hours=(),
    haloperidol=False,
    died=False,
    total=1,
    rank=1,
) -> AdmissionRecord:
    return AdmissionRecord(
        admission_id=admission_id,
        patient_id=patient_id,
        age=float(age),
        gender=gender,
        admit_time=admit,
        discharge_time=admit + timedelta(days=los_days),
        admission_type=admission_type,
        ventilation=ventilation,
        icd_codes=frozenset(icd_codes),
        cam_icu_positive_times=tuple(admit + timedelta(hours=h) for h in cam_hours),
        haloperidol_given=haloperidol,
        died_in_hospital=died,
        total_admission_count=total,
        admission_rank_order=rank,
    )


@pytest.fixture
def record_factory():
    return make_record


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_synth(tmp_path_factory):
    """A small synthetic cohort written to disk (fast enough for unit tests)."""
    from subphenotype import synth

    spec = synth.preset("desk", n_cases=300, n_noncases=900, seed=7)
    out = tmp_path_factory.mktemp("small_synth")
    sim = synth.simulate(spec)
    paths = synth.write_cohort(sim, out)
    return spec, sim, paths


@pytest.fixture(scope="session")
def small_run(small_synth, tmp_path_factory):
    """Full pipeline on the small cohort with light model settings."""
    from subphenotype import config as C
    from subphenotype.pipeline import run_full_pipeline

    spec, sim, paths = small_synth
    out = tmp_path_factory.mktemp("small_bundle")
    cfg = C.load_config(overrides=dict(admissions_path=str(paths["admissions"]),
                                       measurements_path=str(paths["measurements"]), out_dir=str(out)))
    cfg.clustering.k_max = 6
    cfg.clustering.restarts = 3
    cfg.tsne.max_points = 150
    cfg.tsne.iterations = 300
    cfg.models.rf_trees = 20
    cfg.models.gbdt_rounds = 30
    cfg.models.validation_rounds = 30
    return cfg, run_full_pipeline(cfg)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
