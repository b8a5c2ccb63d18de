from datetime import timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subphenotype.ingest import (
    ADMISSION_COLUMNS,
    MEASUREMENT_COLUMNS,
    Cohort,
    CohortSpec,
    ExclusionReason,
    MeasurementTable,
    ParseError,
    apply_exclusions,
    build_cohort,
    label_cohort,
    label_delirium,
    parse_admissions,
    parse_measurements,
    select_index_admissions,
    write_admissions,
)
from subphenotype.domain import Measurement

from conftest import T0, make_record

HEADER = ",".join(ADMISSION_COLUMNS)
ROW = "a1,p1,{age},M,2020-01-01T00:00:00Z,{discharge},EMER,0,F05;I10,,0,0,1,1"


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def _table(rows):
    return MeasurementTable.from_measurements([Measurement(a, v, x, ab, T0) for a, v, x, ab in rows])


# --- parsing ---------------------------------------------------------------


def test_parse_age_17_kept_at_parse_time(tmp_path):
    p = _write(tmp_path, "adm.csv", HEADER + "\n" + ROW.format(age=17, discharge="2020-01-03T00:00:00Z") + "\n")
    (r,) = parse_admissions(p)
    assert r.age == 17
    assert r.icd_codes == frozenset({"F05", "I10"})
    assert r.cam_icu_positive_times == ()


def test_parse_empty_file_with_header(tmp_path):
    assert parse_admissions(_write(tmp_path, "adm.csv", HEADER + "\n")) == []


def test_parse_missing_discharge_names_column(tmp_path):
    p = _write(tmp_path, "adm.csv", HEADER + "\n" + ROW.format(age=40, discharge="") + "\n")
    with pytest.raises(ParseError, match="line 2.*discharge_time"):
        parse_admissions(p)


def test_parse_unknown_admission_type(tmp_path):
    row = ROW.format(age=40, discharge="2020-01-03T00:00:00Z").replace("EMER", "URGENT")
    with pytest.raises(ParseError, match="admission_type"):
        parse_admissions(_write(tmp_path, "adm.csv", HEADER + "\n" + row + "\n"))


def test_parse_bad_header(tmp_path):
    with pytest.raises(ParseError, match="line 1"):
        parse_admissions(_write(tmp_path, "adm.csv", "admission_id,age\n"))


def test_admissions_round_trip(tmp_path, record_factory):
    recs = [record_factory(admission_id="a1", cam_hours=(30, 40), icd_codes=("F05",)),
            record_factory(admission_id="a2", patient_id="p2", age=33.5, haloperidol=True, total=3, rank=2)]
    p = tmp_path / "adm.csv"
    write_admissions(recs, p)
    assert parse_admissions(p) == recs


def test_parse_measurement_row(tmp_path):
    text = ",".join(MEASUREMENT_COLUMNS) + "\na1,heart_rate,92.0,0,2020-01-01T05:00:00Z\n"
    table = parse_measurements(_write(tmp_path, "m.csv", text))
    (m,) = list(table)
    assert (m.admission_id, m.variable, m.value, m.abnormal) == ("a1", "heart_rate", 92.0, False)
    assert table.dropped_unknown == 0


def test_parse_measurement_unknown_variable_dropped(tmp_path):
    text = ",".join(MEASUREMENT_COLUMNS) + "\na1,unknown_lab,1,0,\na1,heart_rate,80,1,\n"
    table = parse_measurements(_write(tmp_path, "m.csv", text))
    assert table.dropped_unknown == 1
    assert len(table) == 1


def test_parse_measurement_non_numeric(tmp_path):
    text = ",".join(MEASUREMENT_COLUMNS) + "\na1,heart_rate,80,0,\na1,heart_rate,abc,0,\n"
    with pytest.raises(ParseError, match="line 3"):
        parse_measurements(_write(tmp_path, "m.csv", text))


# --- labelling ---------------------------------------------------------------


def test_label_triggers():
    spec = CohortSpec()
    assert label_delirium(make_record(icd_codes=("F05",)), spec)
    assert label_delirium(make_record(haloperidol=True), spec)
    assert label_delirium(make_record(cam_hours=(30,)), spec)
    assert not label_delirium(make_record(icd_codes=("I10",)), spec)


def test_icd_match_is_exact_not_prefix():
    spec = CohortSpec()
    assert not label_delirium(make_record(icd_codes=("F05.9",)), spec)
    assert label_delirium(make_record(icd_codes=(" F05 ",)), spec)


# --- exclusions ----------------------------------------------------------------


def _cohort(records, measured=None):
    measured = [r.admission_id for r in records] if measured is None else measured
    table = _table([(a, "heart_rate", 80.0, False) for a in measured])
    return label_cohort(records, table, CohortSpec())


@pytest.mark.parametrize(
    "kwargs, reason",
    [
        (dict(age=17), ExclusionReason.AGE),
        (dict(los_days=0.5), ExclusionReason.LOS),
        (dict(cam_hours=(2,)), ExclusionReason.EARLY_DELIRIUM),
    ],
)
def test_exclusion_reasons(kwargs, reason):
    c = apply_exclusions(_cohort([make_record(**kwargs)]), CohortSpec())
    assert c.admissions == []
    assert c.exclusion_log["a1"] is reason


def test_no_measurements_excluded():
    c = apply_exclusions(_cohort([make_record()], measured=[]), CohortSpec())
    assert c.exclusion_log["a1"] is ExclusionReason.NO_MEASUREMENTS


def test_los_exactly_one_day_is_kept():
    c = apply_exclusions(_cohort([make_record(los_days=1.0)]), CohortSpec())
    assert len(c.admissions) == 1


def test_disqualifying_codes_are_configurable():
    spec = CohortSpec(disqualifying_icd_codes=frozenset({"H54.0"}))
    c = label_cohort([make_record(icd_codes=("H54.0",))], _table([("a1", "heart_rate", 80.0, False)]), spec)
    c = apply_exclusions(c, spec)
    assert c.exclusion_log["a1"] is ExclusionReason.DISQUALIFYING_DX


def test_late_cam_is_not_early_delirium():
    c = apply_exclusions(_cohort([make_record(cam_hours=(24,))]), CohortSpec())
    assert len(c.admissions) == 1


# --- index admissions -------------------------------------------------------------


def test_earliest_delirious_admission_kept():
    recs = [make_record("a1", admit=T0 + timedelta(days=9), haloperidol=True),
            make_record("a2", admit=T0 + timedelta(days=5), haloperidol=True)]
    c = select_index_admissions(apply_exclusions(_cohort(recs), CohortSpec()))
    assert [r.admission_id for r in c.admissions] == ["a2"]
    assert c.exclusion_log["a1"] is ExclusionReason.NOT_INDEX


def test_delirious_admission_preferred_over_earlier_clean_one():
    recs = [make_record("a1", admit=T0), make_record("a2", admit=T0 + timedelta(days=30), haloperidol=True)]
    c = select_index_admissions(apply_exclusions(_cohort(recs), CohortSpec()))
    assert [r.admission_id for r in c.admissions] == ["a2"]


def test_single_admission_unchanged():
    c = select_index_admissions(apply_exclusions(_cohort([make_record()]), CohortSpec()))
    assert [r.admission_id for r in c.admissions] == ["a1"]


def test_equal_admit_time_lower_id_wins():
    recs = [make_record("b2"), make_record("b1")]
    c = select_index_admissions(apply_exclusions(_cohort(recs), CohortSpec()))
    assert [r.admission_id for r in c.admissions] == ["b1"]


@st.composite
def _admission_sets(draw):
    n = draw(st.integers(1, 12))
    recs = []
    for i in range(n):
        recs.append(make_record(
            admission_id=f"a{i:02d}",
            patient_id=f"p{draw(st.integers(0, 3))}",
            age=draw(st.sampled_from([15, 30, 70])),
            admit=T0 + timedelta(days=draw(st.integers(0, 5))),
            los_days=draw(st.sampled_from([0.5, 1.0, 4.0])),
            cam_hours=draw(st.sampled_from([(), (3,), (40,)])),
            haloperidol=draw(st.booleans()),
        ))
    return recs


@settings(max_examples=60, deadline=None)
@given(_admission_sets())
def test_exclusion_idempotent_and_one_admission_per_patient(recs):
    spec = CohortSpec()
    once = apply_exclusions(_cohort(recs), spec)
    twice = apply_exclusions(once, spec)
    assert [r.admission_id for r in once.admissions] == [r.admission_id for r in twice.admissions]
    final = select_index_admissions(once)
    patients = [r.patient_id for r in final.admissions]
    assert len(patients) == len(set(patients))
    assert set(final.exclusion_log) | {r.admission_id for r in final.admissions} == {r.admission_id for r in recs}


def test_build_cohort_on_synthetic_files(small_synth):
    spec, sim, paths = small_synth
    c = build_cohort(paths["admissions"], paths["measurements"])
    assert len(c.cases()) == spec.n_cases
    assert len(c.noncases()) == spec.n_noncases
    kept = {r.admission_id for r in c.admissions}
    assert set(c.measurements.frame["admission_id"].astype(str)) <= kept
    assert isinstance(c, Cohort)
    assert np.all(np.diff([int(r.admission_id[1:]) for r in c.admissions]) > 0)
