import hashlib
import json
import shutil
import subprocess
import sys
import xml.etree.ElementTree as ET

import pandas as pd
import pytest

from subphenotype.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main
from subphenotype.pipeline import BUNDLE_FILES
from subphenotype.plots import PLOT_FILES, heatmap, line_chart, render_bundle_plots, scatter_grid
from subphenotype.report import IncompleteBundle, bundle_tables, render_report

LIGHT = {
    "clustering": {"k_max": 5, "restarts": 2},
    "tsne": {"max_points": 80, "iterations": 250},
    "models": {"rf_trees": 5, "gbdt_rounds": 5, "validation_rounds": 10},
}


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def small_spec(tmp_path_factory):
    path = tmp_path_factory.mktemp("spec") / "spec.json"
    path.write_text(json.dumps({"n_cases": 150, "n_noncases": 300}))
    return path


@pytest.fixture(scope="module")
def cli_bundle(small_spec, tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--config", str(small_spec), "--out", str(root / "data"), "--seed", "3"]) == EXIT_OK
    cfg = dict(LIGHT, admissions_path="data/admissions.csv", measurements_path="data/measurements.csv",
               out_dir="bundle")
    (root / "run.json").write_text(json.dumps(cfg))
    assert main(["run", "--config", str(root / "run.json")]) == EXIT_OK
    return root


# --- synth --------------------------------------------------------------------------------


def test_synth_writes_three_csvs_and_reruns_identically(small_spec, tmp_path, capsys):
    assert main(["synth", "--config", str(small_spec), "--out", str(tmp_path / "a")]) == EXIT_OK
    assert "self-check passed" in capsys.readouterr().out
    assert main(["synth", "--config", str(small_spec), "--out", str(tmp_path / "b"), "--no-check"]) == EXIT_OK
    for name in ("admissions.csv", "measurements.csv", "ground_truth.csv"):
        assert _digest(tmp_path / "a" / name) == _digest(tmp_path / "b" / name)
    assert (tmp_path / "a" / "synth_spec.json").exists()


def test_synth_invalid_spec_is_usage_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"missing_rate": 1.2}))
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert "missing_rate" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_synth_dry_run_writes_nothing(tmp_path, capsys):
    assert main(["synth", "--preset", "desk", "--out", str(tmp_path / "o"), "--dry-run"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["n_cases"] == 2000
    assert not (tmp_path / "o").exists()


# --- run ----------------------------------------------------------------------------------------


def test_run_writes_artifacts_and_plots(cli_bundle):
    out = cli_bundle / "bundle"
    for name in BUNDLE_FILES + PLOT_FILES:
        assert (out / name).is_file(), name
    for name in PLOT_FILES:
        ET.parse(out / name)  # well-formed XML
        assert (out / name).stat().st_size < 5_000_000


def test_run_missing_input_is_usage_error(tmp_path, capsys):
    missing = tmp_path / "nope.csv"
    code = main(["run", "--admissions", str(missing), "--measurements", str(missing), "--out", str(tmp_path / "b")])
    assert code == EXIT_USAGE
    assert str(missing) in capsys.readouterr().err


def test_run_dry_run_writes_nothing(cli_bundle, tmp_path, capsys):
    code = main(["run", "--config", str(cli_bundle / "run.json"), "--out", str(tmp_path / "b"), "--dry-run",
                 "--seed", "4"])
    assert code == EXIT_OK
    printed = json.loads(capsys.readouterr().out)
    assert printed["seed"] == 4 and printed["clustering"]["k_max"] == 5
    assert not (tmp_path / "b").exists()


def test_run_stage_failure_exits_one(cli_bundle, tmp_path, capsys):
    bad = tmp_path / "measurements.csv"
    lines = (cli_bundle / "data" / "measurements.csv").read_text().splitlines()
    lines[3] = lines[3].split(",")[0] + ",heart_rate,oops,0,"
    bad.write_text("\n".join(lines) + "\n")
    code = main(["run", "--config", str(cli_bundle / "run.json"), "--measurements", str(bad),
                 "--out", str(tmp_path / "b")])
    assert code == EXIT_FAILURE
    assert "ingest" in capsys.readouterr().err


def test_bad_arguments_are_usage_errors(capsys):
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["run", "--threads", "0", "--dry-run"]) == EXIT_USAGE
    assert main(["run", "--preset", "enormous", "--dry-run"]) == EXIT_USAGE


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "subphenotype", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("synth", "run", "report"):
        assert cmd in out.stdout


# --- report ---------------------------------------------------------------------------------------


def test_report_prints_three_tables(cli_bundle, capsys):
    assert main(["report", str(cli_bundle / "bundle")]) == EXIT_OK
    text = capsys.readouterr().out
    assert text.count("\n\n") >= 2
    for title in ("Demographics and outcomes", "Subgroup physiological characteristics",
                  "Subgroup counts and predictive model performance"):
        assert title in text


def test_report_tables_match_csv_row_counts(cli_bundle):
    out = cli_bundle / "bundle"
    demo, profiles, models = bundle_tables(out)
    assert len(demo.rows) == len(pd.read_csv(out / "demographics.csv"))
    assert len(profiles.header) - 1 == len(pd.read_csv(out / "subgroup_profiles.csv"))
    metrics = pd.read_csv(out / "model_metrics.csv")
    assert len(models.header) - 1 == metrics["scope"].nunique()
    assert len(models.rows) == 3 + 3 * metrics["model"].nunique()
    assert render_report(out) == render_report(out)


def test_report_lists_missing_artifacts(cli_bundle, tmp_path, capsys):
    partial = tmp_path / "partial"
    shutil.copytree(cli_bundle / "bundle", partial)
    (partial / "model_metrics.csv").unlink()
    with pytest.raises(IncompleteBundle) as info:
        bundle_tables(partial)
    assert info.value.missing == ["model_metrics.csv"]
    assert main(["report", str(partial)]) == EXIT_USAGE
    assert "model_metrics.csv" in capsys.readouterr().err
    assert main(["report", str(tmp_path / "absent")]) == EXIT_USAGE


# --- plot primitives ------------------------------------------------------------------------------


def test_plot_primitives_are_valid_svg():
    import numpy as np

    svgs = [
        line_chart({"a": ([2, 3, 4], [0.1, 0.3, 0.2])}, "t", "k", "w", marks={"a": 3}),
        scatter_grid([("p", np.random.default_rng(0).normal(size=(20, 2)), np.arange(20) % 3)], "s"),
        heatmap(np.array([[0.5, 0.5], [0.0, 1.0]]), ["r0", "r1"], ["c0", "c1"], "h <&> escaped"),
    ]
    for s in svgs:
        root = ET.fromstring(s)
        assert root.tag.endswith("svg")


def test_plots_rerender_from_csvs(cli_bundle, tmp_path):
    copy = tmp_path / "b"
    shutil.copytree(cli_bundle / "bundle", copy)
    for name in PLOT_FILES:
        (copy / name).unlink()
    written = render_bundle_plots(copy)
    assert sorted(p.name for p in written.values()) == sorted(PLOT_FILES)
    for name in PLOT_FILES:
        assert (copy / name).read_bytes() == (cli_bundle / "bundle" / name).read_bytes()
