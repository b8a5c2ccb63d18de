"""Plain-text summary tables rendered from a finished run bundle (read-only)."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .domain import PHYSIOLOGICAL_IDS, display_name

REPORT_FILES = ("demographics.csv", "subgroup_profiles.csv", "heterogeneity.csv", "model_metrics.csv")

_PROFILE_ROWS = (
    ("los_mean", "Length of stay (days)", "{:.1f}"),
    ("age_mean", "Age", "{:.1f}"),
    ("mortality_pct", "In-hospital mortality", "{:.1f}%"),
    ("emergency_pct", "Emergency %", "{:.1f}%"),
    ("total_admissions_mean", "Patients' total admissions", "{:.1f}"),
    ("rank_order_mean", "Admission rank order", "{:.1f}"),
    ("ventilation_pct", "Ventilation", "{:.0f}%"),
)


_REQUIRED_COLUMNS = {
    "demographics.csv": ("section", "stratum", "count", "los_mean", "mortality_pct"),
    "subgroup_profiles.csv": ("subgroup", "count", "percent") + tuple(c for c, _, _ in _PROFILE_ROWS),
    "heterogeneity.csv": ("feature", "highlighted"),
    "model_metrics.csv": ("scope", "model", "n_delirium", "n_non_delirium", "delirium_pct", "f_majority", "f_macro",
                          "auroc"),
}


class MalformedBundle(ValueError):
    pass


class IncompleteBundle(FileNotFoundError):
    def __init__(self, bundle_dir: Path, missing: list[str]):
        self.missing = missing
        super().__init__(f"{bundle_dir}: bundle is missing {', '.join(missing)}")


@dataclass
class TextTable:
    title: str
    header: list[str]
    rows: list[list[str]]

    def render(self) -> str:
        cols = [self.header] + self.rows
        widths = [max(len(r[i]) for r in cols) for i in range(len(self.header))]

        def line(r):
            first = r[0].ljust(widths[0])
            rest = [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
            return "  ".join([first] + rest).rstrip()

        rule = "-" * len(line(self.header))
        return "\n".join([self.title, rule, line(self.header), rule] + [line(r) for r in self.rows] + [rule])


def missing_artifacts(bundle_dir: str | Path, required=REPORT_FILES) -> list[str]:
    bundle_dir = Path(bundle_dir)
    return [name for name in required if not (bundle_dir / name).is_file()]


def _fmt(fmt: str, v) -> str:
    if v is None or (isinstance(v, float) and not np.isfinite(v)):
        return "-"
    return fmt.format(v)


def demographics_text(df: pd.DataFrame) -> TextTable:
    rows = []
    for r in df.itertuples(index=False):
        label = r.stratum if r.section in ("cohort", "all") else f"{r.section}: {r.stratum}"
        rows.append([label, str(int(r.count)), _fmt("{:.1f}", r.los_mean), _fmt("{:.1f}%", r.mortality_pct)])
    return TextTable("Demographics and outcomes", ["", "Number of patients", "LOS (day)", "Mortality"], rows)


def profiles_text(profiles: pd.DataFrame, heterogeneity: pd.DataFrame) -> TextTable:
    """Subgroups as columns; highlighted heterogeneous features are marked with '*'."""
    profiles = profiles.sort_values("subgroup", kind="stable")
    header = [""] + [f"Subgroup {int(s)}" for s in profiles["subgroup"]]
    rows = [["Patient count (%)"] + [f"{int(c)} ({p:.0f}%)" for c, p in zip(profiles["count"], profiles["percent"])]]
    for col, label, fmt in _PROFILE_ROWS:
        rows.append([label] + [_fmt(fmt, v) for v in profiles[col]])
    flagged = set(heterogeneity.loc[heterogeneity["highlighted"].astype(str).isin(["1", "True", "true"]), "feature"])
    for feat in PHYSIOLOGICAL_IDS:
        col = f"mean_{feat}"
        if col not in profiles:
            continue
        mark = " *" if feat in flagged else ""
        rows.append([display_name(feat) + mark] + [_fmt("{:.4g}", v) for v in profiles[col]])
    return TextTable("Subgroup physiological characteristics (* = heterogeneous on both measures)", header, rows)


def models_text(metrics: pd.DataFrame) -> TextTable:
    scopes = list(dict.fromkeys(metrics["scope"]))
    models = list(dict.fromkeys(metrics["model"]))
    first = metrics.drop_duplicates("scope").set_index("scope")
    header = [""] + [s.replace("subgroup_", "Subgroup ") if s != "all" else "All" for s in scopes]
    rows = [
        ["Delirium patients"] + [str(int(first.loc[s, "n_delirium"])) for s in scopes],
        ["Non-delirium patients"] + [str(int(first.loc[s, "n_non_delirium"])) for s in scopes],
        ["Delirium %"] + [_fmt("{:.1f}%", first.loc[s, "delirium_pct"]) for s in scopes],
    ]
    by = metrics.set_index(["scope", "model"])
    for col, label in (("f_majority", "F score"), ("f_macro", "Macro F"), ("auroc", "AUC")):
        for m in models:
            rows.append([f"{label}: {m}"] + [_fmt("{:.3f}", float(by.loc[(s, m), col])) for s in scopes])
    return TextTable("Subgroup counts and predictive model performance", header, rows)


def bundle_tables(bundle_dir: str | Path) -> list[TextTable]:
    bundle_dir = Path(bundle_dir)
    missing = missing_artifacts(bundle_dir)
    if missing:
        raise IncompleteBundle(bundle_dir, missing)
    frames = {}
    for name in REPORT_FILES:
        df = pd.read_csv(bundle_dir / name, keep_default_na=False, na_values=["nan", ""])
        absent = [c for c in _REQUIRED_COLUMNS[name] if c not in df.columns]
        if absent:
            raise MalformedBundle(f"{bundle_dir / name}: missing columns {absent}")
        frames[name] = df
    return [
        demographics_text(frames["demographics.csv"]),
        profiles_text(frames["subgroup_profiles.csv"], frames["heterogeneity.csv"]),
        models_text(frames["model_metrics.csv"]),
    ]


def render_report(bundle_dir: str | Path) -> str:
    return "\n\n".join(t.render() for t in bundle_tables(bundle_dir)) + "\n"
