"""Run configuration: one JSON document holding every knob of a pipeline run."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from .cluster import LINKAGES
from .domain import Metric


class ConfigError(ValueError):
    pass


@dataclass
class CohortOptions:
    min_age: float = 18.0
    min_los_days: float = 1.0
    exclude_delirium_within_hours: float = 24.0
    disqualifying_icd_codes: list[str] = field(default_factory=list)


@dataclass
class ClusterOptions:
    metric: str = "euclidean"
    linkage: str = "ward"
    cosine_linkage: str = "average"
    k_min: int = 2
    k_max: int = 10
    restarts: int = 10
    max_iter: int = 300
    silhouette_sample: int | None = None
    kappa_threshold: float = 0.6


@dataclass
class TsneOptions:
    enabled: bool = True
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    max_points: int = 1000


@dataclass
class ModelOptions:
    split_ratio: float = 0.8
    lr_l2: float = 1.0
    lr_max_iter: int = 500
    rf_trees: int = 200
    rf_max_depth: int = 8
    gbdt_rounds: int = 300
    gbdt_learning_rate: float = 0.1
    gbdt_max_depth: int = 4
    gbdt_l2_leaf: float = 1.0
    validation_rounds: int = 300
    expansion_min_probability: float = 0.0
    min_cluster_size: int = 5


@dataclass
class RunConfig:
    admissions_path: str | None = None
    measurements_path: str | None = None
    out_dir: str = "bundle"
    seed: int = 0
    preset: str | None = None
    threads: int | None = None
    cohort: CohortOptions = field(default_factory=CohortOptions)
    clustering: ClusterOptions = field(default_factory=ClusterOptions)
    tsne: TsneOptions = field(default_factory=TsneOptions)
    models: ModelOptions = field(default_factory=ModelOptions)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return _build(cls, d, "config")

    def validate(self, check_paths: bool = True) -> "RunConfig":
        errors = []
        for name in ("admissions_path", "measurements_path"):
            p = getattr(self, name)
            if not p:
                errors.append(f"{name} is required")
            elif check_paths and not Path(p).is_file():
                errors.append(f"{name}: no such file {p}")
        c = self.clustering
        try:
            Metric(c.metric)
        except ValueError:
            errors.append(f"unknown metric {c.metric!r}")
        if c.linkage not in LINKAGES or c.cosine_linkage not in LINKAGES:
            errors.append(f"linkage must be one of {LINKAGES}")
        if c.cosine_linkage == "ward":
            errors.append("ward linkage needs euclidean distances; pick another cosine_linkage")
        if not 2 <= c.k_min <= c.k_max:
            errors.append("need 2 <= k_min <= k_max")
        if c.restarts < 1 or c.max_iter < 1:
            errors.append("restarts and max_iter must be positive")
        if not 0.0 <= c.kappa_threshold <= 1.0:
            errors.append("kappa_threshold must lie in [0, 1]")
        m = self.models
        if not 0.0 < m.split_ratio < 1.0:
            errors.append("split_ratio must lie in (0, 1)")
        if not 0.0 <= m.expansion_min_probability < 1.0:
            errors.append("expansion_min_probability must lie in [0, 1)")
        if min(m.rf_trees, m.gbdt_max_depth, m.rf_max_depth) < 1 or min(m.gbdt_rounds, m.validation_rounds) < 0:
            errors.append("model sizes must be positive")
        t = self.tsne
        if t.enabled and (t.iterations < 250 or t.max_points < 10 or t.perplexity <= 0):
            errors.append("t-SNE needs iterations >= 250, max_points >= 10, perplexity > 0")
        if self.threads is not None and self.threads < 1:
            errors.append("threads must be >= 1")
        if errors:
            raise ConfigError("; ".join(errors))
        return self


def _build(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(d) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for name, value in d.items():
        default = known[name].default_factory() if callable(known[name].default_factory) else None
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}.{name}")
        else:
            kwargs[name] = value
    return cls(**kwargs)


PRESETS = {
    "desk": {"tsne": {"max_points": 1000}},
    "paper-scale": {"tsne": {"max_points": 2000}},
}


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path: str | Path | None = None, preset: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults <- preset <- config file <- explicit overrides."""
    data = RunConfig().to_dict()
    file_data = {}
    if path is not None:
        try:
            file_data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(file_data, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        # relative paths inside a config file are relative to that file
        base = Path(path).resolve().parent
        for key in ("admissions_path", "measurements_path", "out_dir"):
            value = file_data.get(key)
            if isinstance(value, str) and value and not Path(value).is_absolute():
                file_data[key] = str(base / value)
    name = preset or file_data.get("preset")
    if name is not None:
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        data = _merge(data, PRESETS[name])
        data["preset"] = name
    data = _merge(data, file_data)
    if preset is not None:
        data["preset"] = preset
    data = _merge(data, {k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig.from_dict(data)
