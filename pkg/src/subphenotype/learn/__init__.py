"""From-scratch classifiers, metrics and importance ranking."""
from __future__ import annotations

import json
from pathlib import Path

from .boost import GbdtModel, train_gbdt
from .forest import DecisionTree, ForestModel, train_forest, train_tree
from .linear import LogisticModel, logistic_gradient, logistic_loss, train_logreg
from .metrics import (
    ImportanceRanking,
    Split,
    accuracy,
    auroc,
    ensemble_rank,
    f_score,
    feature_importance,
    macro_f_score,
    predict,
    predict_proba,
    train_test_split,
)
from .tree import Binner, Tree

_KINDS = {"logistic": LogisticModel, "forest": ForestModel, "gbdt": GbdtModel}


def model_to_json(model) -> str:
    return json.dumps(model.to_dict(), sort_keys=True)


def model_from_json(text: str):
    d = json.loads(text)
    try:
        return _KINDS[d["kind"]].from_dict(d)
    except KeyError as exc:
        raise ValueError(f"unknown model kind {d.get('kind')!r}") from exc


def save_model(model, path: str | Path) -> None:
    Path(path).write_text(model_to_json(model))


def load_model(path: str | Path):
    return model_from_json(Path(path).read_text())


__all__ = [
    "Binner", "DecisionTree", "ForestModel", "GbdtModel", "ImportanceRanking", "LogisticModel", "Split",
    "Tree", "accuracy", "auroc", "ensemble_rank", "f_score", "feature_importance", "load_model",
    "logistic_gradient", "logistic_loss", "macro_f_score", "model_from_json", "model_to_json", "predict",
    "predict_proba", "save_model", "train_forest", "train_gbdt", "train_logreg", "train_test_split",
    "train_tree",
]
