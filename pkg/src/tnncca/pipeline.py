"""Fit / train / evaluate stages and k-fold cross-validation of the full pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field

from .cca import DEFAULT_COMPONENTS, fit_cca, fit_cluster_cca, project
from .errors import DataError
from .evaluation import evaluate_retrieval, merge_fold_reports
from .tnn import DIRECTIONS, TrainConfig, embed, train

METHODS = ("tnn-c-cca", "cluster-cca-only", "cca-only")


@dataclass(frozen=True)
class PipelineConfig:
    method: str = "tnn-c-cca"
    k: int = DEFAULT_COMPONENTS
    reg: float | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    directions: tuple = DIRECTIONS

    def __post_init__(self):
        if self.method not in METHODS:
            raise DataError(f"unknown method {self.method!r}; expected one of {METHODS}")
        bad = [d for d in self.directions if d not in DIRECTIONS]
        if bad or not self.directions:
            raise DataError(f"invalid directions {self.directions!r}")
        if self.k < 1:
            raise DataError("k must be >= 1")


def fit_stage(ds, config):
    fit = fit_cca if config.method == "cca-only" else fit_cluster_cca
    return fit(ds, config.k, config.reg)


def train_stage(ds, cca_model, train_config, direction, history=None):
    px = project(cca_model, ds.x, "x")
    py = project(cca_model, ds.y, "y")
    return train(px, py, ds.labels, train_config, direction, history)


def query_gallery(ds, cca_model, direction, tnn_model=None):
    """Query and gallery embeddings of ``ds`` for one retrieval direction."""
    px = project(cca_model, ds.x, "x")
    py = project(cca_model, ds.y, "y")
    queries, gallery = (px, py) if direction == "audio2visual" else (py, px)
    if tnn_model is not None:
        if tnn_model.direction != direction:
            raise DataError(f"TNN model was trained for {tnn_model.direction}, not {direction}")
        queries = embed(tnn_model, queries, "anchor")
        gallery = embed(tnn_model, gallery, "pair")
    return queries, gallery


def evaluate_stage(ds, cca_model, direction, tnn_model=None):
    queries, gallery = query_gallery(ds, cca_model, direction, tnn_model)
    return evaluate_retrieval(queries, gallery, ds.labels, ds.labels, direction)


def run_fold(ds, folds, fold, config):
    """Train on every fold but ``fold`` and evaluate on it. Returns ``{direction: report}``."""
    train_idx, test_idx = folds.train_test(fold)
    train_ds, test_ds = ds.subset(train_idx), ds.subset(test_idx)
    cca_model = fit_stage(train_ds, config)
    out = {}
    for direction in config.directions:
        tnn_model = None
        if config.method == "tnn-c-cca":
            tnn_model = train_stage(train_ds, cca_model, config.train, direction)
        out[direction] = evaluate_stage(test_ds, cca_model, direction, tnn_model)
    return out


def crossval_evaluate(ds, folds, config=None):
    """k-fold cross-validated retrieval: held-out items serve as queries and gallery."""
    config = config or PipelineConfig()
    per_fold = [run_fold(ds, folds, f, config) for f in range(folds.k)]
    return {d: merge_fold_reports([r[d] for r in per_fold], d) for d in config.directions}
