"""Cluster-CCA + deep triplet network pipeline for cross-modal retrieval."""

from .cca import CcaModel, fit_cca, fit_cluster_cca, project
from .dataset import PairedDataset, SynthSpec, kfold_split, load_dataset, save_dataset, synth_clustered
from .errors import DataError, NumericalError
from .evaluation import RetrievalReport, average_precision, mean_average_precision
from .pipeline import PipelineConfig, crossval_evaluate
from .tnn import TnnModel, TrainConfig, embed, train

__version__ = "0.1.0"

__all__ = [
    "CcaModel",
    "DataError",
    "NumericalError",
    "PairedDataset",
    "PipelineConfig",
    "RetrievalReport",
    "SynthSpec",
    "TnnModel",
    "TrainConfig",
    "average_precision",
    "crossval_evaluate",
    "embed",
    "fit_cca",
    "fit_cluster_cca",
    "kfold_split",
    "load_dataset",
    "mean_average_precision",
    "project",
    "save_dataset",
    "synth_clustered",
    "train",
]
