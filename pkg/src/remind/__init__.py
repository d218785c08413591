"""Streaming continual learning with replay of product-quantized features."""
from .baselines import (ExStreamClassifier, FineTuneClassifier, OfflineClassifier,
                        SLDAClassifier)
from .buffer import ReplayBuffer
from .harness import ExperimentConfig, run_experiment, run_sweep
from .io import export_features, ingest_features
from .learner import REMINDClassifier
from .metrics import EvalTrace, mu_all, omega_all, topk_accuracy
from .quantizer import Codebook, ProductQuantizer, train_kmeans, train_pq
from .rng import seeded_rng
from .synthetic import make_synthetic
from .types import FeatureDataset, LabeledSample

__all__ = [
    "Codebook", "EvalTrace", "ExStreamClassifier", "ExperimentConfig", "FeatureDataset",
    "FineTuneClassifier", "LabeledSample", "OfflineClassifier", "ProductQuantizer",
    "REMINDClassifier", "ReplayBuffer", "SLDAClassifier", "export_features",
    "ingest_features", "make_synthetic", "mu_all", "omega_all", "run_experiment", "run_sweep", "seeded_rng",
    "topk_accuracy", "train_kmeans", "train_pq",
]

__version__ = "0.1.0"
