"""Stacked phishing URL detection: lexical and character features, classical learners,
an LSTM, and a boosted-tree meta model."""
from __future__ import annotations

from .config import ExperimentConfig, load_config
from .corpus import Dataset, UrlRecord, normalize_url
from .pipeline import RunArtifacts, load_predictor, run_experiment, save_run
from .synthetic import generate_synthetic

__all__ = [
    "Dataset", "ExperimentConfig", "RunArtifacts", "UrlRecord", "generate_synthetic", "load_config",
    "load_predictor", "normalize_url", "run_experiment", "save_run",
]
__version__ = "0.1.0"
