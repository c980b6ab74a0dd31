"""Utility-preserving anonymization of biometric feature vectors."""

from .data import Dataset, Schema, SynthConfig, generate_synthetic, load_csv, load_schema, save_csv, split
from .errors import AnonError, ConfigError, DataError
from .forest import ClassifierModel, ForestConfig, train
from .metrics import Attack, EvaluationReport, UtilityWeights, evaluate
from .relevance import RelevanceScores, SelectionConfig, SelectionMask, relevance_mi, relevance_model, select_features
from .transform import AnonymizationParams, anonymize, assemble_random_set, weighted_mean_transform

__version__ = "0.1.0"

__all__ = [
    "AnonError",
    "AnonymizationParams",
    "Attack",
    "ClassifierModel",
    "ConfigError",
    "DataError",
    "Dataset",
    "EvaluationReport",
    "ForestConfig",
    "RelevanceScores",
    "Schema",
    "SelectionConfig",
    "SelectionMask",
    "SynthConfig",
    "UtilityWeights",
    "anonymize",
    "assemble_random_set",
    "evaluate",
    "generate_synthetic",
    "load_csv",
    "load_schema",
    "relevance_mi",
    "relevance_model",
    "save_csv",
    "select_features",
    "split",
    "train",
    "weighted_mean_transform",
]
