"""Corpus handling, training, inference, evaluation and the command line."""
from .config import ConfigError, TrainConfig, load_config, save_config
from .evaluate import ModelSource, NNSource, compare, evaluate, load_report, write_rigid_deformed
from .folds import Fold, FoldSpec, TooFewPatients, load_folds, make_folds, pair_id, pair_scheduler
from .infer import InferenceResult, infer, load_model
from .manifest import DatasetManifest, ManifestError, load_manifest
from .preprocess import preprocess
from .synth import synth_generate
from .train import NaNAbort, train, train_fold

__all__ = [
    "ConfigError", "DatasetManifest", "Fold", "FoldSpec", "InferenceResult", "ManifestError",
    "ModelSource", "NNSource", "NaNAbort", "TooFewPatients", "TrainConfig", "compare", "evaluate",
    "infer", "load_config", "load_folds", "load_manifest", "load_model", "load_report", "make_folds",
    "pair_id", "pair_scheduler", "preprocess", "save_config", "synth_generate", "train", "train_fold",
    "write_rigid_deformed",
]
