"""Sparse water-quality tensor imputation: CP baseline and a nonlinear
temporal-convolution + CNN model, with ingestion, training, and evaluation."""

from .checkpoint import Checkpoint, checkpoint_from_training, load_checkpoint, save_checkpoint
from .cp import cp_grads, cp_loss, cp_predict_batch, cp_train, cpd_predict
from .data import (Entries, Scaler, SparseTensor, Split, SplitSpec, export_csv,
                   fit_scaler, ingest_csv, normalize, split_entries)
from .errors import (CheckpointError, ConfigError, DataError, DivergenceError,
                     WqImputeError)
from .kernels import BACKEND, get_backend
from .metrics import EvalReport, SynthOracle, score, synth_generate
from .model import (FactorModel, InteractionCNN, NlrModel, TemporalEncoder,
                    cnn_forward, init_factor_model, init_nlr_model, model_predict,
                    outer3, temporal_encode)
from .training import (GradcheckReport, TrainConfig, TrainTrace, gradcheck,
                       nlr_backward, nlr_loss, train_nlr)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Checkpoint", "CheckpointError", "ConfigError", "DataError",
    "DivergenceError", "Entries", "EvalReport", "FactorModel", "GradcheckReport",
    "InteractionCNN", "NlrModel", "Scaler", "SparseTensor", "Split", "SplitSpec",
    "SynthOracle", "TemporalEncoder", "TrainConfig", "TrainTrace", "WqImputeError",
    "checkpoint_from_training", "cnn_forward", "cp_grads", "cp_loss",
    "cp_predict_batch", "cp_train", "cpd_predict", "export_csv", "fit_scaler",
    "get_backend", "gradcheck", "ingest_csv", "init_factor_model", "init_nlr_model",
    "load_checkpoint", "model_predict", "nlr_backward", "nlr_loss", "normalize",
    "outer3", "save_checkpoint", "score", "split_entries", "synth_generate",
    "temporal_encode", "train_nlr",
]
