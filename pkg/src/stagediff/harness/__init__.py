"""Synthetic data, the training loop, evaluation and checkpoint I/O."""
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import TrainConfig, load_config
from .data import Dataset, gen_dataset
from .evaluate import evaluate, log_spectral_distance, lsd_bands, validation_loss
from .train import DivergenceError, RunLog, Trainer, train

__all__ = [
    "Checkpoint", "CheckpointError", "Dataset", "DivergenceError", "RunLog", "TrainConfig",
    "Trainer", "evaluate", "gen_dataset", "load_checkpoint", "load_config",
    "log_spectral_distance", "lsd_bands", "save_checkpoint", "train", "validation_loss",
]
