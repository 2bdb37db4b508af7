from .config import TrainConfig, MODES, MODE_UPDATED_NETS
from .system import CmedlSystem
from .batches import UnpairedBatch, BatchSchedule, samples_to_tensors
from .steps import train_step, train_step_cmedl, train_step_drit, ImageBuffer
from .loop import train, infer, infer_probabilities, validation_loss, EarlyStopper

__all__ = [
    "TrainConfig",
    "MODES",
    "MODE_UPDATED_NETS",
    "CmedlSystem",
    "UnpairedBatch",
    "BatchSchedule",
    "samples_to_tensors",
    "train_step",
    "train_step_cmedl",
    "train_step_drit",
    "ImageBuffer",
    "train",
    "infer",
    "infer_probabilities",
    "validation_loss",
    "EarlyStopper",
]
