from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ModelConfig
from .masking import PatchMask, apply_mask, sample_patch_mask
from .network import SkipCAE, anomaly_score, anomaly_scores
from .train import TrainConfig, TrainReport, train

__all__ = [
    "Checkpoint", "CheckpointError", "load_checkpoint", "save_checkpoint",
    "ModelConfig", "PatchMask", "apply_mask", "sample_patch_mask",
    "SkipCAE", "anomaly_score", "anomaly_scores",
    "TrainConfig", "TrainReport", "train",
]
