"""Losses, semi-supervised objectives and the two training stages."""

from .data import ClipSet, FeatureExtractor, normalize
from .losses import AflConfig, afl_loss, bce_loss, consistency_loss, mse
from .ssl import SslConfig, ict_term, warmup_coefficient
from .trainer import (StageData, StageRecipe, StageTrainer, TrainConfig, TrainResult, macro_f1,
                      micro_f1, predict, train_stage1, train_stage2)

__all__ = [
    "AflConfig", "ClipSet", "FeatureExtractor", "SslConfig", "StageData", "StageRecipe",
    "StageTrainer", "TrainConfig", "TrainResult", "afl_loss", "bce_loss", "consistency_loss",
    "ict_term", "macro_f1", "micro_f1", "mse", "normalize", "predict", "train_stage1",
    "train_stage2", "warmup_coefficient",
]
