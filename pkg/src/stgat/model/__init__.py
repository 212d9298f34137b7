from .layers import focal_loss, gat_layer, risk_head, spatial_encode, temporal_encode
from .snapshots import GraphSnapshot, History, build_history, build_snapshot, build_snapshots
from .stgat import (SEEDS, STGAT, Ablation, ModelConfig, ModelParams, QuarterPrediction, TrainConfig,
                    predict)
from .training import TrainLog, train

__all__ = [
    "Ablation", "GraphSnapshot", "History", "ModelConfig", "ModelParams", "QuarterPrediction", "SEEDS",
    "STGAT", "TrainConfig", "TrainLog", "build_history", "build_snapshot", "build_snapshots", "focal_loss",
    "gat_layer", "predict", "risk_head", "spatial_encode", "temporal_encode", "train",
]
