from .model import LayerSpec, ModelConfig, StageKind, stage_forward
from .weights import WeightsBundle, load_weights, save_weights

__all__ = [
    "LayerSpec",
    "ModelConfig",
    "StageKind",
    "stage_forward",
    "WeightsBundle",
    "load_weights",
    "save_weights",
]
