"""Trainable scaffolding for small rotation-equivariant voxel classifiers."""
from .checkpoint import load_checkpoint, save_checkpoint
from .graph import (
    DEFAULT_CHANNELS,
    DEFAULT_LAYERS,
    CubeNet,
    GraphError,
    LayerGraph,
    backward,
    forward,
    predict_rotation_averaged,
)
from .init import he_init, weight_noise
from .layers import (
    avg_pool2,
    batch_norm,
    dense,
    global_spatial_pool,
    group_pool,
    relu,
    softmax,
    softmax_xent,
)
from .optim import AdamState, TrainConfig, adam_step, train

__all__ = [
    "AdamState", "CubeNet", "DEFAULT_CHANNELS", "DEFAULT_LAYERS", "GraphError", "LayerGraph",
    "TrainConfig", "adam_step", "avg_pool2", "backward", "batch_norm", "dense", "forward",
    "global_spatial_pool", "group_pool", "he_init", "load_checkpoint", "predict_rotation_averaged",
    "relu", "save_checkpoint", "softmax", "softmax_xent", "train", "weight_noise",
]
