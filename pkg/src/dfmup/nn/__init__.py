"""From-scratch numpy 3D convolutional surrogate."""
from .layers import batchnorm, conv3d_forward, maxpool3d
from .model import (Network, NetworkConfig, backward, batchnorm_parameter_count, desk_config, forward,
                    layer_shapes, full_config, parameter_count)
from .optim import Adam, AdamState, PlateauScheduler, adam_step
from .train import TrainConfig, TrainResult, train
from .io import load_weights, save_weights
from .predict import SurrogateModel, predict_batch, predict_equivalent

__all__ = [
    "batchnorm", "conv3d_forward", "maxpool3d", "Network", "NetworkConfig", "backward",
    "batchnorm_parameter_count", "desk_config", "forward", "layer_shapes", "full_config",
    "parameter_count", "Adam", "AdamState", "PlateauScheduler", "adam_step", "TrainConfig",
    "TrainResult", "train", "load_weights", "save_weights", "SurrogateModel", "predict_batch",
    "predict_equivalent",
]
