"""Multi-label fundus classifier with dilated-kernel channel attention.

Pure numpy: a small reverse-mode autodiff core, the attention and
squeeze-excitation blocks, training, data balancing, metrics and Grad-CAM.
"""

from .attention import ConfigError, DkcConfig, channel_shuffle, dkc_forward
from .metrics import MetricsReport, evaluate
from .model import DKCNet, ModelConfig, TrainConfig, bce_loss, predict, train
from .se import SeConfig, se_forward
from .tensor import DimensionError, StateError, Tensor

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DKCNet",
    "DimensionError",
    "DkcConfig",
    "MetricsReport",
    "ModelConfig",
    "SeConfig",
    "StateError",
    "Tensor",
    "TrainConfig",
    "bce_loss",
    "channel_shuffle",
    "dkc_forward",
    "evaluate",
    "predict",
    "se_forward",
    "train",
]
