"""Two-stage single-image snow removal.

Stage one estimates a per-pixel snow translucency mask and a snow color map,
then recovers the scene behind semi-transparent snow in closed form. Stage
two predicts a signed residual that repairs regions hidden by opaque snow.
Everything runs on a small numpy-backed tensor engine with reverse-mode
autodiff; no deep-learning framework is involved.
"""

from .descriptor import DescriptorConfig, ModelWeights
from .heads import HeadConfig
from .losses import LossBreakdown, LossConfig
from .model import ModelConfig, config_from_weights, forward_full, init_model
from .pipeline import TrainConfig, evaluate, gradcheck, infer, train
from .snow import RecoveryOutput, SnowTriplet
from .tensor import Tensor, no_grad

__all__ = [
    "DescriptorConfig",
    "HeadConfig",
    "LossBreakdown",
    "LossConfig",
    "ModelConfig",
    "ModelWeights",
    "RecoveryOutput",
    "SnowTriplet",
    "Tensor",
    "TrainConfig",
    "config_from_weights",
    "evaluate",
    "forward_full",
    "gradcheck",
    "infer",
    "init_model",
    "no_grad",
    "train",
]

__version__ = "0.1.0"
