from .checkpoint import Checkpoint, TransferReport, identity_map, load_partial
from .layers import (
    JointParams,
    LstmParams,
    joint_forward,
    lstm_step,
    softmax_with_temperature,
    time_conv_reduce,
)
from .models import CtcModel, DecoderConfig, EncoderConfig, LmModel, RnntModel, build_model

__all__ = [
    "Checkpoint",
    "CtcModel",
    "DecoderConfig",
    "EncoderConfig",
    "JointParams",
    "LmModel",
    "LstmParams",
    "RnntModel",
    "TransferReport",
    "build_model",
    "identity_map",
    "joint_forward",
    "load_partial",
    "lstm_step",
    "softmax_with_temperature",
    "time_conv_reduce",
]
