"""ROSE: a from-scratch, numpy-only echo-robust speech-enhancement network.

The package bundles its own reverse-mode autodiff (:mod:`rose_se.tensor`),
the DSP front end, the U-Net model with channel/sequence attention and
attention-based skip fusion, the multi-objective loss, corpus synthesis,
training, metrics and a command-line tool.
"""
from .audio_io import AudioClip, read_wav, write_wav
from .dsp import StftConfig
from .echo_sim import EchoParams, MixParams, simulate_echo, synth_corpus
from .errors import (ConfigError, ContractError, DegenerateInputError, DimensionError, FormatError,
                     LengthError, NumericAbort, RoseError)
from .losses import LossConfig, total_loss
from .model import ModelConfig, ModelWeights, rose_forward
from .tensor import Tensor
from .trainer import TrainConfig, evaluate, enhance, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "AudioClip", "read_wav", "write_wav", "StftConfig", "EchoParams", "MixParams", "simulate_echo",
    "synth_corpus", "ConfigError", "ContractError", "DegenerateInputError", "DimensionError", "FormatError",
    "LengthError", "NumericAbort", "RoseError", "LossConfig", "total_loss", "ModelConfig", "ModelWeights",
    "rose_forward", "Tensor", "TrainConfig", "evaluate", "enhance", "load_checkpoint", "save_checkpoint",
    "train",
]
