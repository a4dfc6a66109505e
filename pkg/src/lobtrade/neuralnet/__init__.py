"""Compact conv + inception + LSTM classifier with MC-dropout inference.

Pure-numpy implementation with an exact hand-written backward pass, so
gradients can be verified against finite differences and results are
bit-reproducible from the artifact PRNG alone.
"""

from .model import (
    CLASS_ORDER,
    ConvBlockSpec,
    InceptionSpec,
    ModelConfig,
    NonFiniteError,
    ShapeError,
    Weights,
    class_to_label,
    dropout_masks,
    forward,
    forward_batch,
    init_weights,
    label_to_class,
    loss_and_grad,
    mc_forward,
    predict_proba,
    stochastic_forward_trace,
)
from .train import DivergenceError, OptimizerConfig, TrainConfig, TrainResult, train
from .weights_io import WeightsFormatError, load_weights, save_weights

__all__ = [
    "CLASS_ORDER",
    "ConvBlockSpec",
    "DivergenceError",
    "InceptionSpec",
    "ModelConfig",
    "NonFiniteError",
    "OptimizerConfig",
    "ShapeError",
    "TrainConfig",
    "TrainResult",
    "Weights",
    "WeightsFormatError",
    "class_to_label",
    "dropout_masks",
    "forward",
    "forward_batch",
    "init_weights",
    "label_to_class",
    "load_weights",
    "loss_and_grad",
    "mc_forward",
    "predict_proba",
    "save_weights",
    "stochastic_forward_trace",
    "train",
]
