"""Minimal tensor library with reverse-mode autodiff."""

from coips.engine.functional import (
    LayerParams,
    concat,
    conv2d,
    flatten,
    instance_norm,
    leaky_relu,
    linear,
    maxpool2d,
    pick,
    relu,
    softmax,
    upsample2x,
)
from coips.engine.optim import (
    ADAM,
    SGD_NESTEROV,
    CosineAnnealing,
    Optimizer,
    OptimizerState,
    Poly,
    adam_step,
    cosine_cyclic,
    lr_schedule,
    sgd_nesterov_step,
)
from coips.engine.tensor import Tensor, clip_min, is_grad_enabled, log, no_grad

__all__ = [
    "ADAM",
    "SGD_NESTEROV",
    "CosineAnnealing",
    "LayerParams",
    "Optimizer",
    "OptimizerState",
    "Poly",
    "Tensor",
    "adam_step",
    "clip_min",
    "concat",
    "conv2d",
    "cosine_cyclic",
    "flatten",
    "instance_norm",
    "is_grad_enabled",
    "leaky_relu",
    "linear",
    "log",
    "lr_schedule",
    "maxpool2d",
    "no_grad",
    "pick",
    "relu",
    "sgd_nesterov_step",
    "softmax",
    "upsample2x",
]
