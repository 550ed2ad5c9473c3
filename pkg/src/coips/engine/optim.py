"""SGD with Nesterov momentum, Adam, and the two learning-rate schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Literal, Sequence, Union

import numpy as np

from coips.errors import ConfigError, DimensionError, NumericError, RangeError
from coips.engine.tensor import Tensor

SGD_NESTEROV = "SgdNesterov"
ADAM = "Adam"


@dataclass
class OptimizerState:
    kind: Literal["SgdNesterov", "Adam"]
    lr: float
    momentum: float = 0.99
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    buffers: List[List[np.ndarray]] = field(default_factory=list)
    step_count: int = 0

    def __post_init__(self):
        if self.kind not in (SGD_NESTEROV, ADAM):
            raise ConfigError(f"unknown optimizer kind {self.kind!r}")
        # lr == 0 is allowed: it freezes the parameters
        if not self.lr >= 0:
            raise ConfigError(f"learning rate must be non-negative, got {self.lr}")


def _check(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptimizerState, n_buf: int):
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.shape}")
    if not state.buffers:
        state.buffers = [[np.zeros_like(p) for p in params] for _ in range(n_buf)]
    for buf in state.buffers:
        if len(buf) != len(params) or any(b.shape != p.shape for b, p in zip(buf, params)):
            raise DimensionError("optimizer buffers do not match parameter shapes")


def sgd_nesterov_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptimizerState):
    """In place: ``v <- mu*v - lr*g``; ``p <- p + mu*v - lr*g``."""
    if state.kind != SGD_NESTEROV:
        raise ConfigError(f"state is for {state.kind}, not {SGD_NESTEROV}")
    _check(params, grads, state, 1)
    mu, lr = state.momentum, state.lr
    for p, g, v in zip(params, grads, state.buffers[0]):
        v *= mu
        v -= lr * g
        p += mu * v - lr * g
    state.step_count += 1
    return params


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptimizerState):
    """In place bias-corrected Adam update."""
    if state.kind != ADAM:
        raise ConfigError(f"state is for {state.kind}, not {ADAM}")
    _check(params, grads, state, 2)
    b1, b2 = state.betas
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.buffers[0], state.buffers[1]):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


class Optimizer:
    """Binds an :class:`OptimizerState` to a list of parameter tensors."""

    def __init__(self, params: Sequence[Tensor], state: OptimizerState):
        self.params = list(params)
        self.state = state

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = value

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        arrays = [p.data for p in self.params]
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        if self.state.kind == ADAM:
            adam_step(arrays, grads, self.state)
        else:
            sgd_nesterov_step(arrays, grads, self.state)
        for p in arrays:
            if not np.isfinite(p).all():
                raise NumericError("optimizer step produced non-finite parameters")


# ---------------------------------------------------------------------- schedules


@dataclass(frozen=True)
class CosineAnnealing:
    t_max: int
    lr_min: float = 0.0


@dataclass(frozen=True)
class Poly:
    total: int
    exponent: float = 0.9


Schedule = Union[CosineAnnealing, Poly]


def lr_schedule(kind: Schedule, lr0: float, t: float) -> float:
    if lr0 <= 0:
        raise ConfigError(f"initial learning rate must be positive, got {lr0}")
    if isinstance(kind, CosineAnnealing):
        horizon = kind.t_max
    elif isinstance(kind, Poly):
        horizon = kind.total
    else:
        raise ConfigError(f"unknown schedule {kind!r}")
    if horizon <= 0:
        raise ConfigError(f"schedule horizon must be positive, got {horizon}")
    if t < 0 or t > horizon:
        raise RangeError(f"t={t} outside [0, {horizon}]")
    if isinstance(kind, CosineAnnealing):
        return kind.lr_min + 0.5 * (lr0 - kind.lr_min) * (1.0 + math.cos(math.pi * t / kind.t_max))
    return lr0 * (1.0 - t / kind.total) ** kind.exponent


def cosine_cyclic(kind: CosineAnnealing, lr0: float, epoch: int) -> float:
    """Cosine schedule continued past ``t_max`` by reflection (period ``2*t_max``)."""
    phase = epoch % (2 * kind.t_max)
    if phase > kind.t_max:
        phase = 2 * kind.t_max - phase
    return lr_schedule(kind, lr0, phase)
