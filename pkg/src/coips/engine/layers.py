"""Parameterised layers and a small module system on top of :mod:`functional`."""

from __future__ import annotations

from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from coips.errors import ConfigError, DimensionError
from coips.engine import functional as F
from coips.engine.functional import LayerParams
from coips.engine.tensor import Tensor

DTYPE = np.float32


def he_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(DTYPE)


class Module:
    """Base class: subclasses fill ``self.params`` and/or ``self.children``."""

    def __init__(self) -> None:
        self.params: List[LayerParams] = []
        self.children: List[Module] = []

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def layer_params(self) -> List[LayerParams]:
        out = list(self.params)
        for child in self.children:
            out.extend(child.layer_params())
        return out

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        named = [item for lp in self.layer_params() for item in lp.tensors()]
        seen = set()
        for name, _ in named:
            if name in seen:
                raise ConfigError(f"duplicate parameter name {name!r}")
            seen.add(name)
        return named

    def parameters(self) -> List[Tensor]:
        return [t for _, t in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        named = dict(self.named_parameters())
        missing = set(named) - set(state)
        extra = set(state) - set(named)
        if missing or extra:
            raise DimensionError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, t in named.items():
            arr = np.asarray(state[name])
            if arr.shape != t.shape:
                raise DimensionError(f"{name}: shape {arr.shape} != {t.shape}")
            t.data = arr.astype(t.dtype, copy=True)


class Conv2d(Module):
    def __init__(self, name: str, c_in: int, c_out: int, kernel: int = 3, stride: int = 1,
                 padding: Optional[int] = None, rng: Optional[np.random.Generator] = None,
                 bias: bool = True):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        fan_in = c_in * kernel * kernel
        weight = Tensor(he_uniform(rng, (c_out, c_in, kernel, kernel), fan_in), requires_grad=True)
        b = Tensor(np.zeros(c_out, DTYPE), requires_grad=True) if bias else None
        self.lp = LayerParams(name, weight, b)
        self.params = [self.lp]

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.lp, self.stride, self.padding)


class InstanceNorm2d(Module):
    def __init__(self, name: str, channels: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.lp = LayerParams(
            name,
            Tensor(np.ones(channels, DTYPE), requires_grad=True),
            Tensor(np.zeros(channels, DTYPE), requires_grad=True),
        )
        self.params = [self.lp]

    def forward(self, x: Tensor) -> Tensor:
        return F.instance_norm(x, self.lp, self.eps)


class Linear(Module):
    def __init__(self, name: str, f_in: int, f_out: int, rng: Optional[np.random.Generator] = None,
                 zero_init: bool = False):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        w = np.zeros((f_out, f_in), DTYPE) if zero_init else he_uniform(rng, (f_out, f_in), f_in)
        self.lp = LayerParams(
            name,
            Tensor(w, requires_grad=True),
            Tensor(np.zeros(f_out, DTYPE), requires_grad=True),
        )
        self.params = [self.lp]

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.lp)


class ReLU(Module):
    def forward(self, x: Tensor) -> Tensor:
        return F.relu(x)


class LeakyReLU(Module):
    def __init__(self, slope: float = 0.01):
        super().__init__()
        self.slope = slope

    def forward(self, x: Tensor) -> Tensor:
        return F.leaky_relu(x, self.slope)


class MaxPool2d(Module):
    def __init__(self, window: int = 2, stride: Optional[int] = None):
        super().__init__()
        self.window = window
        self.stride = stride or window

    def forward(self, x: Tensor) -> Tensor:
        return F.maxpool2d(x, self.window, self.stride)


class Upsample2x(Module):
    def forward(self, x: Tensor) -> Tensor:
        return F.upsample2x(x)


class Flatten(Module):
    def forward(self, x: Tensor) -> Tensor:
        return F.flatten(x)


class Sequential(Module):
    def __init__(self, layers: Iterable[Module]):
        super().__init__()
        self.children = list(layers)

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.children:
            x = layer(x)
        return x
