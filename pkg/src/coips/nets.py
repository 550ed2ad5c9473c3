"""Declarative network specs, builders, and checkpoint helpers.

A spec is plain JSON. Two kinds exist:

``{"kind": "classifier", "input_shape": [C, H, W], "seed": int, "layers": [...]}``
    A sequential CNN. Layer entries are ``{"type": "conv", "out": n, "kernel": 3}``,
    ``{"type": "instance_norm"}``, ``{"type": "relu"}``, ``{"type": "leaky_relu", "slope": s}``,
    ``{"type": "maxpool", "window": 2}``, ``{"type": "flatten"}`` and
    ``{"type": "linear", "out": n, "zero_init": false}``.

``{"kind": "unet", ...}``
    The fields of :class:`coips.segmenter.UNetConfig`.
"""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np

from coips.engine import checkpoint
from coips.engine.layers import (
    Conv2d,
    Flatten,
    InstanceNorm2d,
    LeakyReLU,
    Linear,
    MaxPool2d,
    Module,
    ReLU,
    Sequential,
)
from coips.errors import CheckpointError, ConfigError

NetSpec = Dict[str, Any]


def default_classifier_spec(input_size: int = 64, channels=(8, 16, 32, 32), seed: int = 0) -> NetSpec:
    layers: List[dict] = []
    for c in channels:
        layers += [
            {"type": "conv", "out": c, "kernel": 3},
            {"type": "instance_norm"},
            {"type": "relu"},
            {"type": "maxpool", "window": 2},
        ]
    layers += [{"type": "flatten"}, {"type": "linear", "out": 3}]
    return {"kind": "classifier", "input_shape": [1, input_size, input_size], "seed": seed, "layers": layers}


def infer_shapes(spec: NetSpec) -> List[Tuple[int, ...]]:
    """Per-layer output shapes (without batch axis); raises ConfigError on inconsistency."""
    try:
        shape: Tuple[int, ...] = tuple(int(d) for d in spec["input_shape"])
        layers = spec["layers"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"classifier spec missing/invalid field: {exc}") from None
    if len(shape) != 3 or min(shape) < 1:
        raise ConfigError(f"input_shape must be [C, H, W], got {spec['input_shape']}")
    shapes = []
    for i, layer in enumerate(layers):
        kind = layer.get("type")
        where = f"layer {i} ({kind})"
        if kind == "conv":
            if len(shape) != 3:
                raise ConfigError(f"{where}: needs a [C,H,W] input, got {shape}")
            k = int(layer.get("kernel", 3))
            s = int(layer.get("stride", 1))
            p = int(layer.get("padding", k // 2))
            c, h, w = shape
            if (h + 2 * p - k) % s or (w + 2 * p - k) % s or h + 2 * p < k:
                raise ConfigError(f"{where}: kernel {k}/stride {s} does not tile {h}x{w}")
            shape = (int(layer["out"]), (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1)
        elif kind == "maxpool":
            win = int(layer.get("window", 2))
            s = int(layer.get("stride", win))
            c, h, w = shape
            if h < win or w < win or (h - win) % s or (w - win) % s:
                raise ConfigError(f"{where}: window {win}/stride {s} does not tile {h}x{w}")
            shape = (c, (h - win) // s + 1, (w - win) // s + 1)
        elif kind in ("instance_norm", "relu", "leaky_relu"):
            if kind == "instance_norm" and len(shape) != 3:
                raise ConfigError(f"{where}: needs a [C,H,W] input")
        elif kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif kind == "linear":
            if len(shape) != 1:
                raise ConfigError(f"{where}: needs a flat input, add a flatten layer")
            shape = (int(layer["out"]),)
        else:
            raise ConfigError(f"{where}: unknown layer type")
        shapes.append(shape)
    return shapes


def build_sequential(spec: NetSpec) -> Sequential:
    shapes = infer_shapes(spec)
    rng = np.random.default_rng(int(spec.get("seed", 0)))
    prev = tuple(spec["input_shape"])
    modules: List[Module] = []
    for i, (layer, shape) in enumerate(zip(spec["layers"], shapes)):
        kind = layer["type"]
        name = f"{i}.{kind}"
        if kind == "conv":
            k = int(layer.get("kernel", 3))
            modules.append(Conv2d(name, prev[0], shape[0], k, int(layer.get("stride", 1)),
                                  int(layer.get("padding", k // 2)), rng))
        elif kind == "instance_norm":
            modules.append(InstanceNorm2d(name, prev[0]))
        elif kind == "relu":
            modules.append(ReLU())
        elif kind == "leaky_relu":
            modules.append(LeakyReLU(float(layer.get("slope", 0.01))))
        elif kind == "maxpool":
            modules.append(MaxPool2d(int(layer.get("window", 2)), int(layer.get("stride", layer.get("window", 2)))))
        elif kind == "flatten":
            modules.append(Flatten())
        elif kind == "linear":
            modules.append(Linear(name, prev[0], shape[0], rng, bool(layer.get("zero_init", False))))
        prev = shape
    return Sequential(modules)


def count_parameters(spec: NetSpec) -> int:
    """Closed-form parameter count of a sequential spec (independent of building it)."""
    shapes = infer_shapes(spec)
    prev = tuple(spec["input_shape"])
    total = 0
    for layer, shape in zip(spec["layers"], shapes):
        kind = layer["type"]
        if kind == "conv":
            k = int(layer.get("kernel", 3))
            total += shape[0] * prev[0] * k * k + shape[0]
        elif kind == "instance_norm":
            total += 2 * prev[0]
        elif kind == "linear":
            total += shape[0] * prev[0] + shape[0]
        prev = shape
    return total


def build_network(spec: NetSpec) -> Module:
    kind = spec.get("kind")
    if kind == "classifier":
        return build_sequential(spec)
    if kind == "unet":
        from coips.segmenter import UNetConfig, build_unet

        return build_unet(UNetConfig.from_dict(spec))
    raise ConfigError(f"unknown network kind {kind!r}")


def save_network(path: Union[str, Path], spec: NetSpec, net: Module, meta: Dict[str, Any] | None = None) -> None:
    checkpoint.save(path, {"net": spec, "meta": meta or {}}, net.state_dict())


def network_to_bytes(spec: NetSpec, net: Module, meta: Dict[str, Any] | None = None) -> bytes:
    return checkpoint.dumps({"net": spec, "meta": meta or {}}, net.state_dict())


def load_network(path_or_bytes: Union[str, Path, bytes]) -> Tuple[Module, NetSpec, Dict[str, Any]]:
    if isinstance(path_or_bytes, (bytes, bytearray)):
        header, params = checkpoint.loads(bytes(path_or_bytes))
    else:
        header, params = checkpoint.load(path_or_bytes)
    if "net" not in header:
        raise CheckpointError("checkpoint header has no network spec")
    spec = header["net"]
    try:
        net = build_network(copy.deepcopy(spec))
        net.load_state_dict(params)
    except (ConfigError, ValueError) as exc:
        raise CheckpointError(f"checkpoint does not match its spec: {exc}") from None
    return net, spec, header.get("meta", {})
