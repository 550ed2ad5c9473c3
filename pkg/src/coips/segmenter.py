"""U-shaped encoder-decoder for FAZ segmentation, Dice+CE loss, k-fold training, inference."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from coips.dataset import batches, load_image, load_mask
from coips.engine import (
    SGD_NESTEROV,
    Optimizer,
    OptimizerState,
    Poly,
    Tensor,
    clip_min,
    concat,
    log,
    lr_schedule,
    no_grad,
    softmax,
    upsample2x,
)
from coips.engine.layers import Conv2d, InstanceNorm2d, MaxPool2d, Module, ReLU, Sequential
from coips.errors import ConfigError, DimensionError, NumericError
from coips.imaging import FazMask, ImageTensor, preprocess, resize_nearest
from coips.labels import Quality
from coips.manifest import ManifestRow
from coips.nets import load_network, network_to_bytes
from coips.qa import format_log
from coips.splits import kfold

log_ = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class UNetConfig:
    patch: int = 64
    poolings: int = 4
    kernel: int = 3
    base_channels: int = 8
    growth: int = 2
    max_channels: int = 128
    lam: float = 0.5  # CE weight in the combined loss
    seed: int = 0

    def __post_init__(self):
        if self.poolings < 0 or self.patch < 1 or self.patch % (2**self.poolings):
            raise ConfigError(f"patch {self.patch} is not divisible by 2^{self.poolings}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError(f"kernel must be a positive odd integer, got {self.kernel}")
        if self.base_channels < 1 or self.growth < 1 or self.max_channels < self.base_channels:
            raise ConfigError("invalid channel settings")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}")

    def channels(self) -> List[int]:
        return [min(self.base_channels * self.growth**i, self.max_channels) for i in range(self.poolings + 1)]

    @property
    def bottleneck(self) -> Tuple[int, int, int]:
        side = self.patch // 2**self.poolings
        return (self.channels()[-1], side, side)

    @classmethod
    def from_dict(cls, data: dict) -> "UNetConfig":
        fields = {k: v for k, v in data.items() if k != "kind"}
        unknown = set(fields) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown unet keys: {sorted(unknown)}")
        return cls(**fields)

    def to_dict(self) -> dict:
        return {"kind": "unet", **asdict(self)}


def _block(name: str, c_in: int, c_out: int, k: int, rng: np.random.Generator) -> Sequential:
    return Sequential([
        Conv2d(f"{name}.conv1", c_in, c_out, k, rng=rng),
        InstanceNorm2d(f"{name}.norm1", c_out),
        ReLU(),
        Conv2d(f"{name}.conv2", c_out, c_out, k, rng=rng),
        InstanceNorm2d(f"{name}.norm2", c_out),
        ReLU(),
    ])


class UNet(Module):
    def __init__(self, cfg: UNetConfig, in_channels: int = 1):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        ch = cfg.channels()
        k = cfg.kernel
        self.encoder = [_block(f"enc{i}", in_channels if i == 0 else ch[i - 1], ch[i], k, rng)
                        for i in range(cfg.poolings + 1)]
        self.pool = MaxPool2d(2)
        self.up_convs: List[Conv2d] = []
        self.decoder: List[Sequential] = []
        for i in reversed(range(cfg.poolings)):
            self.up_convs.append(Conv2d(f"up{i}", ch[i + 1], ch[i], k, rng=rng))
            self.decoder.append(_block(f"dec{i}", 2 * ch[i], ch[i], k, rng))
        self.head = Conv2d("head", ch[0], 2, 1, rng=rng)
        self.children = [*self.encoder, *self.up_convs, *self.decoder, self.head]
        self.bottleneck_shape = cfg.bottleneck

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[2:] != (self.cfg.patch, self.cfg.patch):
            raise DimensionError(f"expected [N, C, {self.cfg.patch}, {self.cfg.patch}], got {x.shape}")
        skips = []
        for i, block in enumerate(self.encoder):
            x = block(x)
            if i < self.cfg.poolings:
                skips.append(x)
                x = self.pool(x)
        for up, block, skip in zip(self.up_convs, self.decoder, reversed(skips)):
            x = up(upsample2x(x))
            x = block(concat([skip, x], axis=1))
        return self.head(x)


def build_unet(cfg: UNetConfig) -> UNet:
    return UNet(cfg)


# ---------------------------------------------------------------------- losses and Dice


def _pixels(m) -> np.ndarray:
    return m.pixels if isinstance(m, FazMask) else np.asarray(m)


def dice_coefficient(sr: Union[FazMask, np.ndarray], gt: Union[FazMask, np.ndarray]) -> float:
    """``(2|SR & GT| + 1) / (|SR| + |GT| + 1)``; ``sr`` may be a probability map."""
    a = _pixels(sr).astype(np.float64)
    b = _pixels(gt).astype(np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return float((2.0 * (a * b).sum() + 1.0) / (a.sum() + b.sum() + 1.0))


def _onehot(gt: np.ndarray, dtype) -> np.ndarray:
    g = gt.astype(dtype)
    return np.stack([1 - g, g], axis=1)


def combined_loss(logits: Tensor, gt, lam: float = 0.5) -> Tensor:
    """``lam * CE + (1 - lam) * (1 - softDice)`` on [2,H,W] or [N,2,H,W] logits.

    CE is the mean over all pixels; the soft Dice is the smoothed Dice of the
    foreground probability map, computed per sample and averaged.
    """
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must lie in [0, 1], got {lam}")
    single = logits.ndim == 3
    if single:
        logits = logits.reshape(1, *logits.shape)
    g = np.asarray(_pixels(gt) if not isinstance(gt, (list, tuple)) else np.stack([_pixels(m) for m in gt]))
    if single:
        g = g[None]
    if logits.ndim != 4 or logits.shape[1] != 2 or g.shape != (logits.shape[0],) + logits.shape[2:]:
        raise DimensionError(f"logits {logits.shape} incompatible with masks {g.shape}")
    onehot = _onehot(g, logits.dtype)
    probs = softmax(logits, axis=1)
    terms = []
    if lam > 0:
        p_true = (probs * onehot).sum(axis=1)
        terms.append(-log(clip_min(p_true, PROB_FLOOR)).mean() * lam)
    if lam < 1:
        fg = (probs * np.array([0, 1], logits.dtype).reshape(1, 2, 1, 1)).sum(axis=1)
        gsum = g.reshape(len(g), -1).sum(axis=1).astype(logits.dtype)
        inter = (fg * onehot[:, 1]).sum(axis=(1, 2))
        dice = (inter * 2.0 + 1.0) / (fg.sum(axis=(1, 2)) + (gsum + 1.0))
        terms.append((1.0 - dice.mean()) * (1.0 - lam))
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


# ---------------------------------------------------------------------- inference


def mask_from_logits(logits: np.ndarray) -> np.ndarray:
    """Per-pixel argmax over [2, H, W]; ties go to background."""
    if logits.ndim != 3 or logits.shape[0] != 2:
        raise DimensionError(f"expected [2, H, W] logits, got {logits.shape}")
    return (logits[1] > logits[0]).astype(np.uint8)


def predict_mask(net: UNet, image: np.ndarray, out_shape: Optional[Tuple[int, int]] = None,
                 source_id: str = "") -> FazMask:
    """Segment one preprocessed [C, P, P] image; resize back to ``out_shape`` by nearest neighbour."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3:
        raise DimensionError(f"expected a preprocessed [C, H, W] image, got {image.shape}")
    with no_grad():
        logits = net(Tensor(image[None])).data[0]
    mask = mask_from_logits(logits)
    if out_shape is not None and tuple(out_shape) != mask.shape:
        mask = resize_nearest(mask, *out_shape)
    return FazMask(mask, source_id)


def segment_image(net: UNet, img: ImageTensor) -> FazMask:
    return predict_mask(net, preprocess(img, net.cfg.patch), (img.height, img.width), img.source_id)


# ---------------------------------------------------------------------- training


@dataclass
class SegTrainConfig:
    epochs: int = 20
    batch_size: int = 8
    lr: float = 0.01
    momentum: float = 0.99
    poly_exponent: float = 0.9
    grad_clip: Optional[float] = 12.0  # global gradient-norm cap; None disables
    folds: int = 5
    patience: int = 20
    seed: int = 42
    flip_p: float = 0.5
    train_split: str = "train"
    unet: Dict = field(default_factory=dict)  # UNetConfig overrides

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ConfigError("epochs, batch_size and patience must be positive")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ConfigError("grad_clip must be positive or null")
        self.unet_config(0)

    def unet_config(self, fold: int) -> UNetConfig:
        base = {k: v for k, v in self.unet.items() if k != "kind"}
        base.setdefault("seed", self.seed)
        base["seed"] = int(base["seed"]) * 1000 + fold
        return UNetConfig.from_dict(base)

    @classmethod
    def from_dict(cls, data: dict) -> "SegTrainConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train_seg keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SegTrainResult:
    checkpoint: bytes
    log_csv: str
    best_fold: int
    best_dice: float
    fold_dice: List[float]
    folds: List[List[str]]
    history: List[Dict[str, float]] = field(default_factory=list)


SEG_LOG_HEADER = ("fold", "epoch", "train_loss", "val_dice", "lr")


def mean_dice(net: UNet, x: np.ndarray, masks: np.ndarray, batch_size: int = 16) -> float:
    """Mean per-image smoothed hard Dice."""
    scores = []
    with no_grad():
        for idx in batches(len(x), batch_size):
            logits = net(Tensor(x[idx])).data
            for lg, gt in zip(logits, masks[idx]):
                scores.append(dice_coefficient(mask_from_logits(lg), gt))
    return float(np.mean(scores))


def _clip_gradients(params: Sequence[Tensor], max_norm: float) -> None:
    grads = [p.grad for p in params if p.grad is not None]
    norm = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads))
    if norm > max_norm:
        scale = np.float32(max_norm / norm)
        for g in grads:
            g *= scale


def segmentable_rows(rows: Sequence[ManifestRow], split: str) -> List[ManifestRow]:
    """Rows of ``split`` that have masks and are not Ungradable."""
    return [r for r in rows if r.split == split and r.mask_path is not None and r.klass != Quality.UNGRADABLE]


def train_fold(cfg: SegTrainConfig, fold: int, x_tr: np.ndarray, m_tr: np.ndarray,
               x_val: np.ndarray, m_val: np.ndarray) -> Tuple[List[Dict[str, float]], int, float, bytes]:
    ucfg = cfg.unet_config(fold)
    net = build_unet(ucfg)
    params = net.parameters()
    opt = Optimizer(params, OptimizerState(SGD_NESTEROV, cfg.lr, momentum=cfg.momentum))
    schedule = Poly(cfg.epochs, cfg.poly_exponent)
    rng = np.random.default_rng([cfg.seed, fold, 7])
    history: List[Dict[str, float]] = []
    best: Optional[Tuple[int, float, bytes]] = None
    since_best = 0
    for epoch in range(cfg.epochs):
        lr = lr_schedule(schedule, cfg.lr, epoch) if cfg.lr > 0 else 0.0
        opt.lr = lr
        flip = rng.random(len(x_tr)) < cfg.flip_p
        xs = np.where(flip[:, None, None, None], x_tr[..., ::-1], x_tr)
        ms = np.where(flip[:, None, None], m_tr[..., ::-1], m_tr)
        total = 0.0
        for b, idx in enumerate(batches(len(xs), cfg.batch_size, rng)):
            opt.zero_grad()
            try:
                loss = combined_loss(net(Tensor(np.ascontiguousarray(xs[idx]))), ms[idx], ucfg.lam)
                loss.backward()
                if cfg.grad_clip is not None:
                    _clip_gradients(params, cfg.grad_clip)
                opt.step()
            except NumericError as exc:
                raise NumericError(f"fold {fold}: non-finite values at epoch {epoch}, batch {b}: {exc}") from None
            total += float(loss.item()) * len(idx)
        val_dice = mean_dice(net, x_val, m_val)
        history.append({"fold": fold, "epoch": epoch, "train_loss": total / len(xs), "val_dice": val_dice, "lr": lr})
        log_.info("fold %d epoch %d loss %.4f dice %.4f lr %.2e", fold, epoch, total / len(xs), val_dice, lr)
        if best is None or val_dice > best[1]:
            meta = {"task": "seg", "fold": fold, "epoch": epoch, "val_dice": val_dice}
            best = (epoch, val_dice, network_to_bytes(ucfg.to_dict(), net, meta))
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    assert best is not None
    return history, best[0], best[1], best[2]


def train_segmenter(rows: Sequence[ManifestRow], cfg: SegTrainConfig) -> SegTrainResult:
    usable = segmentable_rows(rows, cfg.train_split)
    ids = [r.source_id for r in usable]
    folds = kfold(ids, cfg.folds, cfg.seed)
    by_id = {r.source_id: r for r in usable}
    patch = cfg.unet_config(0).patch
    x_all = {sid: preprocess(load_image(by_id[sid]), patch) for sid in ids}
    m_all = {}
    for sid in ids:
        mask = load_mask(by_id[sid]).pixels
        m_all[sid] = mask if mask.shape == (patch, patch) else resize_nearest(mask, patch, patch)

    history: List[Dict[str, float]] = []
    fold_dice: List[float] = []
    best: Optional[Tuple[int, float, bytes]] = None
    for f, val_ids in enumerate(folds):
        train_ids = [sid for g, fold in enumerate(folds) if g != f for sid in fold]
        x_tr = np.stack([x_all[s] for s in train_ids])
        m_tr = np.stack([m_all[s] for s in train_ids])
        x_val = np.stack([x_all[s] for s in val_ids])
        m_val = np.stack([m_all[s] for s in val_ids])
        hist, _, dice, blob = train_fold(cfg, f, x_tr, m_tr, x_val, m_val)
        history += hist
        fold_dice.append(dice)
        if best is None or dice > best[1]:
            best = (f, dice, blob)
    assert best is not None
    return SegTrainResult(best[2], format_log(history, SEG_LOG_HEADER), best[0], best[1], fold_dice, folds, history)


def load_segmenter(path_or_bytes) -> Tuple[UNet, dict]:
    net, spec, meta = load_network(path_or_bytes)
    if not isinstance(net, UNet):
        raise ConfigError("checkpoint is not a segmentation network")
    return net, meta
