"""Three-class image quality assessment: class weights, weighted CE, training, inference."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from coips.dataset import batches, load_image, stack_inputs
from coips.engine import (
    ADAM,
    CosineAnnealing,
    Optimizer,
    OptimizerState,
    Tensor,
    clip_min,
    cosine_cyclic,
    log,
    no_grad,
    pick,
    softmax,
)
from coips.engine.layers import Module
from coips.errors import ConfigError, DimensionError, NumericError
from coips.imaging import ImageTensor, augment, preprocess
from coips.labels import NUM_CLASSES, Quality, QualityLabel
from coips.manifest import ManifestRow
from coips.nets import build_network, count_parameters, default_classifier_spec, infer_shapes, load_network, network_to_bytes

log_ = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class ClassWeights:
    weights: Tuple[float, ...]
    counts: Tuple[int, ...]


def class_weights(counts: Sequence[int]) -> ClassWeights:
    """``w_i = sum(counts) / (K * counts_i)``; rare classes weigh more."""
    counts = tuple(int(c) for c in counts)
    if not counts:
        raise ConfigError("class_weights needs at least one class")
    missing = [i for i, c in enumerate(counts) if c < 1]
    if missing:
        raise ConfigError(f"class(es) {missing} absent from the training data")
    total, k = sum(counts), len(counts)
    return ClassWeights(tuple(total / (k * c) for c in counts), counts)


def weighted_ce_loss(logits: Tensor, labels: Sequence[int], weights: ClassWeights) -> Tensor:
    """Sum of ``-w_y log p_y`` over the batch divided by the sum of ``w_y``."""
    labels = np.asarray(labels, dtype=np.int64)
    k = len(weights.weights)
    if logits.ndim != 2 or logits.shape[1] != k:
        raise DimensionError(f"logits must be [N, {k}], got {logits.shape}")
    if labels.shape != (logits.shape[0],):
        raise DimensionError(f"{logits.shape[0]} logits rows but labels of shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ConfigError(f"labels must lie in [0, {k})")
    w = np.asarray(weights.weights, dtype=logits.dtype)[labels]
    p_true = pick(softmax(logits, axis=1), labels)
    nll = -log(clip_min(p_true, PROB_FLOOR))
    return (nll * w).sum() / float(w.sum())


# ---------------------------------------------------------------------- inference


def probabilities(net: Module, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Softmax class probabilities for a [N, C, H, W] batch, as float64."""
    if x.ndim != 4:
        raise DimensionError(f"expected a [N, C, H, W] batch, got {x.shape}")
    out = []
    with no_grad():
        for idx in batches(len(x), batch_size):
            out.append(net(Tensor(x[idx])).data.astype(np.float64))
    logits = np.concatenate(out) if out else np.zeros((0, NUM_CLASSES))
    return logits_to_probs(logits)


def logits_to_probs(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def label_from_logits(logits: np.ndarray) -> QualityLabel:
    """Argmax with ties going to the lowest index (Ungradable first)."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != (NUM_CLASSES,):
        raise DimensionError(f"expected {NUM_CLASSES} logits, got {logits.shape}")
    probs = logits_to_probs(logits)
    return QualityLabel(Quality(int(np.argmax(logits))), tuple(probs))


def predict_quality(net: Module, image: np.ndarray) -> QualityLabel:
    """Classify one preprocessed image of shape [C, H, W]."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3:
        raise DimensionError(f"expected a preprocessed [C, H, W] image, got {image.shape}")
    with no_grad():
        logits = net(Tensor(image[None])).data[0]
    return label_from_logits(logits)


def assess_image(net: Module, img: ImageTensor, input_size: int) -> QualityLabel:
    return predict_quality(net, preprocess(img, input_size))


# ---------------------------------------------------------------------- training


@dataclass
class QATrainConfig:
    epochs: int = 40
    batch_size: int = 16
    lr: float = 0.001
    t_max: Optional[int] = None  # cosine half-period in epochs; None means `epochs`
    patience: int = 20
    seed: int = 42
    input_size: int = 64
    channels: Tuple[int, ...] = (8, 16, 32, 32)
    augment: bool = True
    flip_p: float = 0.5
    max_degrees: float = 15.0
    train_split: str = "train"
    val_split: str = "test"
    net: Optional[dict] = None  # full classifier spec; overrides input_size/channels

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ConfigError("epochs, batch_size and patience must be positive")
        if self.t_max is not None and self.t_max < 1:
            raise ConfigError("t_max must be positive")
        self.channels = tuple(int(c) for c in self.channels)

    def network_spec(self) -> dict:
        spec = self.net if self.net is not None else default_classifier_spec(self.input_size, self.channels, self.seed)
        shapes = infer_shapes(spec)
        if not shapes or shapes[-1] != (NUM_CLASSES,):
            raise ConfigError(f"classifier must end in {NUM_CLASSES} outputs, spec gives {shapes[-1:]}")
        return spec

    @classmethod
    def from_dict(cls, data: dict) -> "QATrainConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train_qa keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


@dataclass
class QATrainResult:
    checkpoint: bytes
    log_csv: str
    best_epoch: int
    best_val_loss: float
    best_val_acc: float
    history: List[Dict[str, float]] = field(default_factory=list)


LOG_HEADER = ("epoch", "train_loss", "val_loss", "val_acc", "lr")


def format_log(rows: Sequence[Dict[str, float]], header: Sequence[str] = LOG_HEADER) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(row[h]) if isinstance(row[h], float) else row[h] for h in header])
    return buf.getvalue()


def evaluate(net: Module, x: np.ndarray, y: np.ndarray, weights: ClassWeights, batch_size: int = 64) -> Tuple[float, float]:
    """Weighted CE over the whole set (float64) and plain accuracy."""
    if len(x) == 0:
        raise ConfigError("validation split is empty")
    probs = probabilities(net, x, batch_size)
    w = np.asarray(weights.weights, dtype=np.float64)[y]
    p_true = np.maximum(probs[np.arange(len(y)), y], PROB_FLOOR)
    loss = float((w * -np.log(p_true)).sum() / w.sum())
    acc = float((np.argmax(probs, axis=1) == y).mean())
    return loss, acc


def _labels(rows: Sequence[ManifestRow]) -> np.ndarray:
    for r in rows:
        if r.klass is None:
            raise ConfigError(f"{r.source_id}: manifest row has no class label")
    return np.array([int(r.klass) for r in rows], dtype=np.int64)


def train_classifier(rows: Sequence[ManifestRow], cfg: QATrainConfig) -> QATrainResult:
    train_rows = [r for r in rows if r.split == cfg.train_split]
    val_rows = [r for r in rows if r.split == cfg.val_split]
    if not val_rows:
        raise ConfigError(f"no rows in validation split {cfg.val_split!r}")
    y_train = _labels(train_rows)
    y_val = _labels(val_rows)
    weights = class_weights(np.bincount(y_train, minlength=NUM_CLASSES))

    spec = cfg.network_spec()
    size = int(spec["input_shape"][1])
    net = build_network(spec)
    train_imgs = [load_image(r) for r in train_rows]
    x_train_plain = stack_inputs(train_imgs, size)
    x_val = stack_inputs([load_image(r) for r in val_rows], size)

    opt = Optimizer(net.parameters(), OptimizerState(ADAM, cfg.lr))
    schedule = CosineAnnealing(cfg.t_max or cfg.epochs)
    aug_rng = np.random.default_rng([cfg.seed, 1])
    order_rng = np.random.default_rng([cfg.seed, 2])

    history: List[Dict[str, float]] = []
    best: Optional[Tuple[int, float, float, bytes]] = None
    since_best = 0
    log_.info("training classifier: %d params, %d train / %d val", count_parameters(spec), len(train_rows), len(val_rows))
    for epoch in range(cfg.epochs):
        lr = cosine_cyclic(schedule, cfg.lr, epoch) if cfg.lr > 0 else 0.0
        opt.lr = lr
        if cfg.augment:
            x_train = stack_inputs([augment(im, aug_rng, cfg.flip_p, cfg.max_degrees) for im in train_imgs], size)
        else:
            x_train = x_train_plain
        total = seen = 0.0
        for b, idx in enumerate(batches(len(x_train), cfg.batch_size, order_rng)):
            opt.zero_grad()
            try:
                loss = weighted_ce_loss(net(Tensor(x_train[idx])), y_train[idx], weights)
                loss.backward()
                opt.step()
            except NumericError as exc:
                raise NumericError(f"non-finite values at epoch {epoch}, batch {b}: {exc}") from None
            total += float(loss.item()) * len(idx)
            seen += len(idx)
        val_loss, val_acc = evaluate(net, x_val, y_val, weights)
        row = {"epoch": epoch, "train_loss": total / seen, "val_loss": val_loss, "val_acc": val_acc, "lr": lr}
        history.append(row)
        log_.info("epoch %d train %.4f val %.4f acc %.3f lr %.2e", epoch, total / seen, val_loss, val_acc, lr)
        if best is None or val_loss < best[1]:
            meta = {"task": "qa", "epoch": epoch, "val_loss": val_loss, "val_acc": val_acc,
                    "class_weights": list(weights.weights), "input_size": size, "val_split": cfg.val_split}
            best = (epoch, val_loss, val_acc, network_to_bytes(spec, net, meta))
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                log_.info("early stop after epoch %d (best %d)", epoch, best[0])
                break
    assert best is not None
    return QATrainResult(best[3], format_log(history), best[0], best[1], best[2], history)


def reevaluate(checkpoint: bytes, rows: Sequence[ManifestRow]) -> Tuple[float, float]:
    """Recompute (val_loss, val_acc) of a saved classifier on its validation split."""
    net, spec, meta = load_network(checkpoint)
    val_rows = [r for r in rows if r.split == meta.get("val_split", "test")]
    weights = ClassWeights(tuple(meta["class_weights"]), ())
    size = int(spec["input_shape"][1])
    return evaluate(net, stack_inputs([load_image(r) for r in val_rows], size), _labels(val_rows), weights)
