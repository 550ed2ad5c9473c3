"""Classification and segmentation metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from scipy.stats import rankdata

from coips.errors import DimensionError, RangeError, UndefinedMetricError
from coips.imaging import FazMask


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # [K, K], rows = true class, columns = predicted

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        if self.total == 0:
            raise UndefinedMetricError("accuracy of an empty confusion matrix")
        return float(np.trace(self.counts) / self.total)


def confusion_matrix(y_true: Sequence[int], y_pred: Sequence[int], k: int) -> ConfusionMatrix:
    t = np.asarray(y_true, dtype=np.int64)
    p = np.asarray(y_pred, dtype=np.int64)
    if t.shape != p.shape or t.ndim != 1:
        raise DimensionError(f"label vectors differ: {t.shape} vs {p.shape}")
    if t.size == 0:
        raise UndefinedMetricError("no samples")
    for name, v in (("y_true", t), ("y_pred", p)):
        if v.min() < 0 or v.max() >= k:
            raise RangeError(f"{name} has labels outside [0, {k})")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts)


@dataclass
class ClassificationReport:
    accuracy: float
    balanced_accuracy: float  # mean per-class recall (class-weighted accuracy)
    precision: List[float]
    recall: List[float]
    f1: List[float]
    support: List[int]
    macro: Dict[str, float]
    weighted: Dict[str, float]
    warnings: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "balanced_accuracy": self.balanced_accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "support": self.support,
            "macro": self.macro,
            "weighted": self.weighted,
            "warnings": self.warnings,
        }


def _ratio(num: float, den: float, what: str, warnings: List[str]) -> float:
    if den == 0:
        warnings.append(what)
        return 0.0
    return num / den


def classification_report(cm: ConfusionMatrix) -> ClassificationReport:
    """Per-class precision/recall/F1 plus macro and support-weighted averages.

    Zero denominators give 0 and add an entry to ``warnings``.
    """
    c = cm.counts
    if cm.total == 0:
        raise UndefinedMetricError("empty confusion matrix")
    warnings: List[str] = []
    tp = np.diag(c)
    predicted = c.sum(axis=0)
    support = c.sum(axis=1)
    precision, recall, f1 = [], [], []
    for i in range(cm.k):
        p = _ratio(tp[i], predicted[i], f"precision undefined for class {i} (never predicted)", warnings)
        r = _ratio(tp[i], support[i], f"recall undefined for class {i} (no true samples)", warnings)
        f = _ratio(2 * p * r, p + r, f"f1 undefined for class {i}", warnings)
        precision.append(float(p))
        recall.append(float(r))
        f1.append(float(f))
    present = support > 0
    w = support / support.sum()
    macro = {"precision": float(np.mean(precision)), "recall": float(np.mean(recall)), "f1": float(np.mean(f1))}
    weighted = {
        "precision": float(np.dot(w, precision)),
        "recall": float(np.dot(w, recall)),
        "f1": float(np.dot(w, f1)),
    }
    balanced = float(np.mean(np.asarray(recall)[present]))
    return ClassificationReport(cm.accuracy, balanced, precision, recall, f1, [int(s) for s in support],
                                macro, weighted, warnings)


# ---------------------------------------------------------------------- ROC


def _one_vs_rest(scores, y_true, k: int) -> Tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y_true)
    if s.ndim == 2:
        s = s[:, k]
    if s.shape != y.shape:
        raise DimensionError(f"scores {s.shape} vs labels {y.shape}")
    pos = y == k
    if pos.all() or not pos.any():
        raise UndefinedMetricError(f"class {k} needs both positive and negative samples")
    return s, pos


def roc_auc(scores, y_true: Sequence[int], k: int) -> float:
    """One-vs-rest AUC for class ``k`` from rank statistics (ties count one half)."""
    s, pos = _one_vs_rest(scores, y_true, k)
    ranks = rankdata(s)  # average ranks for ties
    n_pos = int(pos.sum())
    n_neg = len(s) - n_pos
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def macro_roc_auc(scores: np.ndarray, y_true: Sequence[int]) -> float:
    scores = np.asarray(scores)
    return float(np.mean([roc_auc(scores, y_true, k) for k in range(scores.shape[1])]))


def roc_curve(scores, y_true: Sequence[int], k: int) -> List[Tuple[float, float, float]]:
    """(threshold, FPR, TPR) at every distinct score, descending; starts at (inf, 0, 0)."""
    s, pos = _one_vs_rest(scores, y_true, k)
    order = np.argsort(-s, kind="stable")
    s, pos = s[order], pos[order]
    n_pos = pos.sum()
    n_neg = len(s) - n_pos
    tps = np.cumsum(pos)
    fps = np.cumsum(~pos)
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    points = [(float("inf"), 0.0, 0.0)]
    points += [(float(s[i]), float(fps[i] / n_neg), float(tps[i] / n_pos)) for i in last]
    return points


# ---------------------------------------------------------------------- segmentation


MaskLike = Union[FazMask, np.ndarray]


def _masks(sr: MaskLike, gt: MaskLike) -> Tuple[np.ndarray, np.ndarray]:
    a = (sr.pixels if isinstance(sr, FazMask) else np.asarray(sr)).astype(bool)
    b = (gt.pixels if isinstance(gt, FazMask) else np.asarray(gt)).astype(bool)
    if a.shape != b.shape:
        raise DimensionError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def jaccard(sr: MaskLike, gt: MaskLike) -> float:
    a, b = _masks(sr, gt)
    union = int((a | b).sum())
    if union == 0:
        raise UndefinedMetricError("Jaccard of two empty masks")
    return int((a & b).sum()) / union


def seg_precision(sr: MaskLike, gt: MaskLike) -> float:
    a, b = _masks(sr, gt)
    if not a.any():
        raise UndefinedMetricError("precision of an empty prediction")
    return int((a & b).sum()) / int(a.sum())


def seg_recall(sr: MaskLike, gt: MaskLike) -> float:
    a, b = _masks(sr, gt)
    if not b.any():
        raise UndefinedMetricError("recall against an empty ground truth")
    return int((a & b).sum()) / int(b.sum())


def hard_dice(sr: MaskLike, gt: MaskLike) -> float:
    """Unsmoothed Dice ``2|A & B| / (|A| + |B|)``."""
    a, b = _masks(sr, gt)
    den = int(a.sum()) + int(b.sum())
    if den == 0:
        raise UndefinedMetricError("Dice of two empty masks")
    return 2 * int((a & b).sum()) / den


def jaccard_from_dice(d: float) -> float:
    return d / (2.0 - d)
