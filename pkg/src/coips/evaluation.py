"""Compare pipeline output against manifest ground truth."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from coips.dataset import load_mask
from coips.errors import UndefinedMetricError
from coips.imaging import decode_mask_png
from coips.labels import NUM_CLASSES, Quality
from coips.manifest import ManifestRow
from coips.metrics import (
    classification_report,
    confusion_matrix,
    hard_dice,
    jaccard,
    roc_auc,
    roc_curve,
    seg_precision,
    seg_recall,
)
from coips.plots import confusion_svg, roc_svg
from coips.report import ReportRecord


def _mean_or_none(values: List[float]) -> Optional[float]:
    return float(np.mean(values)) if values else None


def evaluate_outputs(truth: Sequence[ManifestRow], records: Sequence[ReportRecord],
                     mask_dir: Optional[Path]) -> dict:
    by_id = {r.source_id: r for r in records}
    labelled = [t for t in sorted(truth, key=lambda t: t.source_id) if t.klass is not None and t.source_id in by_id]
    out: dict = {"n_evaluated": len(labelled), "warnings": []}
    curves: Dict[str, list] = {}
    if labelled:
        y_true = np.array([int(t.klass) for t in labelled])
        y_pred = np.array([int(by_id[t.source_id].category) for t in labelled])
        scores = np.array([by_id[t.source_id].probs for t in labelled])
        cm = confusion_matrix(y_true, y_pred, NUM_CLASSES)
        rep = classification_report(cm)
        out["classification"] = rep.to_dict()
        out["confusion_matrix"] = cm.counts.tolist()
        aucs = {}
        for q in Quality:
            try:
                aucs[q.label] = roc_auc(scores, y_true, int(q))
                curves[q.label] = roc_curve(scores, y_true, int(q))
            except UndefinedMetricError as exc:
                aucs[q.label] = None
                out["warnings"].append(f"AUC {q.label}: {exc}")
        defined = [v for v in aucs.values() if v is not None]
        out["auc"] = aucs
        out["macro_auc"] = _mean_or_none(defined)
        out["warnings"] += rep.warnings

    seg: Dict[str, List[float]] = {"dice": [], "jaccard": [], "precision": [], "recall": []}
    if mask_dir is not None:
        for t in labelled:
            rec = by_id[t.source_id]
            pred_path = mask_dir / f"{t.source_id}.png"
            if not rec.segmented or t.mask_path is None or not pred_path.exists():
                continue
            gt = load_mask(t)
            pred = decode_mask_png(pred_path.read_bytes(), t.source_id)
            for name, fn in (("dice", hard_dice), ("jaccard", jaccard), ("precision", seg_precision),
                             ("recall", seg_recall)):
                try:
                    seg[name].append(fn(pred, gt))
                except UndefinedMetricError as exc:
                    out["warnings"].append(f"{name} {t.source_id}: {exc}")
    out["segmentation"] = {"n": len(seg["dice"]), **{k: _mean_or_none(v) for k, v in seg.items()}}
    out["_curves"] = curves
    return out


def write_evaluation(result: dict, out_dir: Path) -> None:
    plots = out_dir / "plots"
    plots.mkdir(parents=True, exist_ok=True)
    curves = result.pop("_curves", {})
    (out_dir / "eval.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if "confusion_matrix" in result:
        counts = np.array(result["confusion_matrix"])
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\pred", *(q.label for q in Quality)])
        for q, row in zip(Quality, counts):
            w.writerow([q.label, *row])
        (plots / "confusion.csv").write_text(buf.getvalue(), encoding="utf-8")
        (plots / "confusion.svg").write_text(confusion_svg(counts, [q.label for q in Quality]), encoding="utf-8")
    for name, pts in curves.items():
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for th, f, t in pts:
            w.writerow([repr(th), repr(f), repr(t)])
        (plots / f"roc_{name.lower()}.csv").write_text(buf.getvalue(), encoding="utf-8")
    if curves:
        (plots / "roc.svg").write_text(roc_svg(curves), encoding="utf-8")
