"""Batch orchestration: quality gate, FAZ segmentation, area, and report files.

Deep-layer (dOCTA) images reuse the quality decision of their superficial
(sOCTA) sibling. A sibling is taken from the manifest's ``sibling_id`` column
when present, otherwise from a shared id prefix: ``P_docta`` pairs with
``P_socta`` (``-`` also works as the separator, case-insensitive).
"""

from __future__ import annotations

import json
import logging
import os
import re
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from coips.config import PipelineConfig, require_file
from coips.dataset import load_image
from coips.engine.layers import Module
from coips.errors import CheckpointError, CoipsError, ConfigError
from coips.imaging import FazMask, ImageTensor, encode_mask_png
from coips.labels import Quality, QualityLabel
from coips.manifest import ManifestRow, read_manifest
from coips.nets import load_network
from coips.qa import assess_image
from coips.report import ReportRecord, make_report
from coips.segmenter import UNet, segment_image

log_ = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
_LAYER_RE = re.compile(r"^(?P<prefix>.+)[_-](?P<layer>socta|docta|superficial|deep)$", re.IGNORECASE)

EXIT_OK, EXIT_PARTIAL, EXIT_FATAL = 0, 1, 2


# ---------------------------------------------------------------------- inputs


def list_inputs(cfg: PipelineConfig) -> List[ManifestRow]:
    """Rows from the manifest, or one row per image file in ``input_dir``."""
    if cfg.manifest is not None:
        rows = read_manifest(require_file(cfg, "manifest"))
    elif cfg.input_dir is not None:
        root = require_file(cfg, "input_dir")
        if not root.is_dir():
            raise ConfigError(f"config key 'input_dir': {root} is not a directory")
        files = sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        rows = [ManifestRow(p.stem, p) for p in files]
    else:
        raise ConfigError("config needs 'manifest' or 'input_dir'")
    ids = [r.source_id for r in rows]
    if len(set(ids)) != len(ids):
        raise ConfigError("input source ids are not unique")
    return rows


def _layer(row: ManifestRow) -> str:
    tag = row.layer.strip().lower()
    if not tag:
        m = _LAYER_RE.match(row.source_id)
        tag = m.group("layer").lower() if m else ""
    return "deep" if tag in ("deep", "docta", "d") else "superficial"


def pair_siblings(rows: Sequence[ManifestRow]) -> Dict[str, str]:
    """Map each paired dOCTA id to its sOCTA sibling id."""
    ids = {r.source_id for r in rows}
    superficial_by_prefix: Dict[str, str] = {}
    for r in rows:
        m = _LAYER_RE.match(r.source_id)
        if m and _layer(r) == "superficial":
            superficial_by_prefix[m.group("prefix").lower()] = r.source_id
    pairs = {}
    for r in rows:
        if _layer(r) != "deep":
            continue
        if r.sibling_id:
            if r.sibling_id in ids and r.sibling_id != r.source_id:
                pairs[r.source_id] = r.sibling_id
            continue
        m = _LAYER_RE.match(r.source_id)
        if m and m.group("prefix").lower() in superficial_by_prefix:
            pairs[r.source_id] = superficial_by_prefix[m.group("prefix").lower()]
    return pairs


# ---------------------------------------------------------------------- models


def load_models(cfg: PipelineConfig, need_classifier: bool = True, need_segmenter: bool = True):
    qa_net = seg_net = None
    qa_size = 0
    try:
        if need_classifier:
            qa_net, spec, _ = load_network(require_file(cfg, "classifier"))
            if spec.get("kind") != "classifier":
                raise CheckpointError("'classifier' checkpoint is not a quality classifier")
            qa_size = int(spec["input_shape"][1])
        if need_segmenter:
            seg_net, _, _ = load_network(require_file(cfg, "segmenter"))
            if not isinstance(seg_net, UNet):
                raise CheckpointError("'segmenter' checkpoint is not a segmentation network")
    except OSError as exc:
        raise CheckpointError(str(exc)) from None
    return qa_net, qa_size, seg_net


def thread_count(cfg: PipelineConfig) -> int:
    env = os.environ.get("COIPS_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"COIPS_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError("COIPS_THREADS must be at least 1")
        return n
    return cfg.parallelism


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------- stages


@dataclass(frozen=True)
class Assessment:
    source_id: str
    label: QualityLabel
    width: int
    height: int
    field_mm: float

    def to_dict(self) -> dict:
        return {
            "source_id": self.source_id,
            "category": self.label.category.label,
            "probs": list(self.label.probs or ()),
            "width": self.width,
            "height": self.height,
            "field_mm": self.field_mm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Assessment":
        return cls(d["source_id"], QualityLabel(d["category"], tuple(d["probs"])), int(d["width"]),
                   int(d["height"]), float(d["field_mm"]))


Failure = Tuple[str, str]  # (source_id, message)


def _load(row: ManifestRow, cfg: PipelineConfig) -> ImageTensor:
    return load_image(row, cfg.field_mm)


def assess_rows(cfg: PipelineConfig, rows: Sequence[ManifestRow], qa_net: Module, qa_size: int,
                workers: int = 1) -> Tuple[List[Assessment], List[Failure]]:
    pairs = pair_siblings(rows)
    by_id = {r.source_id: r for r in rows}

    def classify(row: ManifestRow):
        try:
            img = _load(row, cfg)
            return Assessment(row.source_id, assess_image(qa_net, img, qa_size), img.width, img.height, img.field_mm)
        except CoipsError as exc:
            return (row.source_id, f"{type(exc).__name__}: {exc}")

    # superficial and unpaired images first, then deep images take their sibling's decision
    direct = [r for r in rows if r.source_id not in pairs]
    results = {}
    for res in _map(classify, direct, workers):
        results[res.source_id if isinstance(res, Assessment) else res[0]] = res

    def inherit(row: ManifestRow):
        sib = results.get(pairs[row.source_id])
        if not isinstance(sib, Assessment):
            return classify(row)  # sibling failed: fall back to direct classification
        try:
            img = _load(row, cfg)
        except CoipsError as exc:
            return (row.source_id, f"{type(exc).__name__}: {exc}")
        return Assessment(row.source_id, sib.label, img.width, img.height, img.field_mm)

    deep = [by_id[s] for s in sorted(pairs)]
    for res in _map(inherit, deep, workers):
        results[res.source_id if isinstance(res, Assessment) else res[0]] = res
    assessments = sorted((v for v in results.values() if isinstance(v, Assessment)), key=lambda a: a.source_id)
    failures = sorted(v for v in results.values() if not isinstance(v, Assessment))
    return assessments, failures


def segment_assessed(cfg: PipelineConfig, rows: Sequence[ManifestRow], assessments: Sequence[Assessment],
                     seg_net: Optional[UNet], workers: int = 1
                     ) -> Tuple[List[ReportRecord], Dict[str, FazMask], List[Failure]]:
    by_id = {r.source_id: r for r in rows}

    def work(a: Assessment):
        try:
            if not a.label.segmentable:
                return ReportRecord(a.source_id, a.label.category, a.label.probs, a.width, a.height, a.field_mm), None
            img = _load(by_id[a.source_id], cfg)
            mask = segment_image(seg_net, img)
            rec = ReportRecord(a.source_id, a.label.category, a.label.probs, a.width, a.height, a.field_mm,
                               mask.foreground)
            rec.faz_area_mm2  # raises GeometryError for non-square rasters
            return rec, mask
        except (CoipsError, KeyError) as exc:
            return (a.source_id, f"{type(exc).__name__}: {exc}"), None

    records, masks, failures = [], {}, []
    for res, mask in _map(work, list(assessments), workers):
        if isinstance(res, ReportRecord):
            records.append(res)
            if mask is not None:
                masks[res.source_id] = mask
        else:
            failures.append(res)
    return records, masks, failures


def summarize(records: Sequence[ReportRecord], failures: Sequence[Failure], n_inputs: int) -> dict:
    areas = [r.faz_area_mm2 for r in records if r.segmented]
    return {
        "inputs": n_inputs,
        "reported": len(records),
        "failed": len(failures),
        "counts": {q.label: sum(r.category == q for r in records) for q in Quality},
        "segmented": len(areas),
        "mean_faz_area_mm2": statistics.fmean(areas) if areas else None,
        "median_faz_area_mm2": statistics.median(areas) if areas else None,
        "failures": [{"source_id": s, "error": m} for s, m in sorted(failures)],
    }


def write_outputs(out_dir: Path, records: Sequence[ReportRecord], masks: Dict[str, FazMask],
                  failures: Sequence[Failure], n_inputs: int) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    mask_dir = out_dir / "masks"
    mask_dir.mkdir(exist_ok=True)
    csv_bytes, json_bytes = make_report(records)
    (out_dir / "report.csv").write_bytes(csv_bytes)
    (out_dir / "report.json").write_bytes(json_bytes)
    summary = summarize(records, failures, n_inputs)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for sid in sorted(masks):
        (mask_dir / f"{sid}.png").write_bytes(encode_mask_png(masks[sid]))


@dataclass
class PipelineResult:
    records: List[ReportRecord]
    failures: List[Failure]
    exit_code: int


def run_pipeline(cfg: PipelineConfig, out_dir: Optional[Path] = None) -> PipelineResult:
    """Full flow; raises CoipsError on fatal problems (bad config or checkpoints)."""
    rows = list_inputs(cfg)
    qa_net, qa_size, seg_net = load_models(cfg)
    workers = thread_count(cfg)
    assessments, fail_a = assess_rows(cfg, rows, qa_net, qa_size, workers)
    records, masks, fail_s = segment_assessed(cfg, rows, assessments, seg_net, workers)
    failures = sorted(fail_a + fail_s)
    write_outputs(out_dir or cfg.path(cfg.output_dir), records, masks, failures, len(rows))
    for sid, msg in failures:
        log_.warning("%s failed: %s", sid, msg)
    return PipelineResult(records, failures, EXIT_PARTIAL if failures else EXIT_OK)
