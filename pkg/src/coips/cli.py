"""Command-line entry points.

Exit codes: 0 success, 1 partial success (some images failed), 2 fatal error
or bad usage.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from coips.config import PipelineConfig, load_config, require_file
from coips.errors import CoipsError, ConfigError
from coips.evaluation import evaluate_outputs, write_evaluation
from coips.imaging import decode_mask_png
from coips.manifest import read_manifest
from coips.pipeline import (
    EXIT_FATAL,
    EXIT_OK,
    EXIT_PARTIAL,
    Assessment,
    assess_rows,
    list_inputs,
    load_models,
    run_pipeline,
    segment_assessed,
    thread_count,
    write_outputs,
)
from coips.qa import train_classifier
from coips.report import area_from_count, parse_csv
from coips.segmenter import train_segmenter
from coips.splits import HoldoutScheme, KFoldScheme, split_dataset
from coips.synthgen import generate_corpus

log_ = logging.getLogger("coips")


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out(args, cfg: PipelineConfig) -> Path:
    return Path(args.out) if args.out else cfg.path(cfg.output_dir)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------- commands


def cmd_synth(args, cfg: PipelineConfig) -> int:
    out = _out(args, cfg)
    spec = cfg.synth_spec()
    rows = generate_corpus(spec, out)
    _write(out / "synth_spec.json", json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(rows)} samples to {out}")
    return EXIT_OK


def cmd_split(args, cfg: PipelineConfig) -> int:
    if args.ids:
        ids = [line.strip() for line in Path(args.ids).read_text(encoding="utf-8").splitlines() if line.strip()]
    else:
        ids = [r.source_id for r in read_manifest(require_file(cfg, "manifest"))]
    if args.k:
        scheme = KFoldScheme(args.k)
    elif args.counts:
        scheme = HoldoutScheme(counts=tuple(int(c) for c in args.counts.split(",")))
    else:
        scheme = HoldoutScheme()
    split = split_dataset(ids, scheme, seed=cfg.seed)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["source_id", "split"])
    for sid in sorted(split.assignment):
        w.writerow([sid, split.assignment[sid]])
    if args.out:
        _write(Path(args.out), buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    sizes = split.sizes()
    print(json.dumps({str(k): sizes[k] for k in sorted(sizes, key=str)}, sort_keys=True), file=sys.stderr)
    return EXIT_OK


def cmd_train_qa(args, cfg: PipelineConfig) -> int:
    out = _out(args, cfg)
    rows = read_manifest(require_file(cfg, "manifest"))
    res = train_classifier(rows, cfg.qa_config())
    out.mkdir(parents=True, exist_ok=True)
    (out / "classifier.ckpt").write_bytes(res.checkpoint)
    _write(out / "qa_log.csv", res.log_csv)
    summary = {"best_epoch": res.best_epoch, "best_val_loss": res.best_val_loss, "best_val_acc": res.best_val_acc}
    _write(out / "qa_summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_train_seg(args, cfg: PipelineConfig) -> int:
    out = _out(args, cfg)
    rows = read_manifest(require_file(cfg, "manifest"))
    res = train_segmenter(rows, cfg.seg_config())
    out.mkdir(parents=True, exist_ok=True)
    (out / "segmenter.ckpt").write_bytes(res.checkpoint)
    _write(out / "seg_log.csv", res.log_csv)
    _write(out / "folds.csv", "source_id,fold\n" + "".join(
        f"{sid},{f}\n" for f, fold in enumerate(res.folds) for sid in fold))
    summary = {"best_fold": res.best_fold, "best_dice": res.best_dice, "fold_dice": res.fold_dice}
    _write(out / "seg_summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_assess(args, cfg: PipelineConfig) -> int:
    out = _out(args, cfg)
    rows = list_inputs(cfg)
    qa_net, qa_size, _ = load_models(cfg, need_segmenter=False)
    assessments, failures = assess_rows(cfg, rows, qa_net, qa_size, thread_count(cfg))
    doc = {"assessments": [a.to_dict() for a in assessments],
           "failures": [{"source_id": s, "error": m} for s, m in failures]}
    _write(out / "assessment.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_segment(args, cfg: PipelineConfig) -> int:
    out = _out(args, cfg)
    src = Path(args.assessment) if args.assessment else out / "assessment.json"
    try:
        doc = json.loads(src.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read assessment file {src}: {exc}") from None
    assessments = [Assessment.from_dict(d) for d in doc["assessments"]]
    prior = [(f["source_id"], f["error"]) for f in doc.get("failures", [])]
    rows = list_inputs(cfg)
    _, _, seg_net = load_models(cfg, need_classifier=False)
    records, masks, failures = segment_assessed(cfg, rows, assessments, seg_net, thread_count(cfg))
    failures = sorted(prior + failures)
    write_outputs(out, records, masks, failures, len(rows))
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_quantify(args, cfg: PipelineConfig) -> int:
    mask_dir = Path(args.masks) if args.masks else _out(args, cfg) / "masks"
    field_mm = args.field_mm if args.field_mm is not None else cfg.field_mm
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["source_id", "faz_pixels", "faz_area_mm2"])
    failed = 0
    for path in sorted(mask_dir.glob("*.png")):
        try:
            mask = decode_mask_png(path.read_bytes(), path.stem)
            h, wd = mask.shape
            if h != wd:
                raise ConfigError(f"{path.stem}: non-square mask {h}x{wd}")
            w.writerow([path.stem, mask.foreground, f"{area_from_count(mask.foreground, field_mm, wd):.6g}"])
        except CoipsError as exc:
            log_.warning("%s", exc)
            failed += 1
    if args.output:
        _write(Path(args.output), buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_pipeline(args, cfg: PipelineConfig) -> int:
    res = run_pipeline(cfg, Path(args.out) if args.out else None)
    print(f"{len(res.records)} reported, {len(res.failures)} failed")
    return res.exit_code


def cmd_eval(args, cfg: PipelineConfig) -> int:
    out = _out(args, cfg)
    report = Path(args.report) if args.report else out / "report.csv"
    try:
        records = parse_csv(report.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read report {report}: {exc}") from None
    truth = read_manifest(require_file(cfg, "manifest"))
    mask_dir = Path(args.masks) if args.masks else report.parent / "masks"
    result = evaluate_outputs(truth, records, mask_dir if mask_dir.is_dir() else None)
    write_evaluation(result, out)
    cls = result.get("classification", {})
    print(json.dumps({"accuracy": cls.get("accuracy"), "balanced_accuracy": cls.get("balanced_accuracy"),
                      "macro_auc": result.get("macro_auc"), "dice": result["segmentation"]["dice"]}))
    return EXIT_OK


COMMANDS = {
    "synth": (cmd_synth, "generate a synthetic corpus with masks and manifest"),
    "split": (cmd_split, "hold-out or k-fold split of ids"),
    "train-qa": (cmd_train_qa, "train the quality classifier"),
    "train-seg": (cmd_train_seg, "k-fold training of the FAZ segmenter"),
    "assess": (cmd_assess, "quality-grade the inputs"),
    "segment": (cmd_segment, "segment gradable inputs from an assessment file"),
    "quantify": (cmd_quantify, "FAZ areas from a directory of mask PNGs"),
    "pipeline": (cmd_pipeline, "assess, segment, quantify and report in one run"),
    "eval": (cmd_eval, "metrics of a report against manifest ground truth"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coips", description="OCTA quality gate and FAZ segmentation pipeline")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="override every seed in the config")
        if name not in ("split", "quantify"):
            p.add_argument("--out", help="output directory (default: config output_dir)")
        if name == "split":
            p.add_argument("--ids", help="text file with one id per line (default: manifest ids)")
            p.add_argument("--k", type=int, help="k-fold instead of hold-out")
            p.add_argument("--counts", help="explicit hold-out sizes, e.g. 60,20,10,10")
            p.add_argument("--out", help="output CSV (default: stdout)")
        elif name == "segment":
            p.add_argument("--assessment", help="assessment.json from `assess` (default: OUT/assessment.json)")
        elif name == "quantify":
            p.add_argument("--masks", help="directory of mask PNGs")
            p.add_argument("--field-mm", type=float, help="field of view in mm (default: config field_mm)")
            p.add_argument("--output", help="output CSV (default: stdout)")
            p.add_argument("--out", help="pipeline output directory holding masks/")
        elif name == "eval":
            p.add_argument("--report", help="report.csv to evaluate (default: OUT/report.csv)")
            p.add_argument("--masks", help="predicted masks (default: next to the report)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    fn = COMMANDS[args.command][0]
    try:
        return fn(args, _config(args))
    except CoipsError as exc:
        print(f"coips {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FATAL
    except OSError as exc:
        print(f"coips {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
