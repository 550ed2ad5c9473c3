"""Manifest CSV reading and writing.

The canonical header is ``source_id,class,image_path,mask_path,field_mm,split``.
Pipeline inputs may add ``layer`` (sOCTA/dOCTA) and ``sibling_id`` columns and
may omit everything except ``source_id`` and ``image_path``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Union

from coips.errors import ConfigError
from coips.labels import Quality

HEADER = ("source_id", "class", "image_path", "mask_path", "field_mm", "split")
OPTIONAL = ("layer", "sibling_id")


@dataclass(frozen=True)
class ManifestRow:
    source_id: str
    image_path: Path
    klass: Optional[Quality] = None
    mask_path: Optional[Path] = None
    field_mm: Optional[float] = None
    split: str = ""
    layer: str = ""
    sibling_id: str = ""


def read_manifest(path: Union[str, Path]) -> List[ManifestRow]:
    path = Path(path)
    base = path.parent
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from None
    reader = csv.DictReader(io.StringIO(text))
    fields = reader.fieldnames or []
    for required in ("source_id", "image_path"):
        if required not in fields:
            raise ConfigError(f"{path}: manifest lacks column {required!r}")
    rows, seen = [], set()
    for lineno, rec in enumerate(reader, start=2):
        sid = rec["source_id"].strip()
        if not sid or sid in seen:
            raise ConfigError(f"{path}:{lineno}: empty or duplicate source_id {sid!r}")
        seen.add(sid)
        try:
            field_mm = float(rec["field_mm"]) if rec.get("field_mm") else None
            klass = Quality.parse(rec["class"]) if rec.get("class") else None
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
        mask = rec.get("mask_path") or ""
        rows.append(
            ManifestRow(
                source_id=sid,
                image_path=base / rec["image_path"],
                klass=klass,
                mask_path=(base / mask) if mask else None,
                field_mm=field_mm,
                split=(rec.get("split") or "").strip(),
                layer=(rec.get("layer") or "").strip(),
                sibling_id=(rec.get("sibling_id") or "").strip(),
            )
        )
    return rows


def format_manifest(rows: Iterable[ManifestRow], base: Union[str, Path]) -> str:
    base = Path(base)
    rows = list(rows)
    extra = [c for c in OPTIONAL if any(getattr(r, c) for r in rows)]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HEADER + tuple(extra))
    for r in rows:
        writer.writerow(
            [
                r.source_id,
                r.klass.label if r.klass is not None else "",
                _rel(r.image_path, base),
                _rel(r.mask_path, base) if r.mask_path else "",
                repr(r.field_mm) if r.field_mm is not None else "",
                r.split,
            ]
            + [getattr(r, c) for c in extra]
        )
    return buf.getvalue()


def write_manifest(rows: Iterable[ManifestRow], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_manifest(rows, path.parent), encoding="utf-8")


def _rel(p: Path, base: Path) -> str:
    try:
        return Path(p).relative_to(base).as_posix()
    except ValueError:
        return Path(p).as_posix()
