"""FAZ area quantification and per-image report records (CSV and JSON)."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from coips.errors import ConfigError, GeometryError
from coips.imaging import FazMask
from coips.labels import Quality

CSV_HEADER = (
    "source_id",
    "category",
    "p_ungradable",
    "p_gradable",
    "p_outstanding",
    "segmented",
    "faz_pixels",
    "faz_area_mm2",
    "width",
    "height",
    "field_mm",
)


def area_from_count(n_pixels: int, field_mm: float, side_px: int) -> float:
    """Physical area in mm^2 of ``n_pixels`` on a ``side_px``-wide raster covering ``field_mm``."""
    if side_px < 1:
        raise GeometryError(f"raster width must be positive, got {side_px}")
    return n_pixels * field_mm**2 / side_px**2


def faz_area(mask: FazMask, field_mm: float) -> float:
    h, w = mask.shape
    if h != w:
        raise GeometryError(f"{mask.source_id}: area needs a square mask, got {h}x{w}")
    return area_from_count(mask.foreground, field_mm, w)


@dataclass(frozen=True)
class ReportRecord:
    source_id: str
    category: Quality
    probs: Tuple[float, float, float]
    width: int
    height: int
    field_mm: float
    faz_pixels: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "category", Quality.parse(self.category))
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if self.segmented != (self.faz_pixels is not None):
            raise ConfigError(f"{self.source_id}: Ungradable rows carry no area and all others must")

    @property
    def segmented(self) -> bool:
        return self.category != Quality.UNGRADABLE

    @property
    def faz_area_mm2(self) -> Optional[float]:
        if self.faz_pixels is None:
            return None
        if self.width != self.height:
            raise GeometryError(f"{self.source_id}: area needs a square image")
        return area_from_count(self.faz_pixels, self.field_mm, self.width)

    def to_dict(self) -> dict:
        return {
            "source_id": self.source_id,
            "category": self.category.label,
            "p_ungradable": self.probs[0],
            "p_gradable": self.probs[1],
            "p_outstanding": self.probs[2],
            "segmented": self.segmented,
            "faz_pixels": self.faz_pixels,
            "faz_area_mm2": self.faz_area_mm2,
            "width": self.width,
            "height": self.height,
            "field_mm": self.field_mm,
        }


def _sorted(records: Sequence[ReportRecord]) -> List[ReportRecord]:
    return sorted(records, key=lambda r: r.source_id)


def records_to_csv(records: Sequence[ReportRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in _sorted(records):
        area = r.faz_area_mm2
        writer.writerow([
            r.source_id,
            r.category.label,
            *(repr(p) for p in r.probs),
            "true" if r.segmented else "false",
            "" if r.faz_pixels is None else r.faz_pixels,
            "" if area is None else f"{area:.6g}",
            r.width,
            r.height,
            repr(r.field_mm),
        ])
    return buf.getvalue()


def records_to_json(records: Sequence[ReportRecord]) -> str:
    return json.dumps([r.to_dict() for r in _sorted(records)], indent=2) + "\n"


def make_report(records: Sequence[ReportRecord]) -> Tuple[bytes, bytes]:
    """(CSV bytes, JSON bytes), rows sorted by source_id."""
    return records_to_csv(records).encode("utf-8"), records_to_json(records).encode("utf-8")


def parse_csv(text: str) -> List[ReportRecord]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_HEADER:
        raise ConfigError(f"unexpected report header {reader.fieldnames}")
    out = []
    for line, row in enumerate(reader, start=2):
        try:
            out.append(ReportRecord(
                source_id=row["source_id"],
                category=row["category"],
                probs=(float(row["p_ungradable"]), float(row["p_gradable"]), float(row["p_outstanding"])),
                width=int(row["width"]),
                height=int(row["height"]),
                field_mm=float(row["field_mm"]),
                faz_pixels=int(row["faz_pixels"]) if row["faz_pixels"] else None,
            ))
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"report line {line}: {exc}") from None
    return out


def parse_json(text: str) -> List[ReportRecord]:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"report JSON line {exc.lineno}: {exc.msg}") from None
    return [
        ReportRecord(
            source_id=d["source_id"],
            category=d["category"],
            probs=(d["p_ungradable"], d["p_gradable"], d["p_outstanding"]),
            width=d["width"],
            height=d["height"],
            field_mm=d["field_mm"],
            faz_pixels=d["faz_pixels"],
        )
        for d in data
    ]
