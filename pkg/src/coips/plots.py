"""Tiny SVG renderers for ROC curves and confusion matrices."""

from __future__ import annotations

from typing import Dict, List, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np

_COLOURS = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e")


def roc_svg(curves: Dict[str, List[Tuple[float, float, float]]], size: int = 320) -> str:
    pad = 40
    span = size - 2 * pad

    def xy(fpr: float, tpr: float) -> str:
        return f"{pad + fpr * span:.2f},{size - pad - tpr * span:.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="white" stroke="black"/>',
        f'<line x1="{pad}" y1="{size - pad}" x2="{size - pad}" y2="{pad}" stroke="#999" stroke-dasharray="4 3"/>',
        f'<text x="{size / 2}" y="{size - 8}" text-anchor="middle" font-size="12">false positive rate</text>',
        f'<text x="12" y="{size / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 12 {size / 2})">true positive rate</text>',
    ]
    for i, (name, pts) in enumerate(curves.items()):
        colour = _COLOURS[i % len(_COLOURS)]
        coords = " ".join(xy(f, t) for _, f, t in pts)
        parts.append(f'<polyline fill="none" stroke="{colour}" stroke-width="2" points="{coords}"/>')
        parts.append(f'<text x="{pad + 8}" y="{pad + 16 + 14 * i}" font-size="11" fill="{colour}">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def confusion_svg(counts: np.ndarray, labels: Sequence[str], cell: int = 60) -> str:
    k = counts.shape[0]
    pad = 90
    size = pad + k * cell + 10
    peak = max(int(counts.max()), 1)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">']
    for i in range(k):
        for j in range(k):
            v = int(counts[i, j])
            shade = int(255 - 200 * v / peak)
            x, y = pad + j * cell, pad + i * cell
            parts.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                         f'fill="rgb({shade},{shade},255)" stroke="white"/>')
            parts.append(f'<text x="{x + cell / 2}" y="{y + cell / 2 + 4}" text-anchor="middle" font-size="13">{v}</text>')
    for i, name in enumerate(labels):
        parts.append(f'<text x="{pad - 6}" y="{pad + i * cell + cell / 2 + 4}" text-anchor="end" '
                     f'font-size="11">{escape(name)}</text>')
        parts.append(f'<text x="{pad + i * cell + cell / 2}" y="{pad - 8}" text-anchor="middle" '
                     f'font-size="11">{escape(name)}</text>')
    parts.append(f'<text x="{pad + k * cell / 2}" y="16" text-anchor="middle" font-size="12">predicted</text>')
    parts.append(f'<text x="12" y="{pad + k * cell / 2}" font-size="12" '
                 f'transform="rotate(-90 12 {pad + k * cell / 2})" text-anchor="middle">true</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
