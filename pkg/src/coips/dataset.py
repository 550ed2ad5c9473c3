"""Loading manifest rows into network-ready arrays."""

from __future__ import annotations

from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from coips.errors import ConfigError, DecodeError
from coips.imaging import FazMask, ImageTensor, decode_image, decode_mask_png, preprocess
from coips.manifest import ManifestRow


def read_bytes(path: Path, source_id: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise DecodeError(f"cannot read {path}: {exc}", source_id) from None


def load_image(row: ManifestRow, default_field_mm: float = 3.0) -> ImageTensor:
    field_mm = row.field_mm if row.field_mm is not None else default_field_mm
    img = decode_image(read_bytes(row.image_path, row.source_id), field_mm, row.source_id)
    if img.channels == 3:
        # OCTA en-face images are single channel; colour exports are averaged
        img = img.replace(img.pixels.mean(axis=0, keepdims=True))
    img.require_min_size()
    return img


def load_mask(row: ManifestRow) -> FazMask:
    if row.mask_path is None:
        raise ConfigError(f"{row.source_id}: manifest row has no mask_path")
    return decode_mask_png(read_bytes(row.mask_path, row.source_id), row.source_id)


def stack_inputs(images: Sequence[ImageTensor], size: int) -> np.ndarray:
    """[N, 1, size, size] float32 batch of preprocessed images."""
    if not images:
        return np.zeros((0, 1, size, size), np.float32)
    return np.stack([preprocess(img, size) for img in images]).astype(np.float32)


def select(rows: Sequence[ManifestRow], split: Optional[str] = None) -> List[ManifestRow]:
    return [r for r in rows if split is None or r.split == split]


def batches(n: int, batch_size: int, rng: Optional[np.random.Generator] = None):
    """Index arrays covering ``range(n)``; shuffled when ``rng`` is given."""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]
