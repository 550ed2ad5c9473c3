"""Deterministic OCTA-like images with quality labels and elliptical FAZ masks.

Each sample is a band-passed noise field shaped into a bright capillary-like
network with a dark, capillary-free ellipse near the centre. Quality artifacts
follow the three grading categories:

* Outstanding: clean, or faint horizontal stripe noise.
* Gradable: moderate blur or moderate stripe noise.
* Ungradable: heavy blur, or the macula pushed far off-centre.

The mask is the exact generating ellipse sampled at pixel centres.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
from scipy.ndimage import gaussian_filter

from coips.errors import ConfigError
from coips.imaging import FazMask, ImageTensor, encode_gray_png, encode_mask_png
from coips.labels import Quality, QualityLabel
from coips.manifest import ManifestRow, write_manifest
from coips.splits import HoldoutScheme, split_dataset


@dataclass(frozen=True)
class SynthSpec:
    counts: Tuple[int, int, int] = (300, 300, 300)  # Ungradable, Gradable, Outstanding
    image_size: int = 64
    field_mm: float = 3.0
    seed: int = 42
    faz_semi_axes_mm: Tuple[float, float] = (0.40, 0.70)
    center_jitter: float = 0.06  # fraction of width, good-quality samples
    offset_range: Tuple[float, float] = (0.28, 0.36)  # fraction of width, off-centre Ungradable
    offset_threshold: float = 0.25
    gradable_blur: Tuple[float, float] = (1.0, 2.0)
    ungradable_blur: Tuple[float, float] = (3.0, 4.5)
    slight_stripe_amp: Tuple[float, float] = (0.01, 0.04)
    moderate_stripe_amp: Tuple[float, float] = (0.10, 0.20)
    stripe_period_px: Tuple[float, float] = (4.0, 10.0)

    def __post_init__(self):
        if len(self.counts) != 3 or any(int(c) < 0 for c in self.counts):
            raise ConfigError(f"counts must be three non-negative integers, got {self.counts}")
        if self.image_size < 8:
            raise ConfigError("image_size must be at least 8")
        if not self.field_mm > 0:
            raise ConfigError("field_mm must be positive")
        lo, hi = self.faz_semi_axes_mm
        if not 0 < lo <= hi < self.field_mm / 4:
            raise ConfigError(f"FAZ semi-axes {self.faz_semi_axes_mm} must lie in (0, field_mm/4)")
        if self.offset_range[0] <= self.offset_threshold:
            raise ConfigError("off-centre offsets must exceed the Ungradable threshold")

    @classmethod
    def from_dict(cls, data: dict) -> "SynthSpec":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass(frozen=True)
class SampleParams:
    """Everything needed to render one sample (a pure function of spec/class/index)."""

    center: Tuple[float, float]  # (row, col) in pixels
    semi_axes_px: Tuple[float, float]
    angle: float
    blur_sigma: float = 0.0
    stripe_amp: float = 0.0
    stripe_period: float = 8.0
    stripe_phase: float = 0.0
    texture_seed: int = 0


def sample_params(spec: SynthSpec, klass: Quality, index: int) -> SampleParams:
    klass = Quality.parse(klass)
    rng = np.random.default_rng([spec.seed, int(klass), index])
    n = spec.image_size
    px_per_mm = n / spec.field_mm
    a, b = (rng.uniform(*spec.faz_semi_axes_mm) * px_per_mm for _ in range(2))
    angle = rng.uniform(0, math.pi)
    mid = (n - 1) / 2.0
    variant = rng.random()

    def jitter():
        r = spec.center_jitter * n * math.sqrt(rng.random())
        phi = rng.uniform(0, 2 * math.pi)
        return mid + r * math.sin(phi), mid + r * math.cos(phi)

    center = jitter()
    blur = amp = 0.0
    if klass == Quality.OUTSTANDING:
        if variant < 0.5:
            amp = rng.uniform(*spec.slight_stripe_amp)
    elif klass == Quality.GRADABLE:
        if variant < 0.5:
            blur = rng.uniform(*spec.gradable_blur)
        else:
            amp = rng.uniform(*spec.moderate_stripe_amp)
    else:
        if variant < 0.5:
            blur = rng.uniform(*spec.ungradable_blur)
        else:
            r = rng.uniform(*spec.offset_range) * n
            phi = rng.uniform(0, 2 * math.pi)
            center = (mid + r * math.sin(phi), mid + r * math.cos(phi))
    return SampleParams(
        center=center,
        semi_axes_px=(a, b),
        angle=angle,
        blur_sigma=blur,
        stripe_amp=amp,
        stripe_period=rng.uniform(*spec.stripe_period_px),
        stripe_phase=rng.uniform(0, 2 * math.pi),
        texture_seed=int(rng.integers(0, 2**63 - 1)),
    )


def quality_of(params: SampleParams, spec: SynthSpec) -> Quality:
    """Grade a parameter set by the generator's thresholds."""
    n = spec.image_size
    mid = (n - 1) / 2.0
    offset = math.hypot(params.center[0] - mid, params.center[1] - mid) / n
    if params.blur_sigma >= spec.ungradable_blur[0] or offset > spec.offset_threshold:
        return Quality.UNGRADABLE
    if params.blur_sigma >= spec.gradable_blur[0] or params.stripe_amp >= spec.moderate_stripe_amp[0]:
        return Quality.GRADABLE
    return Quality.OUTSTANDING


def ellipse_mask(size: int, center: Tuple[float, float], semi_axes: Tuple[float, float], angle: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - center[0], xx - center[1]
    c, s = math.cos(angle), math.sin(angle)
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return ((u / semi_axes[0]) ** 2 + (v / semi_axes[1]) ** 2 <= 1.0).astype(np.uint8)


def vessel_texture(size: int, rng: np.random.Generator) -> np.ndarray:
    """Bright thin ridges along the zero-crossings of band-passed noise."""
    noise = rng.standard_normal((size, size))
    band = gaussian_filter(noise, 1.4) - gaussian_filter(noise, 4.0)
    band /= band.std() + 1e-12
    ridges = np.clip(1.0 - np.abs(band) / 0.45, 0.0, 1.0) ** 1.2
    return 0.2 + 0.7 * ridges


def render(spec: SynthSpec, params: SampleParams) -> Tuple[np.ndarray, np.ndarray]:
    n = spec.image_size
    rng = np.random.default_rng(params.texture_seed)
    mask = ellipse_mask(n, params.center, params.semi_axes_px, params.angle)
    image = vessel_texture(n, rng)
    faz = 0.06 + 0.03 * rng.random((n, n))
    image = np.where(mask.astype(bool), faz, image)
    if params.blur_sigma > 0:
        image = gaussian_filter(image, params.blur_sigma, mode="reflect")
    if params.stripe_amp > 0:
        rows = np.arange(n, dtype=np.float64)[:, None]
        image = image + params.stripe_amp * np.sin(2 * math.pi * rows / params.stripe_period + params.stripe_phase)
    return np.clip(image, 0.0, 1.0), mask


def generate_sample(spec: SynthSpec, klass: Quality, index: int) -> Tuple[ImageTensor, QualityLabel, FazMask]:
    klass = Quality.parse(klass)
    params = sample_params(spec, klass, index)
    image, mask = render(spec, params)
    sid = sample_id(klass, index)
    return (
        ImageTensor(image[None].astype(np.float32), spec.field_mm, sid),
        QualityLabel(quality_of(params, spec)),
        FazMask(mask, sid),
    )


def sample_id(klass: Quality, index: int) -> str:
    return f"syn-{Quality.parse(klass).name.lower()}-{index:05d}"


def laplacian_energy(image: np.ndarray) -> float:
    """Mean squared 4-neighbour Laplacian; a simple sharpness score."""
    x = np.asarray(image, dtype=np.float64)
    lap = -4 * x[1:-1, 1:-1] + x[:-2, 1:-1] + x[2:, 1:-1] + x[1:-1, :-2] + x[1:-1, 2:]
    return float((lap**2).mean())


def generate_corpus(spec: SynthSpec, out_dir: Union[str, Path]) -> List[ManifestRow]:
    """Write images/, masks/ and manifest.csv; splits are stratified by class."""
    out_dir = Path(out_dir)
    rows: List[ManifestRow] = []
    if sum(spec.counts) == 0:
        return rows
    try:
        (out_dir / "images").mkdir(parents=True, exist_ok=True)
        (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create corpus directory {out_dir}: {exc}") from None
    for klass in Quality:
        count = int(spec.counts[int(klass)])
        if count == 0:
            continue
        ids = [sample_id(klass, i) for i in range(count)]
        split = split_dataset(ids, HoldoutScheme(), seed=spec.seed + int(klass)).assignment
        for i, sid in enumerate(ids):
            image, label, mask = generate_sample(spec, klass, i)
            img_path = out_dir / "images" / f"{sid}.png"
            mask_path = out_dir / "masks" / f"{sid}.png"
            _write(img_path, encode_gray_png(image.pixels[0]))
            _write(mask_path, encode_mask_png(mask))
            rows.append(ManifestRow(sid, img_path, label.category, mask_path, spec.field_mm, str(split[sid])))
    write_manifest(rows, out_dir / "manifest.csv")
    return rows


def _write(path: Path, blob: bytes) -> None:
    try:
        path.write_bytes(blob)
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from None
