"""Raster I/O, resizing, z-score normalisation and training augmentations."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from coips.errors import ConfigError, DecodeError, DimensionError, GeometryError, RangeError

MIN_SIDE = 8


@dataclass
class ImageTensor:
    pixels: np.ndarray  # [C, H, W], float32, in [0, 1] before normalisation
    field_mm: float
    source_id: str = ""

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[0] not in (1, 3):
            raise DimensionError(f"{self.source_id}: expected [C,H,W] with C in (1,3), got {self.pixels.shape}")
        if not self.field_mm > 0:
            raise ConfigError(f"{self.source_id}: field_mm must be positive, got {self.field_mm}")

    @property
    def channels(self) -> int:
        return self.pixels.shape[0]

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]

    def replace(self, pixels: np.ndarray) -> "ImageTensor":
        return ImageTensor(pixels, self.field_mm, self.source_id)

    def require_min_size(self, side: int = MIN_SIDE) -> None:
        if self.height < side or self.width < side:
            raise GeometryError(f"{self.source_id}: image {self.height}x{self.width} smaller than {side}x{side}")


@dataclass
class FazMask:
    pixels: np.ndarray  # [H, W] uint8 in {0, 1}
    source_id: str = ""
    foreground: int = field(init=False)

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise DimensionError(f"mask must be 2-D, got {px.shape}")
        if not np.isin(px, (0, 1)).all():
            raise ValueError("mask values must be 0 or 1")
        self.pixels = px.astype(np.uint8)
        self.foreground = int(self.pixels.sum())

    @property
    def shape(self) -> Tuple[int, int]:
        return self.pixels.shape


# ---------------------------------------------------------------------- codecs


def decode_image(data: bytes, declared_field_mm: float, source_id: str = "") -> ImageTensor:
    """Decode a PNG/JPEG/BMP byte stream; gray sources give C=1, colour C=3."""
    try:
        with Image.open(io.BytesIO(data)) as im:
            im.load()
            fmt = im.format
            if fmt not in ("PNG", "JPEG", "BMP"):
                raise DecodeError(f"unsupported format {fmt}", source_id)
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.float64) / 65535.0
                arr = arr[None]
            elif im.mode in ("1", "L", "LA", "P") and _is_gray(im):
                arr = np.asarray(im.convert("L"), dtype=np.float64)[None] / 255.0
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.float64).transpose(2, 0, 1) / 255.0
    except DecodeError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"cannot decode image: {exc}", source_id) from None
    return ImageTensor(arr.astype(np.float32), float(declared_field_mm), source_id)


def _is_gray(im: Image.Image) -> bool:
    if im.mode != "P":
        return True
    rgb = np.asarray(im.convert("RGB"))
    return bool((rgb[..., 0] == rgb[..., 1]).all() and (rgb[..., 1] == rgb[..., 2]).all())


def encode_gray_png(pixels: np.ndarray) -> bytes:
    """8-bit grayscale PNG of a [H, W] array in [0, 1]."""
    arr = np.clip(np.rint(np.asarray(pixels, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def encode_mask_png(mask: FazMask) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(mask.pixels * np.uint8(255), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def decode_mask_png(data: bytes, source_id: str = "") -> FazMask:
    img = decode_image(data, 1.0, source_id)
    return FazMask((img.pixels[0] >= 0.5).astype(np.uint8), source_id)


# ---------------------------------------------------------------------- geometry


def _align_corners_weights(n_in: int, n_out: int) -> np.ndarray:
    """[n_out, n_in] linear-interpolation matrix with corner pixels aligned."""
    mat = np.zeros((n_out, n_in))
    if n_in == 1 or n_out == 1:
        mat[:, 0] = 1.0
        return mat
    pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - lo
    rows = np.arange(n_out)
    mat[rows, lo] = 1.0 - frac
    mat[rows, lo + 1] += frac
    return mat


def resize(img: ImageTensor, target_h: int, target_w: int) -> ImageTensor:
    """Bilinear (align-corners) resize; the physical field of view is kept."""
    if target_h < 1 or target_w < 1:
        raise GeometryError(f"invalid resize target {target_h}x{target_w}")
    _, h, w = img.pixels.shape
    if (h, w) == (target_h, target_w):
        return img.replace(img.pixels.copy())
    ry = _align_corners_weights(h, target_h)
    rx = _align_corners_weights(w, target_w)
    out = np.einsum("oh,chw,pw->cop", ry, img.pixels.astype(np.float64), rx)
    return img.replace(out.astype(np.float32))


def resize_nearest(arr: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Nearest-neighbour resize of the last two axes (pixel-centre sampling)."""
    h, w = arr.shape[-2:]
    rows = np.minimum(((np.arange(target_h) + 0.5) * h / target_h).astype(int), h - 1)
    cols = np.minimum(((np.arange(target_w) + 0.5) * w / target_w).astype(int), w - 1)
    return arr[..., rows[:, None], cols[None, :]]


def zscore_normalize(img: ImageTensor) -> ImageTensor:
    """Per-channel (x - mean) / std with the population std; flat channels become 0."""
    px = img.pixels.astype(np.float64)
    mean = px.mean(axis=(1, 2), keepdims=True)
    std = px.std(axis=(1, 2), keepdims=True)
    flat = std < 1e-8
    out = np.where(flat, 0.0, (px - mean) / np.where(flat, 1.0, std))
    return img.replace(out.astype(np.float32))


def hflip(img: ImageTensor) -> ImageTensor:
    return img.replace(np.ascontiguousarray(img.pixels[:, :, ::-1]))


def _bilinear_sample(channel: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample ``channel`` at fractional coordinates; outside the raster reads 0."""
    h, w = channel.shape
    padded = np.pad(channel.astype(np.float64), 1)
    yy = ys + 1.0
    xx = xs + 1.0
    inside = (yy >= 0) & (yy <= h + 1) & (xx >= 0) & (xx <= w + 1)
    yy = np.clip(yy, 0, h + 1)
    xx = np.clip(xx, 0, w + 1)
    y0 = np.minimum(np.floor(yy).astype(int), h)
    x0 = np.minimum(np.floor(xx).astype(int), w)
    fy = yy - y0
    fx = xx - x0
    val = (
        padded[y0, x0] * (1 - fy) * (1 - fx)
        + padded[y0, x0 + 1] * (1 - fy) * fx
        + padded[y0 + 1, x0] * fy * (1 - fx)
        + padded[y0 + 1, x0 + 1] * fy * fx
    )
    return np.where(inside, val, 0.0)


def rotate(img: ImageTensor, degrees: float) -> ImageTensor:
    """Rotate counter-clockwise about the image centre with bilinear sampling."""
    if abs(degrees) > 180:
        raise RangeError(f"rotation angle {degrees} outside [-180, 180]")
    if degrees == 0:
        return img.replace(img.pixels.copy())
    _, h, w = img.pixels.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = math.radians(degrees)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    # inverse map: output pixel -> source location (y axis points down)
    src_x = cx + cos_t * dx - sin_t * dy
    src_y = cy + sin_t * dx + cos_t * dy
    out = np.stack([_bilinear_sample(ch, src_y, src_x) for ch in img.pixels])
    return img.replace(out.astype(np.float32))


def augment(img: ImageTensor, rng: np.random.Generator, flip_p: float = 0.5, max_degrees: float = 15.0) -> ImageTensor:
    """Random horizontal flip then a uniform rotation in [-max_degrees, max_degrees]."""
    if rng.random() < flip_p:
        img = hflip(img)
    return rotate(img, float(rng.uniform(-max_degrees, max_degrees)))


def preprocess(img: ImageTensor, size: int) -> np.ndarray:
    """Network input: resize to ``size`` x ``size`` then z-score; returns [C, size, size]."""
    return zscore_normalize(resize(img, size, size)).pixels
