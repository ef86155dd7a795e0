"""Insect localization: threshold baseline, connected components, dust filter, square crop, resize, IoU."""

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import pnm
from .errors import ConfigError, DataError, NoInsectError, ShapeError
from .imaging import Frame, luma_milli

logger = logging.getLogger(__name__)

REFERENCE_FRAME_AREA = 1440 * 1080
REFERENCE_MIN_AREA = 50

_STRUCTURES = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


@dataclass(eq=False)
class Mask:
    bits: np.ndarray  # bool, shape (height, width)

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2 or bits.shape[0] < 1 or bits.shape[1] < 1:
            raise ShapeError(f"mask must be a non-empty 2-D array, got shape {bits.shape}")
        self.bits = bits.astype(bool, copy=False)

    @property
    def width(self) -> int:
        return int(self.bits.shape[1])

    @property
    def height(self) -> int:
        return int(self.bits.shape[0])

    @classmethod
    def from_cells(cls, width: int, height: int, cells) -> "Mask":
        """Mask with the given (row, col) cells set."""
        bits = np.zeros((height, width), dtype=bool)
        for r, c in cells:
            bits[r, c] = True
        return cls(bits)

    @classmethod
    def read_pgm(cls, path: str | Path) -> "Mask":
        return cls(pnm.read_gray(path) > 127)

    def write_pgm(self, path: str | Path) -> Path:
        return pnm.write_gray(path, np.where(self.bits, 255, 0))


@dataclass(frozen=True)
class BBox:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ShapeError(f"bbox needs w, h >= 1, got {self.w}x{self.h}")
        if self.x < 0 or self.y < 0:
            raise ShapeError(f"bbox corner must be non-negative, got ({self.x}, {self.y})")

    @property
    def area(self) -> int:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return self.x + self.w / 2.0, self.y + self.h / 2.0

    def within(self, width: int, height: int) -> bool:
        return self.x + self.w <= width and self.y + self.h <= height

    def contains(self, other: "BBox") -> bool:
        return (
            self.x <= other.x
            and self.y <= other.y
            and other.x + other.w <= self.x + self.w
            and other.y + other.h <= self.y + self.h
        )

    def to_dict(self) -> dict[str, int]:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h}


@dataclass(frozen=True)
class CropConfig:
    connectivity: int = 8
    min_area: int = REFERENCE_MIN_AREA
    margin: float = 0.05
    target_size: int = 224

    def __post_init__(self):
        if self.connectivity not in _STRUCTURES:
            raise ConfigError(f"connectivity must be 4 or 8, got {self.connectivity}")
        if self.min_area < 1:
            raise ConfigError("min_area must be >= 1")
        if self.margin < 0:
            raise ConfigError("margin must be >= 0")
        if self.target_size < 1:
            raise ConfigError("target_size must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "CropConfig":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


@dataclass(frozen=True)
class Component:
    area: int
    bbox: BBox


def default_min_area(width: int, height: int) -> int:
    """Dust threshold: 50 px at 1440x1080, scaled with image area, never below 2."""
    return max(2, round(REFERENCE_MIN_AREA * width * height / REFERENCE_FRAME_AREA))


def threshold_mask(frame: Frame, threshold: int) -> Mask:
    """Global-threshold baseline: set where luma > threshold."""
    return Mask(luma_milli(frame.pixels) > 1000 * int(threshold))


def connected_components(mask: Mask, connectivity: int = 8) -> list[Component]:
    """Components in descending area, ties by (y, x) of their box."""
    if connectivity not in _STRUCTURES:
        raise ConfigError(f"connectivity must be 4 or 8, got {connectivity}")
    labels, count = ndimage.label(mask.bits, structure=_STRUCTURES[connectivity])
    if count == 0:
        return []
    areas = np.bincount(labels.ravel(), minlength=count + 1)
    comps = []
    for label, (rows, cols) in enumerate(ndimage.find_objects(labels), start=1):
        bbox = BBox(cols.start, rows.start, cols.stop - cols.start, rows.stop - rows.start)
        comps.append(Component(int(areas[label]), bbox))
    comps.sort(key=lambda c: (-c.area, c.bbox.y, c.bbox.x, c.bbox.h, c.bbox.w))
    return comps


def mask_to_bbox(mask: Mask, cfg: CropConfig) -> BBox:
    survivors = [c for c in connected_components(mask, cfg.connectivity) if c.area >= cfg.min_area]
    if not survivors:
        raise NoInsectError(f"no component of at least {cfg.min_area} px in mask")
    if len(survivors) > 1:
        logger.debug("%d components survive the dust filter, keeping the largest", len(survivors))
    return survivors[0].bbox


def _round_half_down(v: float) -> int:
    return math.ceil(v - 0.5)


def square_expand(bbox: BBox, margin: float, image_w: int, image_h: int) -> BBox:
    # exact: 50 px at margin 0.05 is 55, not 56
    side = math.ceil(max(bbox.w, bbox.h) * (1 + 2 * Fraction(str(margin))))
    side = min(side, image_w, image_h)
    cx, cy = bbox.center
    x = _round_half_down(cx - side / 2.0)
    y = _round_half_down(cy - side / 2.0)
    x = min(max(x, 0), image_w - side)
    y = min(max(y, 0), image_h - side)
    return BBox(x, y, side, side)


def crop(frame: Frame, bbox: BBox) -> Frame:
    if not bbox.within(frame.width, frame.height):
        raise DataError(f"bbox {bbox.to_dict()} outside {frame.width}x{frame.height} frame")
    region = frame.pixels[bbox.y : bbox.y + bbox.h, bbox.x : bbox.x + bbox.w].copy()
    return Frame(region, frame.timestamp)


def _axis_samples(src: int, dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    s = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    s = np.clip(s, 0.0, src - 1)
    i0 = np.floor(s).astype(np.intp)
    i1 = np.minimum(i0 + 1, src - 1)
    return i0, i1, s - i0


def resize_bilinear(frame: Frame, out_w: int, out_h: int) -> Frame:
    """Half-pixel-centre bilinear resampling, rounded half away from zero."""
    if out_w < 1 or out_h < 1:
        raise ShapeError(f"output size must be >= 1, got {out_w}x{out_h}")
    px = frame.pixels.astype(np.float64)
    y0, y1, fy = _axis_samples(frame.height, out_h)
    x0, x1, fx = _axis_samples(frame.width, out_w)
    fy = fy[:, None, None]
    rows = px[y0] * (1.0 - fy) + px[y1] * fy
    fx = fx[None, :, None]
    out = rows[:, x0] * (1.0 - fx) + rows[:, x1] * fx
    return Frame(np.floor(out + 0.5).astype(np.uint8), frame.timestamp)


def crop_insect(frame: Frame, mask: Mask, cfg: CropConfig) -> tuple[BBox, BBox, Frame]:
    """Tight box, its square expansion, and the square crop resized to target_size."""
    if (mask.width, mask.height) != (frame.width, frame.height):
        raise ShapeError("mask and frame dimensions differ")
    tight = mask_to_bbox(mask, cfg)
    square = square_expand(tight, cfg.margin, frame.width, frame.height)
    patch = resize_bilinear(crop(frame, square), cfg.target_size, cfg.target_size)
    return tight, square, patch


def bbox_iou(a: BBox, b: BBox) -> float:
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def mask_iou(pred: Mask, truth: Mask) -> float:
    if pred.bits.shape != truth.bits.shape:
        raise ShapeError(f"mask shapes differ: {pred.bits.shape} vs {truth.bits.shape}")
    union = int(np.count_nonzero(pred.bits | truth.bits))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(pred.bits & truth.bits)) / union
