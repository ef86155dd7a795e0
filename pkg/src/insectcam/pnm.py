"""Binary portable anymap I/O (P6 colour, P5 grey) through Pillow."""

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError


def write_rgb(path: str | Path, pixels: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8), mode="RGB").save(path, format="PPM")
    return path


def write_gray(path: str | Path, values: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(values, dtype=np.uint8), mode="L").save(path, format="PPM")
    return path


def _open(path: str | Path) -> Image.Image:
    try:
        return Image.open(path)
    except FileNotFoundError:
        raise DataError(f"image not found: {path}") from None
    except UnidentifiedImageError:
        raise DataError(f"not a readable image: {path}") from None


def read_rgb(path: str | Path) -> np.ndarray:
    with _open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8).copy()


def read_gray(path: str | Path) -> np.ndarray:
    with _open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.uint8).copy()
