"""Parametric synthetic insects drawn onto float RGB canvases.

Classes come in groups of four sharing a hue pair. Inside a group, classes differ by
stripe count and duty, body aspect and appendage count, so the discriminative detail
sits at high spatial frequency and only survives when the insect is seen up close.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError

MAX_CLASSES = 16
MAX_HEADING = math.radians(10.0)

# (body, stripe) colours, every one brighter than the arena background in luma.
HUE_PAIRS = (
    ((235, 185, 50), (160, 110, 50)),
    ((210, 70, 60), (245, 200, 190)),
    ((110, 170, 90), (225, 225, 120)),
    ((120, 120, 200), (235, 235, 235)),
)
STRIPE_COUNTS = (2, 3, 5, 8)
STRIPE_DUTIES = (0.25, 0.4, 0.55, 0.7)
BODY_ASPECTS = (1.8, 2.1, 2.4, 2.7)
LEG_PAIRS = (3, 2, 3, 2)
APPENDAGE_RGB = (175, 170, 150)


@dataclass(frozen=True)
class InsectModel:
    class_id: int
    body_rgb: tuple[int, int, int]
    stripe_rgb: tuple[int, int, int]
    stripe_count: int
    stripe_duty: float
    body_aspect: float
    leg_pairs: int


def class_model(class_id: int) -> InsectModel:
    if not (isinstance(class_id, (int, np.integer)) and 0 <= class_id < MAX_CLASSES):
        raise DataError(f"class_id must be in 0..{MAX_CLASSES - 1}, got {class_id!r}")
    group, pattern = divmod(int(class_id), 4)
    body, stripe = HUE_PAIRS[group]
    return InsectModel(
        class_id=int(class_id),
        body_rgb=body,
        stripe_rgb=stripe,
        stripe_count=STRIPE_COUNTS[pattern],
        stripe_duty=STRIPE_DUTIES[pattern],
        body_aspect=BODY_ASPECTS[pattern],
        leg_pairs=LEG_PAIRS[pattern],
    )


def _segment_distance(u, v, p0, p1):
    (u0, v0), (u1, v1) = p0, p1
    du, dv = u1 - u0, v1 - v0
    t = np.clip(((u - u0) * du + (v - v0) * dv) / (du * du + dv * dv), 0.0, 1.0)
    return np.hypot(u - (u0 + t * du), v - (v0 + t * dv))


def _appendages(model: InsectModel, a: float, b: float):
    """Leg and antenna segments in body coordinates (u along the body, v across)."""
    segments = []
    n = model.leg_pairs
    for i in range(n):
        u = a * (-0.45 + 0.9 * i / max(n - 1, 1))
        for side in (-1.0, 1.0):
            segments.append(((u, side * 0.7 * b), (u + 0.15 * a, side * (b + 0.55 * a))))
    for side in (-1.0, 1.0):
        segments.append(((0.9 * a, side * 0.3 * b), (1.3 * a, side * (b + 0.3 * a))))
    return segments


def render_insect(
    canvas: np.ndarray,
    mask: np.ndarray,
    model: InsectModel,
    center: tuple[float, float],
    length: float,
    angle: float,
) -> None:
    """Paint the insect into canvas (h, w, 3 floats) in place and OR its footprint into mask."""
    h, w = mask.shape
    cx, cy = center
    a = length / 2.0
    b = a / model.body_aspect
    reach = 1.45 * a + b
    x0, x1 = max(0, int(math.floor(cx - reach))), min(w, int(math.ceil(cx + reach)) + 1)
    y0, y1 = max(0, int(math.floor(cy - reach))), min(h, int(math.ceil(cy + reach)) + 1)
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1].astype(np.float64)
    dx, dy = xs - cx, ys - cy
    cos_t, sin_t = math.cos(angle), math.sin(angle)
    u = dx * cos_t + dy * sin_t
    v = -dx * sin_t + dy * cos_t

    half_width = max(0.6, length / 70.0)
    limbs = np.zeros(u.shape, dtype=bool)
    for p0, p1 in _appendages(model, a, b):
        limbs |= _segment_distance(u, v, p0, p1) <= half_width

    body = (u / a) ** 2 + (v / b) ** 2 <= 1.0
    phase = (u + a) / (2.0 * a) * model.stripe_count
    striped = body & ((phase - np.floor(phase)) < model.stripe_duty)

    region = canvas[y0:y1, x0:x1]
    region[limbs & ~body] = APPENDAGE_RGB
    region[body & ~striped] = model.body_rgb
    region[striped] = model.stripe_rgb
    mask[y0:y1, x0:x1] |= body | limbs


def add_dust(
    canvas: np.ndarray,
    avoid: np.ndarray,
    rng: np.random.Generator,
    count: int,
    max_area: int,
    rgb: tuple[int, int, int] = (215, 210, 200),
    clearance: int = 3,
) -> np.ndarray:
    """Scatter `count` bright specks of 1..max_area pixels, kept clear of `avoid` and of each other."""
    h, w = avoid.shape
    dust = np.zeros((h, w), dtype=bool)
    for _ in range(count):
        for _attempt in range(50):
            area = int(rng.integers(1, max(1, max_area) + 1))
            x = int(rng.integers(0, max(1, w - area)))
            y = int(rng.integers(0, h))
            ya, yb = max(0, y - clearance), min(h, y + clearance + 1)
            xa, xb = max(0, x - clearance), min(w, x + area + clearance)
            if avoid[ya:yb, xa:xb].any() or dust[ya:yb, xa:xb].any():
                continue
            dust[y, x : x + area] = True
            break
    canvas[dust] = rgb
    return dust
