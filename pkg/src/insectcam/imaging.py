"""Capture unit simulation: frames, ring buffer, brightness-spike trigger, synthetic transits."""

import logging
import math
import queue
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import synth
from .errors import ConfigError, DataError, DomainError, ShapeError

logger = logging.getLogger(__name__)

# Rec.601 luma weights scaled by 1000 so thresholds compare exactly in integers.
LUMA_WEIGHTS_MILLI = np.array([299, 587, 114], dtype=np.int64)

DEFAULT_FPS = 25.0
DEFAULT_BUFFER_SECONDS = 1.5


@dataclass(eq=False)
class Frame:
    """8-bit RGB raster, shape (height, width, 3), row-major."""

    pixels: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ShapeError(f"frame pixels must have shape (h, w, 3), got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ShapeError("frame must be at least 1x1")
        if px.dtype != np.uint8:
            if np.any(px < 0) or np.any(px > 255):
                raise DataError("pixel values must lie in 0..255")
            px = px.astype(np.uint8)
        self.pixels = px

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @classmethod
    def filled(cls, width: int, height: int, rgb: Sequence[int], timestamp: float = 0.0) -> "Frame":
        px = np.empty((height, width, 3), dtype=np.uint8)
        px[...] = np.asarray(rgb, dtype=np.uint8)
        return cls(px, timestamp)


def luma_milli(pixels: np.ndarray) -> np.ndarray:
    """Per-pixel luma times 1000 as exact integers (0..255000)."""
    return pixels.astype(np.int64) @ LUMA_WEIGHTS_MILLI


def mean_luminance(frame: Frame) -> float:
    total = int(luma_milli(frame.pixels).sum())
    return total / (1000.0 * frame.width * frame.height)


def ring_capacity(fps: float, seconds: float) -> int:
    if not (fps > 0 and seconds > 0):
        raise DomainError(f"fps and seconds must be positive, got fps={fps}, seconds={seconds}")
    return math.ceil(fps * seconds)


class FrameRing:
    """Fixed-capacity circular frame store; the oldest frame is overwritten first."""

    def __init__(self, capacity: int, width: int, height: int):
        if capacity < 1:
            raise DomainError(f"ring capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.width = width
        self.height = height
        self.slots: list[Frame | None] = [None] * capacity
        self.head = 0
        self.filled = 0

    def __len__(self) -> int:
        return self.filled

    def push(self, frame: Frame) -> Frame | None:
        if frame.width != self.width or frame.height != self.height:
            raise ShapeError(
                f"frame is {frame.width}x{frame.height}, ring expects {self.width}x{self.height}"
            )
        evicted = self.slots[self.head] if self.filled == self.capacity else None
        self.slots[self.head] = frame
        self.head = (self.head + 1) % self.capacity
        self.filled = min(self.filled + 1, self.capacity)
        return evicted

    def at_age(self, age: int) -> Frame:
        """Frame pushed `age` pushes ago (0 = newest)."""
        if not 0 <= age < self.filled:
            raise IndexError(f"age {age} outside ring contents ({self.filled} frames)")
        frame = self.slots[(self.head - 1 - age) % self.capacity]
        assert frame is not None
        return frame

    def frames(self) -> list[Frame]:
        """Stored frames, oldest first."""
        return [self.at_age(age) for age in range(self.filled - 1, -1, -1)]


@dataclass(frozen=True)
class TriggerConfig:
    baseline_window: int = 8
    ratio_threshold: float = 1.5
    cooldown: int = 38  # one ring length at 25 fps x 1.5 s
    followup_count: int = 2
    followup_stride: int = 1

    def __post_init__(self):
        if self.baseline_window < 1:
            raise ConfigError("baseline_window must be >= 1")
        if not self.ratio_threshold > 1:
            raise ConfigError("ratio_threshold must be > 1")
        if self.cooldown < 0:
            raise ConfigError("cooldown must be >= 0")
        if self.followup_count < 0:
            raise ConfigError("followup_count must be >= 0")
        if self.followup_stride < 1:
            raise ConfigError("followup_stride must be >= 1")

    @property
    def span(self) -> int:
        return self.followup_count * self.followup_stride

    @classmethod
    def from_dict(cls, data: dict) -> "TriggerConfig":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


@dataclass(frozen=True)
class CaptureEvent:
    trigger_index: int
    selected_indices: tuple[int, ...]

    def to_dict(self) -> dict:
        return {"trigger_index": self.trigger_index, "selected_indices": list(self.selected_indices)}


class TriggerDetector:
    """Online form of the ratio trigger, fed one luminance value per frame."""

    def __init__(self, cfg: TriggerConfig):
        self.cfg = cfg
        self._window: deque[float] = deque(maxlen=cfg.baseline_window)
        self._index = -1
        self._last: int | None = None

    def update(self, luma: float) -> bool:
        self._index += 1
        fired = False
        if len(self._window) == self.cfg.baseline_window:
            cooled = self._last is None or self._index - self._last >= self.cfg.cooldown
            baseline = math.fsum(self._window) / len(self._window)
            if cooled and luma >= self.cfg.ratio_threshold * baseline and luma > baseline:
                fired = True
                self._last = self._index
        self._window.append(luma)
        return fired

    @property
    def index(self) -> int:
        return self._index


def _selection(i: int, cfg: TriggerConfig, length: int | None) -> tuple[int, ...]:
    picks = (i + j * cfg.followup_stride for j in range(cfg.followup_count + 1))
    return tuple(p for p in picks if length is None or p < length)


def detect_triggers(luma_series: Sequence[float], cfg: TriggerConfig) -> list[CaptureEvent]:
    n = len(luma_series)
    if n < cfg.baseline_window + 1:
        raise DataError(
            f"luminance series has {n} values, need at least {cfg.baseline_window + 1}"
        )
    detector = TriggerDetector(cfg)
    events = []
    for i, value in enumerate(luma_series):
        if detector.update(float(value)):
            events.append(CaptureEvent(i, _selection(i, cfg, n)))
    return events


@dataclass
class Capture:
    event: CaptureEvent
    frames: list[Frame] = field(default_factory=list)


_END = object()


def capture_stream(
    frames: Iterable[Frame],
    cfg: TriggerConfig,
    capacity: int,
    queue_size: int | None = None,
) -> list[Capture]:
    """Run a frame source through a bounded hand-off into the ring and extract captures.

    A producer thread pushes frames into a bounded queue; this thread consumes them,
    owns the ring, runs the online trigger and pulls the selected frames back out of
    the ring once the last of them has arrived.
    """
    if capacity <= cfg.span:
        raise ConfigError(f"ring capacity {capacity} cannot hold a capture spanning {cfg.span + 1} frames")
    handoff: queue.Queue = queue.Queue(maxsize=queue_size or capacity)
    failure: list[BaseException] = []

    def produce():
        try:
            for frame in frames:
                handoff.put(frame)
        except BaseException as e:  # re-raised in the consumer
            failure.append(e)
        finally:
            handoff.put(_END)

    producer = threading.Thread(target=produce, name="frame-source", daemon=True)
    producer.start()

    ring: FrameRing | None = None
    detector = TriggerDetector(cfg)
    pending: list[CaptureEvent] = []
    captures: list[Capture] = []

    def extract(event: CaptureEvent, newest: int) -> Capture:
        assert ring is not None
        return Capture(event, [ring.at_age(newest - idx) for idx in event.selected_indices])

    while True:
        item = handoff.get()
        if item is _END:
            break
        frame: Frame = item
        if ring is None:
            ring = FrameRing(capacity, frame.width, frame.height)
        ring.push(frame)
        if detector.update(mean_luminance(frame)):
            i = detector.index
            pending.append(CaptureEvent(i, _selection(i, cfg, None)))
            logger.debug("trigger at frame %d", i)
        now = detector.index
        for event in [e for e in pending if e.selected_indices[-1] == now]:
            pending.remove(event)
            captures.append(extract(event, now))
    producer.join()
    if failure:
        raise failure[0]

    last = detector.index
    for event in pending:
        kept = tuple(i for i in event.selected_indices if i <= last)
        captures.append(extract(CaptureEvent(event.trigger_index, kept), last))
    captures.sort(key=lambda c: c.event.trigger_index)
    logger.info("stream of %d frames produced %d captures", last + 1, len(captures))
    return captures


# --- synthetic transits -------------------------------------------------------

AMBIENT_LEVEL = 8.0
ARENA_LEVEL = 70.0
SENSOR_NOISE = 3.0
FLASH_FRAMES = 3


@dataclass
class Transit:
    frames: list[Frame]
    masks: list[np.ndarray | None]  # ground-truth insect mask per frame, None when dark
    flash_indices: tuple[int, ...]


def _transit_layout(frame_count: int, baseline_window: int) -> tuple[int, int]:
    """(first flash index, number of flash frames)."""
    flashes = min(FLASH_FRAMES, frame_count)
    lead = max(min(baseline_window, frame_count - flashes), (frame_count - flashes) // 2)
    return lead, flashes


def _ambient_frame(rng: np.random.Generator, width: int, height: int) -> np.ndarray:
    level = AMBIENT_LEVEL + rng.uniform(-1.0, 1.0)
    px = level + rng.normal(0.0, 1.0, size=(height, width, 3))
    return np.clip(np.rint(px), 0, 255).astype(np.uint8)


def render_transit(
    class_id: int,
    seed: int,
    frame_count: int = 24,
    width: int = 320,
    height: int = 240,
    fps: float = DEFAULT_FPS,
    baseline_window: int = TriggerConfig.baseline_window,
) -> Transit:
    """Dark ambient frames, a short run of flash frames with an insect crossing, dark again."""
    if frame_count < 3:
        raise DomainError(f"frame_count must be >= 3, got {frame_count}")
    model = synth.class_model(class_id)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, class_id])))
    lead, flashes = _transit_layout(frame_count, baseline_window)

    length = 0.3 * min(width, height) * rng.uniform(0.9, 1.1)
    angle = rng.uniform(-synth.MAX_HEADING, synth.MAX_HEADING)
    start_x = width * rng.uniform(0.3, 0.4)
    step = width * 0.1
    cy = height * rng.uniform(0.4, 0.6)

    frames, masks = [], []
    for i in range(frame_count):
        t = i / fps
        k = i - lead
        if 0 <= k < flashes:
            canvas = np.full((height, width, 3), ARENA_LEVEL)
            mask = np.zeros((height, width), dtype=bool)
            synth.render_insect(canvas, mask, model, (start_x + k * step, cy), length, angle)
            canvas += rng.normal(0.0, SENSOR_NOISE, size=canvas.shape)
            synth.add_dust(canvas, mask, rng, count=4, max_area=1)
            frames.append(Frame(np.clip(np.rint(canvas), 0, 255).astype(np.uint8), t))
            masks.append(mask)
        else:
            frames.append(Frame(_ambient_frame(rng, width, height), t))
            masks.append(None)
    return Transit(frames, masks, tuple(range(lead, lead + flashes)))


def synth_transit(class_id: int, seed: int, frame_count: int = 24, width: int = 320, height: int = 240) -> list[Frame]:
    return render_transit(class_id, seed, frame_count, width, height).frames


def synth_ambient(seed: int, frame_count: int = 24, width: int = 64, height: int = 48) -> list[Frame]:
    """Dark frames with sensor noise only; never brighter than the trigger ratio."""
    rng = np.random.Generator(np.random.PCG64(seed))
    return [Frame(_ambient_frame(rng, width, height), i / DEFAULT_FPS) for i in range(frame_count)]
