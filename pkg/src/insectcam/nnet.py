"""Small-CNN engine in numpy: spec parsing, forward/backward passes, SGD training, parameter files.

Parameters are held as float32 arrays; every computation casts to float64 first.
Random numbers come from numpy's PCG64 bit generator keyed by the caller's seed.
"""

import json
import logging
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    BadMagicError,
    ConfigError,
    DataError,
    ShapeError,
    TruncatedParamsError,
    UnsupportedVersionError,
)
from .imaging import Frame
from .taxonomy import ProbVector
from .validate import validate_document

logger = logging.getLogger(__name__)

Params = list[dict[str, np.ndarray]]

PARAM_MAGIC = b"ICNN"
PARAM_VERSION = 1


def make_rng(seed: int, *keys: str | int) -> np.random.Generator:
    """PCG64 generator keyed by (seed, *keys); string keys are hashed with CRC-32."""
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    words += [zlib.crc32(k.encode()) if isinstance(k, str) else int(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))


# --- layers -------------------------------------------------------------------


@dataclass(frozen=True)
class Conv2D:
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    type: str = field(default="conv2d", init=False)


@dataclass(frozen=True)
class ReLU:
    type: str = field(default="relu", init=False)


@dataclass(frozen=True)
class MaxPool2D:
    kernel: int
    stride: int | None = None
    type: str = field(default="maxpool2d", init=False)

    @property
    def step(self) -> int:
        return self.stride or self.kernel


@dataclass(frozen=True)
class Flatten:
    type: str = field(default="flatten", init=False)


@dataclass(frozen=True)
class Dense:
    out_features: int
    type: str = field(default="dense", init=False)


@dataclass(frozen=True)
class Softmax:
    type: str = field(default="softmax", init=False)


Layer = Conv2D | ReLU | MaxPool2D | Flatten | Dense | Softmax
_LAYER_TYPES = {cls.__dataclass_fields__["type"].default: cls for cls in (Conv2D, ReLU, MaxPool2D, Flatten, Dense, Softmax)}


def _layer_from_dict(data: dict[str, Any]) -> Layer:
    kind = data.get("type")
    cls = _LAYER_TYPES.get(kind)
    if cls is None:
        raise ConfigError(f"unknown layer type {kind!r}")
    kwargs = {k: v for k, v in data.items() if k != "type"}
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"bad {kind} layer {data}: {e}") from None


def _out_shape(layer: Layer, shape: tuple[int, ...]) -> tuple[int, ...]:
    if isinstance(layer, (Conv2D, MaxPool2D)):
        if len(shape) != 3:
            raise ShapeError(f"{layer.type} needs a (C, H, W) input, got {shape}")
        c, h, w = shape
        if isinstance(layer, Conv2D):
            k, s, p = layer.kernel, layer.stride, layer.padding
            c = layer.out_channels
        else:
            k, s, p = layer.kernel, layer.step, 0
        if k < 1 or s < 1 or p < 0:
            raise ShapeError(f"bad {layer.type} hyperparameters {layer}")
        ho, wo = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
        if ho < 1 or wo < 1 or c < 1:
            raise ShapeError(f"{layer.type} maps {shape} to an empty output")
        return (c, ho, wo)
    if isinstance(layer, Flatten):
        return (math.prod(shape),)
    if isinstance(layer, Dense):
        if len(shape) != 1:
            raise ShapeError(f"dense needs a flat input, got {shape}; add a flatten layer")
        if layer.out_features < 1:
            raise ShapeError("dense out_features must be >= 1")
        return (layer.out_features,)
    return shape


@dataclass(frozen=True)
class NetSpec:
    input_shape: tuple[int, ...]
    num_classes: int
    layers: tuple[Layer, ...]
    shapes: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Softmax) and i != len(self.layers) - 1:
                raise ShapeError("softmax is only allowed as the last layer")
            shapes.append(_out_shape(layer, shapes[-1]))
        if shapes[-1] != (self.num_classes,):
            raise ShapeError(f"network output {shapes[-1]} does not match {self.num_classes} classes")
        object.__setattr__(self, "shapes", tuple(shapes))

    @property
    def body(self) -> tuple[Layer, ...]:
        """Layers up to the logits; a trailing softmax is the output head."""
        if self.layers and isinstance(self.layers[-1], Softmax):
            return self.layers[:-1]
        return self.layers

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "NetSpec":
        validate_document(data, "net_spec", "net spec")
        return cls(
            input_shape=tuple(data["input_shape"]),
            num_classes=int(data["num_classes"]),
            layers=tuple(_layer_from_dict(layer) for layer in data["layers"]),
        )

    def to_dict(self) -> dict[str, Any]:
        layers = []
        for layer in self.layers:
            d = asdict(layer)
            layers.append({"type": d.pop("type"), **{k: v for k, v in d.items() if v is not None}})
        return {"input_shape": list(self.input_shape), "num_classes": self.num_classes, "layers": layers}


def load_spec(path: str | Path) -> NetSpec:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"net spec not found: {path}")
    with open(path, encoding="utf-8") as f:
        return NetSpec.from_dict(json.load(f))


def _param_shapes(spec: NetSpec) -> list[dict[str, tuple[int, ...]]]:
    shapes = []
    for layer, in_shape in zip(spec.layers, spec.shapes):
        if isinstance(layer, Conv2D):
            shapes.append({"W": (layer.out_channels, in_shape[0], layer.kernel, layer.kernel), "b": (layer.out_channels,)})
        elif isinstance(layer, Dense):
            shapes.append({"W": (layer.out_features, in_shape[0]), "b": (layer.out_features,)})
        else:
            shapes.append({})
    return shapes


def param_count(spec: NetSpec) -> int:
    return sum(math.prod(s) for layer in _param_shapes(spec) for s in layer.values())


def init_params(spec: NetSpec, seed: int) -> Params:
    """He-normal weights (std sqrt(2 / fan_in)), zero biases."""
    rng = make_rng(seed, "init")
    params: Params = []
    for shapes in _param_shapes(spec):
        if not shapes:
            params.append({})
            continue
        w_shape = shapes["W"]
        fan_in = math.prod(w_shape[1:])
        w = rng.standard_normal(w_shape) * math.sqrt(2.0 / fan_in)
        params.append({"W": w.astype(np.float32), "b": np.zeros(shapes["b"], dtype=np.float32)})
    return params


# --- numeric kernels ------------------------------------------------------------


def _windows(x: np.ndarray, k: int, s: int) -> np.ndarray:
    """(N, C, Ho, Wo, k, k) view of the k x k windows at stride s."""
    return sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, padding: int) -> tuple[np.ndarray, np.ndarray]:
    """Zero-padded cross-correlation through an explicit patch matrix. Returns (out, patches)."""
    o, c, k, _ = w.shape
    win = _windows(_pad(x, padding), k, stride)
    n, _, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    out = cols @ w.reshape(o, -1).T + b
    return out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2), cols


def conv2d_direct(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """Reference cross-correlation, one output position at a time."""
    o, _, k, _ = w.shape
    xp = _pad(np.asarray(x, dtype=np.float64), padding)
    ho = (xp.shape[2] - k) // stride + 1
    wo = (xp.shape[3] - k) // stride + 1
    out = np.empty((xp.shape[0], o, ho, wo))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, :, i * stride : i * stride + k, j * stride : j * stride + k]
            out[:, :, i, j] = np.tensordot(patch, w, axes=([1, 2, 3], [1, 2, 3])) + b
    return out


def _conv2d_backward(dout, cols, x_shape, w, stride, padding):
    o, c, k, _ = w.shape
    n, _, ho, wo = dout.shape
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, o)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(o, -1)).reshape(n, ho, wo, c, k, k)
    hp, wp = x_shape[2] + 2 * padding, x_shape[3] + 2 * padding
    dxp = np.zeros((n, c, hp, wp))
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if padding:
        dxp = dxp[:, :, padding:-padding, padding:-padding]
    return dxp, dw, db


def _maxpool(x: np.ndarray, k: int, s: int) -> tuple[np.ndarray, np.ndarray]:
    win = _windows(x, k, s)
    n, c, ho, wo = win.shape[:4]
    flat = win.reshape(n, c, ho, wo, k * k)
    arg = flat.argmax(axis=-1)
    return np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0], arg


def _maxpool_backward(dout, arg, x_shape, k, s):
    dx = np.zeros(x_shape)
    _, _, ho, wo = dout.shape
    for idx in range(k * k):
        i, j = divmod(idx, k)
        dx[:, :, i : i + s * ho : s, j : j + s * wo : s] += dout * (arg == idx)
    return dx


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


# --- passes -------------------------------------------------------------------


def _check_batch(spec: NetSpec, batch: np.ndarray) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != len(spec.input_shape) + 1 or tuple(x.shape[1:]) != spec.input_shape:
        raise ShapeError(f"batch shape {x.shape} does not match input {spec.input_shape}")
    if not np.all(np.isfinite(x)):
        raise DataError("batch contains non-finite values")
    return x


def _forward(spec: NetSpec, params: Params, x: np.ndarray) -> tuple[np.ndarray, list]:
    caches = []
    for layer, p in zip(spec.body, params):
        if isinstance(layer, Conv2D):
            w = p["W"].astype(np.float64)
            out, cols = conv2d(x, w, p["b"].astype(np.float64), layer.stride, layer.padding)
            caches.append((x.shape, cols, w))
        elif isinstance(layer, ReLU):
            keep = x > 0
            out = x * keep
            caches.append(keep)
        elif isinstance(layer, MaxPool2D):
            out, arg = _maxpool(x, layer.kernel, layer.step)
            caches.append((x.shape, arg))
        elif isinstance(layer, Flatten):
            out = x.reshape(x.shape[0], -1)
            caches.append(x.shape)
        elif isinstance(layer, Dense):
            w = p["W"].astype(np.float64)
            out = x @ w.T + p["b"].astype(np.float64)
            caches.append((x, w))
        else:
            raise ShapeError(f"unexpected layer {layer}")
        x = out
    return x, caches


def _backward(spec: NetSpec, caches: list, dout: np.ndarray) -> Params:
    grads: Params = [{} for _ in spec.layers]
    for i in range(len(spec.body) - 1, -1, -1):
        layer, cache = spec.body[i], caches[i]
        if isinstance(layer, Conv2D):
            x_shape, cols, w = cache
            dout, dw, db = _conv2d_backward(dout, cols, x_shape, w, layer.stride, layer.padding)
            grads[i] = {"W": dw, "b": db}
        elif isinstance(layer, ReLU):
            dout = dout * cache
        elif isinstance(layer, MaxPool2D):
            x_shape, arg = cache
            dout = _maxpool_backward(dout, arg, x_shape, layer.kernel, layer.step)
        elif isinstance(layer, Flatten):
            dout = dout.reshape(cache)
        elif isinstance(layer, Dense):
            x, w = cache
            grads[i] = {"W": dout.T @ x, "b": dout.sum(axis=0)}
            dout = dout @ w
    return grads


def forward(spec: NetSpec, params: Params, batch: np.ndarray) -> np.ndarray:
    """Logits (N, K) for a batch shaped (N, *input_shape)."""
    logits, _ = _forward(spec, params, _check_batch(spec, batch))
    return logits


def _check_labels(spec: NetSpec, labels: Sequence[int], n: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.shape != (n,):
        raise ShapeError(f"{y.size} labels for a batch of {n}")
    if not np.issubdtype(y.dtype, np.integer) or np.any(y < 0) or np.any(y >= spec.num_classes):
        raise DataError(f"labels must be integers in 0..{spec.num_classes - 1}")
    return y.astype(np.intp)


def loss_and_grads(
    spec: NetSpec,
    params: Params,
    batch: np.ndarray,
    labels: Sequence[int],
    class_weights: np.ndarray | None = None,
) -> tuple[float, Params]:
    """Mean (optionally class-weighted) cross-entropy and its exact gradients."""
    x = _check_batch(spec, batch)
    y = _check_labels(spec, labels, x.shape[0])
    logits, caches = _forward(spec, params, x)
    n = x.shape[0]
    weights = np.ones(n) if class_weights is None else np.asarray(class_weights, dtype=np.float64)[y]
    log_p = _log_softmax(logits)
    loss = float(-(weights * log_p[np.arange(n), y]).sum() / n)
    dlogits = np.exp(log_p)
    dlogits[np.arange(n), y] -= 1.0
    dlogits *= weights[:, None] / n
    return loss, _backward(spec, caches, dlogits)


def _decisions(caches: list, spec: NetSpec) -> list[np.ndarray]:
    """ReLU masks and max-pool choices: the piecewise-linear branch a forward pass took."""
    out = []
    for layer, cache in zip(spec.body, caches):
        if isinstance(layer, ReLU):
            out.append(cache)
        elif isinstance(layer, MaxPool2D):
            out.append(cache[1])
    return out


def grad_check(
    spec: NetSpec,
    seed: int,
    epsilon: float = 1e-4,
    coordinates: int = 200,
    batch_size: int = 2,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks every parameter when there are at most `coordinates` of them, otherwise a
    seed-keyed random subset of that size. A coordinate whose perturbation flips a ReLU
    or max-pool branch is replaced by another draw.
    """
    rng = make_rng(seed, "grad_check")
    params = [{k: v.astype(np.float64) for k, v in p.items()} for p in init_params(spec, seed)]
    x = rng.uniform(-1.0, 1.0, size=(batch_size, *spec.input_shape))
    y = rng.integers(0, spec.num_classes, size=batch_size)
    _, grads = loss_and_grads(spec, params, x, y)

    def evaluate():
        logits, caches = _forward(spec, params, x)
        log_p = _log_softmax(logits)
        return float(-log_p[np.arange(batch_size), y].mean()), _decisions(caches, spec)

    pool = [(i, name, j) for i, p in enumerate(params) for name in sorted(p) for j in range(p[name].size)]
    order = rng.permutation(len(pool)) if len(pool) > coordinates else np.arange(len(pool))
    worst, checked = 0.0, 0
    for pick in order:
        if checked >= coordinates:
            break
        i, name, j = pool[pick]
        theta = params[i][name].reshape(-1)
        saved = theta[j]
        theta[j] = saved + epsilon
        f_plus, branch_plus = evaluate()
        theta[j] = saved - epsilon
        f_minus, branch_minus = evaluate()
        theta[j] = saved
        if any(not np.array_equal(a, b) for a, b in zip(branch_plus, branch_minus)):
            continue
        numeric = (f_plus - f_minus) / (2.0 * epsilon)
        analytic = float(grads[i][name].reshape(-1)[j])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, rel)
        checked += 1
    logger.debug("grad check seed=%d: %d coordinates, max rel error %.3e", seed, checked, worst)
    return worst


# --- training -----------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0
    class_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.class_weights is not None and any(w <= 0 for w in self.class_weights):
            raise ConfigError("class weights must be positive")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainConfig":
        validate_document(data, "train_config", "train config")
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        if known.get("class_weights") is not None:
            known["class_weights"] = tuple(known["class_weights"])
        return cls(**known)


@dataclass(eq=False)
class LabeledTensors:
    x: np.ndarray  # (N, *input_shape)
    y: np.ndarray  # (N,) class indices

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.intp)
        if self.x.shape[0] != self.y.shape[0]:
            raise ShapeError(f"{self.x.shape[0]} inputs but {self.y.shape[0]} labels")

    def __len__(self) -> int:
        return int(self.y.shape[0])


def predict_batch(spec: NetSpec, params: Params, x: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Class probabilities (N, K), evaluated in chunks."""
    x = np.asarray(x, dtype=np.float64)
    parts = [softmax(forward(spec, params, x[i : i + chunk])) for i in range(0, x.shape[0], chunk)]
    return np.concatenate(parts) if parts else np.empty((0, spec.num_classes))


def accuracy(spec: NetSpec, params: Params, data: LabeledTensors) -> float:
    if len(data) == 0:
        return float("nan")
    return float(np.mean(predict_batch(spec, params, data.x).argmax(axis=1) == data.y))


def train(
    spec: NetSpec,
    data: LabeledTensors,
    cfg: TrainConfig,
    val: LabeledTensors | None = None,
    params: Params | None = None,
) -> tuple[Params, list[dict[str, float]]]:
    """SGD with momentum over seed-shuffled mini-batches. Returns (params, per-epoch metrics)."""
    if len(data) == 0:
        raise DataError("no training samples")
    _check_batch(spec, data.x[:1])
    _check_labels(spec, data.y, len(data))
    if cfg.class_weights is not None and len(cfg.class_weights) != spec.num_classes:
        raise ConfigError(f"{len(cfg.class_weights)} class weights for {spec.num_classes} classes")
    weights = None if cfg.class_weights is None else np.asarray(cfg.class_weights, dtype=np.float64)

    params = init_params(spec, cfg.seed) if params is None else [dict(p) for p in params]
    velocity = [{k: np.zeros(v.shape) for k, v in p.items()} for p in params]
    rng = make_rng(cfg.seed, "shuffle")
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(data))
        total = 0.0
        for start in range(0, len(data), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = loss_and_grads(spec, params, data.x[idx], data.y[idx], weights)
            total += loss * idx.size
            for p, v, g in zip(params, velocity, grads):
                for name in p:
                    v[name] = cfg.momentum * v[name] - cfg.learning_rate * g[name]
                    p[name] = (p[name].astype(np.float64) + v[name]).astype(np.float32)
        record = {
            "epoch": epoch,
            "train_loss": total / len(data),
            "train_accuracy": accuracy(spec, params, data),
        }
        if val is not None and len(val):
            record["val_accuracy"] = accuracy(spec, params, val)
        history.append(record)
        logger.info(
            "epoch %d/%d loss=%.4f train_acc=%.3f%s",
            epoch,
            cfg.epochs,
            record["train_loss"],
            record["train_accuracy"],
            f" val_acc={record['val_accuracy']:.3f}" if "val_accuracy" in record else "",
        )
    return params, history


def image_to_tensor(frame: Frame) -> np.ndarray:
    """(3, H, W) float64 in [-0.5, 0.5]."""
    return frame.pixels.transpose(2, 0, 1).astype(np.float64) / 255.0 - 0.5


def predict(spec: NetSpec, params: Params, image: np.ndarray) -> ProbVector:
    x = np.asarray(image, dtype=np.float64)
    if x.shape == spec.input_shape:
        x = x[None]
    if x.shape[0] != 1:
        raise ShapeError(f"predict takes one image, got batch of {x.shape[0]}")
    probs = softmax(forward(spec, params, x))[0]
    return ProbVector(probs / probs.sum())


# --- parameter files ----------------------------------------------------------

_HEADER = struct.Struct("<4sHI")


def save_params(params: Params, path: str | Path) -> Path:
    """Header (magic, version, layer count), then per layer: tensor count and per tensor
    ndim, uint32 dims and little-endian float32 data."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    layers = [p for p in params if p]
    with open(path, "wb") as f:
        f.write(_HEADER.pack(PARAM_MAGIC, PARAM_VERSION, len(layers)))
        for p in layers:
            f.write(struct.pack("<B", len(p)))
            for name in ("W", "b"):
                arr = np.asarray(p[name], dtype="<f4")
                f.write(struct.pack("<B", arr.ndim))
                f.write(np.asarray(arr.shape, dtype="<u4").tobytes())
                f.write(arr.tobytes(order="C"))
    return path


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedParamsError(f"parameter file truncated at byte {len(self.buf)}")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk


def read_param_tensors(path: str | Path) -> list[list[np.ndarray]]:
    try:
        buf = Path(path).read_bytes()
    except FileNotFoundError:
        raise DataError(f"parameter file not found: {path}") from None
    r = _Reader(buf)
    if len(buf) < 4 or buf[:4] != PARAM_MAGIC:
        raise BadMagicError(f"{path}: not a parameter file")
    _, version, count = _HEADER.unpack(r.take(_HEADER.size))
    if version != PARAM_VERSION:
        raise UnsupportedVersionError(f"{path}: parameter format version {version}, expected {PARAM_VERSION}")
    layers = []
    for _ in range(count):
        (tensors,) = struct.unpack("<B", r.take(1))
        arrays = []
        for _ in range(tensors):
            (ndim,) = struct.unpack("<B", r.take(1))
            shape = tuple(int(d) for d in np.frombuffer(r.take(4 * ndim), dtype="<u4"))
            data = np.frombuffer(r.take(4 * math.prod(shape)), dtype="<f4")
            arrays.append(data.reshape(shape).astype(np.float32))
        layers.append(arrays)
    return layers


def load_params(path: str | Path, spec: NetSpec) -> Params:
    stored = read_param_tensors(path)
    expected = _param_shapes(spec)
    wanted = [s for s in expected if s]
    if len(stored) != len(wanted):
        raise ShapeError(f"file holds {len(stored)} parameter layers, spec needs {len(wanted)}")
    params: Params = []
    it = iter(stored)
    for shapes in expected:
        if not shapes:
            params.append({})
            continue
        arrays = next(it)
        if len(arrays) != 2 or arrays[0].shape != shapes["W"] or arrays[1].shape != shapes["b"]:
            got = [a.shape for a in arrays]
            raise ShapeError(f"stored shapes {got} do not match spec shapes {shapes['W']}, {shapes['b']}")
        params.append({"W": arrays[0], "b": arrays[1]})
    return params
