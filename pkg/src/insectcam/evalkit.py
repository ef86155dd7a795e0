"""Dataset manifests, stratified splits, imbalance utilities, metrics and the synthetic insect dataset."""

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd
from sklearn.metrics import accuracy_score, precision_recall_fscore_support
from sklearn.metrics import confusion_matrix as sk_confusion_matrix
from sklearn.utils.class_weight import compute_class_weight

from . import pnm, synth
from .detect import BBox, CropConfig, Mask, crop_insect, default_min_area, resize_bilinear
from .errors import ConfigError, DataError, ManifestError, ShapeError
from .imaging import ARENA_LEVEL, SENSOR_NOISE, Frame
from .nnet import LabeledTensors
from .taxonomy import TaxonomyTree, load_taxonomy
from .validate import validate_rows

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
DEFAULT_RATIOS = (0.6, 0.2, 0.2)
MANIFEST_COLUMNS = ("image_path", "species", "mask_path", "split")


# --- manifests ----------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRecord:
    image_path: str
    species: str
    mask_path: str | None = None
    split: str | None = None


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[ManifestRecord, ...]
    tree: TaxonomyTree
    base_dir: Path | None = None

    def __len__(self) -> int:
        return len(self.records)

    def labels(self) -> np.ndarray:
        return np.array([self.tree.index_of(r.species) for r in self.records], dtype=np.intp)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        if self.base_dir is not None and not p.is_absolute():
            p = self.base_dir / p
        return p

    def with_splits(self, assignment: "SplitAssignment") -> "DatasetManifest":
        if len(assignment.tags) != len(self.records):
            raise ShapeError(f"{len(assignment.tags)} split tags for {len(self.records)} records")
        records = tuple(replace(r, split=t) for r, t in zip(self.records, assignment.tags))
        return DatasetManifest(records, self.tree, self.base_dir)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [[r.image_path, r.species, r.mask_path or "", r.split or ""] for r in self.records],
            columns=list(MANIFEST_COLUMNS),
        )

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, sep="\t", header=False, index=False, lineterminator="\n")
        return path


def parse_manifest(text: str, tree: TaxonomyTree, base_dir: Path | None = None) -> DatasetManifest:
    """One record per line: image_path<TAB>species<TAB>[mask_path]<TAB>[split]; '#' lines are comments."""
    rows, linenos = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = [f.strip() for f in line.split("\t")]
        if not 2 <= len(fields) <= 4:
            raise ManifestError(lineno, f"expected 2 to 4 tab-separated columns, got {len(fields)}")
        fields += [""] * (4 - len(fields))
        rows.append({
            "image_path": fields[0],
            "species": fields[1],
            "mask_path": fields[2] or None,
            "split": fields[3] or None,
        })
        linenos.append(lineno)

    problems = validate_rows(rows, "manifest_record", linenos)
    if problems:
        first = problems[0]
        raise ManifestError(first.line, f"{first.field}: {first.message}")

    seen: dict[str, int] = {}
    records = []
    for row, lineno in zip(rows, linenos):
        if not tree.has_species(row["species"]):
            raise ManifestError(lineno, f"unknown species {row['species']!r}")
        if row["image_path"] in seen:
            raise ManifestError(lineno, f"duplicate path {row['image_path']!r} (first on line {seen[row['image_path']]})")
        seen[row["image_path"]] = lineno
        records.append(ManifestRecord(**row))
    return DatasetManifest(tuple(records), tree, base_dir)


def load_manifest(path: str | Path, tree: TaxonomyTree | None = None) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    tree = tree or load_taxonomy()
    manifest = parse_manifest(path.read_text(encoding="utf-8"), tree, base_dir=path.parent)
    logger.info("loaded manifest %s: %d records", path, len(manifest))
    return manifest


# --- splits -------------------------------------------------------------------


@dataclass(frozen=True)
class SplitAssignment:
    tags: tuple[str, ...]
    seed: int
    counts: dict[str, dict[str, int]]

    def indices(self, split: str) -> np.ndarray:
        return np.array([i for i, t in enumerate(self.tags) if t == split], dtype=np.intp)

    def to_dict(self) -> dict[str, Any]:
        return {"seed": self.seed, "counts": self.counts}


def _check_ratios(ratios: Sequence[float]) -> tuple[float, float, float]:
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three non-negative values summing to 1, got {tuple(ratios)}")
    return tuple(float(r) for r in ratios)


def split_sizes(n: int, ratios: Sequence[float] = DEFAULT_RATIOS) -> dict[str, int]:
    """Floor each share, then hand the leftover records out train-first, then val."""
    ratios = _check_ratios(ratios)
    sizes = {name: math.floor(r * n + 1e-9) for name, r in zip(SPLITS, ratios)}
    remainder = n - sum(sizes.values())
    for i in range(remainder):
        sizes[SPLITS[i % len(SPLITS)]] += 1
    return sizes


def stratified_split(
    manifest: DatasetManifest,
    ratios: Sequence[float] = DEFAULT_RATIOS,
    seed: int = 0,
    classes: Sequence[str] | None = None,
) -> SplitAssignment:
    """Per-class shuffled split; records with a fixed split tag keep it."""
    ratios = _check_ratios(ratios)
    tags: list[str | None] = [r.split for r in manifest.records]
    by_class: dict[str, list[int]] = {}
    for i, r in enumerate(manifest.records):
        by_class.setdefault(r.species, []).append(i)
    wanted = list(classes) if classes is not None else [s for s in manifest.tree.species if s in by_class]
    for species in wanted:
        if not by_class.get(species):
            raise DataError(f"class {species!r} has no records")

    counts: dict[str, dict[str, int]] = {}
    for species in wanted:
        members = by_class[species]
        free = [i for i in members if tags[i] is None]
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, manifest.tree.index_of(species)])))
        order = [free[j] for j in rng.permutation(len(free))]
        sizes = split_sizes(len(order), ratios)
        start = 0
        for name in SPLITS:
            for i in order[start : start + sizes[name]]:
                tags[i] = name
            start += sizes[name]
        counts[species] = {name: sum(1 for i in members if tags[i] == name) for name in SPLITS}

    leftover = [manifest.records[i].image_path for i, t in enumerate(tags) if t is None]
    if leftover:
        raise DataError(f"{len(leftover)} records belong to classes outside the split, e.g. {leftover[0]!r}")
    return SplitAssignment(tuple(tags), seed, counts)


# --- imbalance ----------------------------------------------------------------


@dataclass(frozen=True)
class ClassHistogram:
    counts: pd.Series  # indexed by species, taxonomy order
    ratio: float

    def to_dict(self) -> dict[str, Any]:
        return {"counts": {k: int(v) for k, v in self.counts.items()}, "imbalance_ratio": self.ratio}


def imbalance_ratio(counts: Sequence[int]) -> float:
    present = [c for c in counts if c > 0]
    if not present:
        raise DataError("no non-empty class")
    return max(present) / min(present)


def class_histogram(manifest: DatasetManifest) -> ClassHistogram:
    species = pd.Series([r.species for r in manifest.records], dtype=object)
    counts = species.value_counts().reindex(manifest.tree.species, fill_value=0).astype(int)
    return ClassHistogram(counts, imbalance_ratio(counts.tolist()))


def class_weights(counts: Sequence[int]) -> np.ndarray:
    """w_c = N / (K * n_c)."""
    n = np.asarray(counts, dtype=np.float64)
    if n.ndim != 1 or n.size == 0:
        raise DataError("class counts must be a non-empty list")
    if np.any(n < 1):
        raise DataError("every class needs at least one sample for a class weight")
    classes = np.arange(n.size)
    return compute_class_weight("balanced", classes=classes, y=np.repeat(classes, n.astype(np.intp)))


def oversample(labels: Sequence[int], seed: int) -> np.ndarray:
    """Indices into labels with every class topped up (with replacement) to the largest class, shuffled."""
    y = np.asarray(labels, dtype=np.intp)
    if y.size == 0:
        raise DataError("nothing to oversample")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x05A3])))
    classes = np.unique(y)
    target = max(int(np.count_nonzero(y == c)) for c in classes)
    parts = []
    for c in classes:
        idx = np.flatnonzero(y == c)
        parts.append(idx)
        if idx.size < target:
            parts.append(rng.choice(idx, size=target - idx.size, replace=True))
    return rng.permutation(np.concatenate(parts))


def long_tail_profile(k: int = 16, head: int = 300, tail: int = 12) -> list[int]:
    """Class sizes halving from `head`, floored at `tail`."""
    if k < 1 or head < tail or tail < 1:
        raise ConfigError(f"bad long-tail profile k={k} head={head} tail={tail}")
    return [max(tail, head >> i) for i in range(k)]


# --- metrics ------------------------------------------------------------------


def _as_indices(values: Sequence[int], what: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ShapeError(f"{what} must be a flat sequence")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        raise DataError(f"{what} must be integer class indices")
    return arr.astype(np.intp)


def top1_accuracy(predictions: Sequence[int], labels: Sequence[int]) -> float:
    p, y = _as_indices(predictions, "predictions"), _as_indices(labels, "labels")
    if p.size != y.size:
        raise ShapeError(f"{p.size} predictions for {y.size} labels")
    if p.size == 0:
        raise DataError("no samples to score")
    return float(accuracy_score(y, p))


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # (K, K) int64, rows true, columns predicted
    species: tuple[str, ...]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total if self.total else float("nan")

    def _scores(self) -> tuple[np.ndarray, np.ndarray]:
        k = len(self.species)
        if self.total == 0:
            return np.zeros(k), np.zeros(k)
        # expand cells back into (true, predicted) pairs
        rows, cols = np.nonzero(self.counts)
        reps = self.counts[rows, cols]
        precision, recall, _, _ = precision_recall_fscore_support(
            np.repeat(rows, reps), np.repeat(cols, reps), labels=np.arange(k), average=None, zero_division=0
        )
        return np.asarray(precision, dtype=np.float64), np.asarray(recall, dtype=np.float64)

    @property
    def recall(self) -> np.ndarray:
        return self._scores()[1]

    @property
    def precision(self) -> np.ndarray:
        return self._scores()[0]

    @property
    def never_predicted(self) -> np.ndarray:
        """Classes with samples but no correct prediction."""
        return (self.support > 0) & (np.diag(self.counts) == 0)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.counts, index=list(self.species), columns=list(self.species))

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index_label="true\\predicted", lineterminator="\n")
        return path

    def heatmap(self, cell: int = 8) -> np.ndarray:
        """Row-normalized counts as grey levels: 0 black, largest normalized value white."""
        rows = self.support[:, None].astype(np.float64)
        norm = np.divide(self.counts, rows, out=np.zeros(self.counts.shape), where=rows > 0)
        peak = norm.max()
        grey = np.floor(norm / peak * 255.0 + 0.5) if peak > 0 else norm
        return np.kron(grey, np.ones((cell, cell))).astype(np.uint8)

    def write_heatmap(self, path: str | Path, cell: int = 8) -> Path:
        grey = self.heatmap(cell)
        return pnm.write_rgb(path, np.repeat(grey[:, :, None], 3, axis=2))


def confusion_matrix(
    predictions: Sequence[int],
    labels: Sequence[int],
    k: int,
    species: Sequence[str] | None = None,
) -> ConfusionMatrix:
    p, y = _as_indices(predictions, "predictions"), _as_indices(labels, "labels")
    if p.size != y.size:
        raise ShapeError(f"{p.size} predictions for {y.size} labels")
    for arr, what in ((p, "prediction"), (y, "label")):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise DataError(f"{what} index outside 0..{k - 1}")
    if p.size:
        counts = sk_confusion_matrix(y, p, labels=np.arange(k)).astype(np.int64)
    else:
        counts = np.zeros((k, k), dtype=np.int64)
    names = tuple(species) if species is not None else tuple(str(i) for i in range(k))
    if len(names) != k:
        raise ShapeError(f"{len(names)} species names for {k} classes")
    return ConfusionMatrix(counts, names)


def evaluation_metrics(cm: ConfusionMatrix) -> dict[str, Any]:
    recall, precision, never = cm.recall, cm.precision, cm.never_predicted
    return {
        "top1_accuracy": cm.accuracy,
        "total": cm.total,
        "per_class": [
            {
                "species": name,
                "support": int(cm.support[i]),
                "recall": float(recall[i]),
                "precision": float(precision[i]),
                "never_predicted": bool(never[i]),
            }
            for i, name in enumerate(cm.species)
        ],
    }


def compare_runs(metrics_a: dict[str, Any], metrics_b: dict[str, Any]) -> dict[str, Any]:
    """Deltas b - a of overall accuracy and per-class recall."""
    classes_a = [c["species"] for c in metrics_a["per_class"]]
    classes_b = [c["species"] for c in metrics_b["per_class"]]
    if classes_a != classes_b:
        raise DataError("runs were evaluated on different class sets")
    per_class = []
    for a, b in zip(metrics_a["per_class"], metrics_b["per_class"]):
        per_class.append({
            "species": a["species"],
            "recall_a": a["recall"],
            "recall_b": b["recall"],
            "delta": b["recall"] - a["recall"],
        })
    regressions = [c for c in per_class if c["delta"] < 0]
    worst = min(regressions, key=lambda c: (c["delta"], c["species"]))["species"] if regressions else None
    return {
        "accuracy_a": metrics_a["top1_accuracy"],
        "accuracy_b": metrics_b["top1_accuracy"],
        "overall_delta": metrics_b["top1_accuracy"] - metrics_a["top1_accuracy"],
        "per_class": per_class,
        "worst_regression": worst,
    }


# --- synthetic dataset --------------------------------------------------------

FRAME_SIZE = 256
INSECT_LENGTH = 0.18


@dataclass(eq=False)
class SynthDataset:
    species: tuple[str, ...]
    labels: np.ndarray  # (N,)
    full: np.ndarray  # (N, S, S, 3) uint8, whole frame downsampled
    cropped: np.ndarray  # (N, S, S, 3) uint8, square crop around the insect
    true_boxes: list[BBox]  # tight ground-truth box in frame coordinates
    crop_boxes: list[BBox]  # square crop box in frame coordinates
    frame_size: int

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def tensors(self, variant: str, indices: np.ndarray | None = None) -> LabeledTensors:
        images = {"full": self.full, "cropped": self.cropped}.get(variant)
        if images is None:
            raise ConfigError(f"unknown dataset variant {variant!r}")
        idx = np.arange(len(self)) if indices is None else indices
        return LabeledTensors(images_to_batch(images[idx]), self.labels[idx])

    def manifest(self, tree: TaxonomyTree, variant: str = "cropped", base_dir: Path | None = None) -> DatasetManifest:
        records = tuple(
            ManifestRecord(
                f"{variant}/{i:05d}.ppm",
                self.species[c],
                f"masks/{i:05d}.pgm" if variant == "full" else None,
            )
            for i, c in enumerate(self.labels)
        )
        return DatasetManifest(records, tree, base_dir)


def images_to_batch(images: np.ndarray) -> np.ndarray:
    """(N, H, W, 3) uint8 to (N, 3, H, W) float64 in [-0.5, 0.5]."""
    return np.asarray(images).transpose(0, 3, 1, 2).astype(np.float64) / 255.0 - 0.5


def render_sample(class_id: int, rng: np.random.Generator, frame_size: int) -> tuple[Frame, np.ndarray, np.ndarray]:
    """One insect on the arena background with sensor noise and dust: (frame, insect mask, dust mask)."""
    model = synth.class_model(class_id)
    canvas = np.full((frame_size, frame_size, 3), ARENA_LEVEL)
    truth = np.zeros((frame_size, frame_size), dtype=bool)
    length = INSECT_LENGTH * frame_size * rng.uniform(0.85, 1.15)
    angle = rng.uniform(-synth.MAX_HEADING, synth.MAX_HEADING)
    reach = 1.45 * length / 2.0 + length / (2.0 * model.body_aspect) + 2.0
    cx, cy = rng.uniform(reach, frame_size - reach, size=2)
    synth.render_insect(canvas, truth, model, (cx, cy), length, angle)
    canvas += rng.normal(0.0, SENSOR_NOISE, size=canvas.shape)
    min_area = default_min_area(frame_size, frame_size)
    dust = synth.add_dust(canvas, truth, rng, count=int(rng.integers(0, 5)), max_area=max(1, min_area - 1))
    frame = Frame(np.clip(np.rint(canvas), 0, 255).astype(np.uint8))
    return frame, truth, dust


def synth_dataset(
    k: int = synth.MAX_CLASSES,
    n_per_class: int | Sequence[int] = 64,
    image_size: int = 32,
    seed: int = 0,
    frame_size: int = FRAME_SIZE,
    tree: TaxonomyTree | None = None,
    out_dir: str | Path | None = None,
) -> SynthDataset:
    """Render k synthetic classes in a full (frame downsampled) and a cropped variant.

    Each image has its own generator keyed by (seed, image index), so any image can be
    regenerated alone. Species names are the first k species of the taxonomy.
    """
    if not 1 <= k <= synth.MAX_CLASSES:
        raise DataError(f"k must be in 1..{synth.MAX_CLASSES}, got {k}")
    if image_size < 16 or frame_size < 16 or frame_size < image_size:
        raise DataError(f"bad sizes: image_size={image_size}, frame_size={frame_size}")
    sizes = [int(n_per_class)] * k if isinstance(n_per_class, (int, np.integer)) else [int(n) for n in n_per_class]
    if len(sizes) != k or any(n < 0 for n in sizes):
        raise DataError(f"need {k} non-negative class sizes, got {sizes}")
    tree = tree or load_taxonomy()
    if len(tree) < k:
        raise DataError(f"taxonomy has {len(tree)} species, {k} requested")
    species = tuple(tree.species[:k])

    total = sum(sizes)
    full = np.empty((total, image_size, image_size, 3), dtype=np.uint8)
    cropped = np.empty_like(full)
    labels = np.repeat(np.arange(k, dtype=np.intp), sizes)
    true_boxes, crop_boxes = [], []
    crop_cfg = CropConfig(min_area=default_min_area(frame_size, frame_size), target_size=image_size)
    out = Path(out_dir) if out_dir is not None else None

    for idx, class_id in enumerate(labels):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, idx])))
        frame, truth, dust = render_sample(int(class_id), rng, frame_size)
        rows, cols = np.nonzero(truth)
        true_boxes.append(BBox(int(cols.min()), int(rows.min()), int(np.ptp(cols)) + 1, int(np.ptp(rows)) + 1))
        _, square, patch = crop_insect(frame, Mask(truth | dust), crop_cfg)
        crop_boxes.append(square)
        small = resize_bilinear(frame, image_size, image_size)
        full[idx] = small.pixels
        cropped[idx] = patch.pixels
        if out is not None:
            pnm.write_rgb(out / "full" / f"{idx:05d}.ppm", small.pixels)
            pnm.write_rgb(out / "cropped" / f"{idx:05d}.ppm", patch.pixels)
            mask_frame = Frame(np.repeat(np.where(truth, 255, 0).astype(np.uint8)[:, :, None], 3, axis=2))
            small_mask = resize_bilinear(mask_frame, image_size, image_size).pixels[:, :, 0] > 127
            Mask(small_mask).write_pgm(out / "masks" / f"{idx:05d}.pgm")

    data = SynthDataset(species, labels, full, cropped, true_boxes, crop_boxes, frame_size)
    if out is not None:
        data.manifest(tree, "full").write(out / "manifest_full.tsv")
        data.manifest(tree, "cropped").write(out / "manifest_cropped.tsv")
    logger.info("synthetic dataset: %d images over %d classes (seed %d)", total, k, seed)
    return data


def manifest_tensors(
    manifest: DatasetManifest,
    input_shape: tuple[int, int, int],
    split: str | None = None,
) -> LabeledTensors:
    """Load the manifest's images (optionally one split) as a tensor batch resized to the input size."""
    _, h, w = input_shape
    keep = [i for i, r in enumerate(manifest.records) if split is None or r.split == split]
    images = np.empty((len(keep), h, w, 3), dtype=np.uint8)
    for j, i in enumerate(keep):
        frame = Frame(pnm.read_rgb(manifest.resolve(manifest.records[i].image_path)))
        if (frame.width, frame.height) != (w, h):
            frame = resize_bilinear(frame, w, h)
        images[j] = frame.pixels
    return LabeledTensors(images_to_batch(images), manifest.labels()[keep])
