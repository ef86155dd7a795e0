"""End-to-end runs: simulate -> trigger -> detect/crop -> classify -> rollup -> evaluate.

Every run writes into its own directory and leaves a run record whose config snapshot
reproduces the run. All randomness derives from the run's master seed.
"""

import json
import logging
import zlib
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterator

import numpy as np

from . import evalkit, nnet, optics
from .config_loader import load_config, resolve_path
from .detect import CropConfig, Mask, crop_insect, default_min_area, mask_iou, threshold_mask
from .errors import ConfigError, DataError, NoInsectError, StageError
from .imaging import TriggerConfig, capture_stream, render_transit, ring_capacity
from .pnm import write_rgb
from .taxonomy import RANKS, TaxonomyTree, decide, load_taxonomy, rollup
from .validate import validate_document

logger = logging.getLogger(__name__)

BALANCE_MODES = ("none", "class_weights", "oversample")


def derive_seed(seed: int, *keys: str | int) -> int:
    """Child seed for one consumer of the master seed."""
    words = [int(seed)] + [zlib.crc32(k.encode()) if isinstance(k, str) else int(k) for k in keys]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


def _write_json(path: Path, doc: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _existing(path: str | None, what: str) -> Path | None:
    if path is None:
        return None
    p = resolve_path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {p}")
    return p


@contextmanager
def stage(name: str) -> Iterator[None]:
    logger.info("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        raise StageError(name, e) from e


# --- run configuration ----------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    snapshot: dict[str, Any]
    seed: int
    out_dir: Path
    taxonomy: Path
    net_spec: Path
    params: Path | None
    trigger: TriggerConfig
    buffer_seconds: float
    detect: dict[str, Any]
    simulate: dict[str, Any]
    dataset: dict[str, Any]
    train: dict[str, Any]
    decision_threshold: float
    optics: dict[str, Any] | None = None

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        """Validate against the run_config schema and check every referenced path exists."""
        validate_document(data, "run_config", "run config")
        classify = data["classify"]
        trigger = dict(data.get("trigger", {}))
        buffer_seconds = float(trigger.pop("buffer_seconds", 1.5))
        simulate = {"class_ids": [0], "frame_count": 24, "width": 320, "height": 240, "fps": 25.0}
        simulate.update(data.get("simulate", {}))
        detect = {"source": "ground_truth", "threshold": 95, "connectivity": 8, "min_area": None, "margin": 0.05}
        detect.update(data.get("detect", {}))
        dataset = {"n_per_class": 24, "frame_size": evalkit.FRAME_SIZE}
        dataset.update(classify.get("dataset", {}))
        return cls(
            snapshot=json.loads(json.dumps(data)),
            seed=int(data["seed"]),
            out_dir=resolve_path(data["out_dir"]),
            taxonomy=_existing(data["taxonomy"], "taxonomy"),
            net_spec=_existing(classify["net_spec"], "net spec"),
            params=_existing(classify.get("params"), "parameter file"),
            trigger=TriggerConfig.from_dict(trigger),
            buffer_seconds=buffer_seconds,
            detect=detect,
            simulate=simulate,
            dataset=dataset,
            train=dict(classify.get("train", {})),
            decision_threshold=float(data.get("decision", {}).get("threshold", 0.8)),
            optics=data.get("optics"),
        )

    @classmethod
    def load(cls, path: str | Path | None = None) -> "RunConfig":
        return cls.from_dict(load_config(path))


@dataclass(frozen=True)
class RunRecord:
    run_id: str
    seed: int
    config: dict[str, Any]
    artifacts: dict[str, str]
    metrics: dict[str, Any]
    optics: dict[str, Any] | None = None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def write(self, path: str | Path) -> Path:
        return _write_json(Path(path), self.to_dict())

    @classmethod
    def load(cls, path: str | Path) -> "RunRecord":
        path = Path(path)
        if not path.exists():
            raise DataError(f"run record not found: {path}")
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
        try:
            return cls(**doc)
        except TypeError as e:
            raise DataError(f"{path}: not a run record ({e})") from None


def new_run_id(seed: int) -> str:
    return f"{datetime.now(timezone.utc):%Y%m%dT%H%M%S%fZ}-seed{seed}"


def canonical_json(doc: Any) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def train_config(block: dict[str, Any], seed: int) -> tuple[nnet.TrainConfig, str]:
    """TrainConfig from a config block, seeded from the run; plus the balance mode."""
    block = dict(block)
    balance = block.pop("balance", "none")
    if balance not in BALANCE_MODES:
        raise ConfigError(f"balance must be one of {BALANCE_MODES}, got {balance!r}")
    block["seed"] = seed
    return nnet.TrainConfig.from_dict(block), balance


# --- stages -------------------------------------------------------------------


@dataclass
class CropResult:
    transit: int
    class_id: int
    frame_index: int
    trigger_index: int
    path: str
    tensor: np.ndarray
    mask_iou: float | None = None
    extra: dict[str, Any] = field(default_factory=dict)


def _classifier(cfg: RunConfig, spec: nnet.NetSpec, tree: TaxonomyTree) -> tuple[nnet.Params, dict[str, Any] | None]:
    if cfg.params is not None:
        logger.info("loading parameters from %s", cfg.params)
        return nnet.load_params(cfg.params, spec), None
    data = evalkit.synth_dataset(
        k=spec.num_classes,
        n_per_class=int(cfg.dataset["n_per_class"]),
        image_size=spec.input_shape[1],
        seed=derive_seed(cfg.seed, "dataset"),
        frame_size=int(cfg.dataset["frame_size"]),
        tree=tree,
    )
    tcfg, balance = train_config(cfg.train, derive_seed(cfg.seed, "train"))
    train_set = data.tensors("cropped")
    if balance == "oversample":
        train_set = data.tensors("cropped", evalkit.oversample(data.labels, derive_seed(cfg.seed, "oversample")))
    elif balance == "class_weights":
        weights = evalkit.class_weights(np.bincount(data.labels, minlength=spec.num_classes))
        tcfg = nnet.TrainConfig(**{**asdict(tcfg), "class_weights": tuple(weights.tolist())})
    params, history = nnet.train(spec, train_set, tcfg)
    last = history[-1]
    return params, {
        "samples": len(train_set),
        "epochs": tcfg.epochs,
        "final_train_loss": last["train_loss"],
        "final_train_accuracy": last["train_accuracy"],
    }


def run_pipeline(config: RunConfig | dict[str, Any]) -> RunRecord:
    """Run every stage in order; returns the written run record.

    Config and path errors surface before the run directory exists. Later failures are
    raised as StageError naming the stage, with partial outputs left in place.
    """
    cfg = config if isinstance(config, RunConfig) else RunConfig.from_dict(config)

    tree = load_taxonomy(cfg.taxonomy)
    spec = nnet.load_spec(cfg.net_spec)
    if spec.num_classes != len(tree):
        raise ConfigError(f"net spec has {spec.num_classes} outputs, taxonomy has {len(tree)} species")
    if len(spec.input_shape) != 3 or spec.input_shape[0] != 3 or spec.input_shape[1] != spec.input_shape[2]:
        raise ConfigError(f"net input must be square RGB, got {spec.input_shape}")
    bad_ids = [c for c in cfg.simulate["class_ids"] if c >= spec.num_classes]
    if bad_ids:
        raise ConfigError(f"class ids {bad_ids} outside the {spec.num_classes} classes")
    capacity = ring_capacity(float(cfg.simulate["fps"]), cfg.buffer_seconds)

    run_id = new_run_id(cfg.seed)
    run_dir = cfg.out_dir / run_id
    run_dir.mkdir(parents=True, exist_ok=False)
    logger.info("run %s -> %s", run_id, run_dir)

    with stage("simulate"):
        transits = [
            render_transit(
                class_id,
                seed=derive_seed(cfg.seed, "transit", t),
                frame_count=int(cfg.simulate["frame_count"]),
                width=int(cfg.simulate["width"]),
                height=int(cfg.simulate["height"]),
                fps=float(cfg.simulate["fps"]),
                baseline_window=cfg.trigger.baseline_window,
            )
            for t, class_id in enumerate(cfg.simulate["class_ids"])
        ]

    with stage("trigger"):
        captures = [capture_stream(tr.frames, cfg.trigger, capacity) for tr in transits]
        logger.info("%d captures from %d transits", sum(len(c) for c in captures), len(transits))

    with stage("detect"):
        crop_cfg = CropConfig(
            connectivity=int(cfg.detect["connectivity"]),
            min_area=cfg.detect["min_area"] or default_min_area(int(cfg.simulate["width"]), int(cfg.simulate["height"])),
            margin=float(cfg.detect["margin"]),
            target_size=spec.input_shape[1],
        )
        crops: list[CropResult] = []
        for t, (transit, caps) in enumerate(zip(transits, captures)):
            class_id = cfg.simulate["class_ids"][t]
            for cap in caps:
                for frame_index, frame in zip(cap.event.selected_indices, cap.frames):
                    truth = transit.masks[frame_index]
                    if cfg.detect["source"] == "threshold":
                        mask = threshold_mask(frame, int(cfg.detect["threshold"]))
                    elif truth is None:
                        raise NoInsectError(f"transit {t} frame {frame_index} holds no insect")
                    else:
                        mask = Mask(truth)
                    tight, square, patch = crop_insect(frame, mask, crop_cfg)
                    name = f"crops/t{t:02d}_f{frame_index:03d}.ppm"
                    write_rgb(run_dir / name, patch.pixels)
                    iou = mask_iou(mask, Mask(truth)) if truth is not None else None
                    crops.append(CropResult(
                        transit=t,
                        class_id=class_id,
                        frame_index=frame_index,
                        trigger_index=cap.event.trigger_index,
                        path=name,
                        tensor=nnet.image_to_tensor(patch),
                        mask_iou=iou,
                        extra={"tight": tight.to_dict(), "square": square.to_dict()},
                    ))
        logger.info("%d crops written", len(crops))

    with stage("classify"):
        params, training = _classifier(cfg, spec, tree)
        probs = [nnet.predict(spec, params, c.tensor) for c in crops]

    with stage("rollup"):
        decisions = [decide(rollup(p, tree), cfg.decision_threshold) for p in probs]
        predictions = []
        for c, p, d in zip(crops, probs, decisions):
            predictions.append({
                "transit": c.transit,
                "trigger_index": c.trigger_index,
                "frame_index": c.frame_index,
                "crop": c.path,
                "true_species": tree.species[c.class_id],
                "boxes": c.extra,
                "probs": {s: float(v) for s, v in zip(tree.species, p.values)},
                "decision": d.to_dict(),
            })
        _write_json(run_dir / "predictions.json", predictions)

    with stage("evaluate"):
        labels = [c.class_id for c in crops]
        preds = [p.argmax() for p in probs]
        cm = evalkit.confusion_matrix(preds, labels, len(tree), tree.species)
        ranks = {rank: sum(1 for d in decisions if d.rank == rank and not d.below_threshold) for rank in RANKS}
        ious = [c.mask_iou for c in crops if c.mask_iou is not None]
        metrics = {
            "seed": cfg.seed,
            "transits": len(transits),
            "captures": sum(len(c) for c in captures),
            "missed_transits": sum(1 for c in captures if not c),
            "crops": len(crops),
            "top1_accuracy": evalkit.top1_accuracy(preds, labels) if crops else None,
            "decision_ranks": ranks,
            "below_threshold": sum(1 for d in decisions if d.below_threshold),
            "detection": {"source": cfg.detect["source"], "mean_mask_iou": float(np.mean(ious)) if ious else None},
            "training": training,
            "evaluation": evalkit.evaluation_metrics(cm) if crops else None,
        }
        _write_json(run_dir / "metrics.json", metrics)
        if crops:
            cm.write_csv(run_dir / "confusion.csv")

    artifacts = {
        "run_dir": str(run_dir),
        "crops": "crops",
        "predictions": "predictions.json",
        "metrics": "metrics.json",
    }
    if crops:
        artifacts["confusion"] = "confusion.csv"
    report = None
    if cfg.optics:
        optical = optics.OpticalConfig.from_dict(cfg.optics)
        speed = float(cfg.optics.get("insect_speed", 0.5))
        report = {**optics.design_report(optical, speed).to_dict(), "supplement": optics.supplement(optical, speed)}
    record = RunRecord(run_id, cfg.seed, cfg.snapshot, artifacts, metrics, report)
    record.write(run_dir / "run_record.json")
    logger.info("run %s done: %d crops, accuracy %s", run_id, len(crops), metrics["top1_accuracy"])
    return record


def replay(record_path: str | Path, out_dir: str | Path | None = None) -> dict[str, Any]:
    """Re-run a record's config snapshot and compare metrics byte for byte."""
    record = RunRecord.load(record_path)
    config = dict(record.config)
    if out_dir is not None:
        config["out_dir"] = str(out_dir)
    rerun = run_pipeline(config)
    same = canonical_json(rerun.metrics) == canonical_json(record.metrics)
    if not same:
        raise StageError("replay", DataError(f"metrics of {rerun.run_id} differ from {record.run_id}"))
    return {"original": record.run_id, "replay": rerun.run_id, "reproduced": same, "run_dir": rerun.artifacts["run_dir"]}


# --- full vs cropped ------------------------------------------------------------


def _dataset_sizes(block: dict[str, Any], k: int) -> int | list[int]:
    tail = block.get("long_tail")
    if tail:
        return evalkit.long_tail_profile(k, int(tail.get("head", 300)), int(tail.get("tail", 12)))
    return int(block.get("n_per_class", 64))


def _train_variant(
    variant: str,
    data: evalkit.SynthDataset,
    split: evalkit.SplitAssignment,
    spec: nnet.NetSpec,
    tcfg: nnet.TrainConfig,
    balance: str,
    seed: int,
    out: Path,
) -> tuple[dict[str, Any], dict[str, str]]:
    train_idx = split.indices("train")
    if balance == "oversample":
        train_idx = train_idx[evalkit.oversample(data.labels[train_idx], derive_seed(seed, "oversample"))]
    elif balance == "class_weights":
        counts = np.bincount(data.labels[train_idx], minlength=spec.num_classes)
        tcfg = nnet.TrainConfig(**{**asdict(tcfg), "class_weights": tuple(evalkit.class_weights(counts).tolist())})
    params, history = nnet.train(
        spec,
        data.tensors(variant, train_idx),
        tcfg,
        val=data.tensors(variant, split.indices("val")),
    )
    test = data.tensors(variant, split.indices("test"))
    preds = nnet.predict_batch(spec, params, test.x).argmax(axis=1)
    cm = evalkit.confusion_matrix(preds, test.y, spec.num_classes, data.species)
    metrics = {**evalkit.evaluation_metrics(cm), "history": history}
    paths = {
        "confusion_csv": str(cm.write_csv(out / variant / "confusion.csv")),
        "confusion_heatmap": str(cm.write_heatmap(out / variant / "confusion.ppm")),
        "metrics": str(_write_json(out / variant / "metrics.json", metrics)),
        "params": str(nnet.save_params(params, out / variant / "params.bin")),
    }
    logger.info("%s: test top-1 %.4f", variant, metrics["top1_accuracy"])
    return metrics, paths


def experiment_full_vs_cropped(config: dict[str, Any]) -> dict[str, Any]:
    """Train one net spec on downsampled full frames and on crops; same images, same split."""
    validate_document(config, "experiment_config", "experiment config")
    seed = int(config["seed"])
    out = resolve_path(config["out_dir"])
    spec = nnet.load_spec(_existing(config["net_spec"], "net spec"))
    tree = load_taxonomy(_existing(config.get("taxonomy"), "taxonomy"))
    block = config.get("dataset", {})
    k = int(block.get("k", spec.num_classes))
    if spec.num_classes != k:
        raise ConfigError(f"net spec has {spec.num_classes} outputs for {k} classes")
    if len(spec.input_shape) != 3 or spec.input_shape[0] != 3 or spec.input_shape[1] != spec.input_shape[2]:
        raise ConfigError(f"net input must be square RGB, got {spec.input_shape}")
    tcfg, balance = train_config(config.get("train", {}), derive_seed(seed, "train"))

    with stage("dataset"):
        data = evalkit.synth_dataset(
            k=k,
            n_per_class=_dataset_sizes(block, k),
            image_size=spec.input_shape[1],
            seed=derive_seed(seed, "dataset"),
            frame_size=int(block.get("frame_size", evalkit.FRAME_SIZE)),
            tree=tree,
        )
        manifest = data.manifest(tree.subset(data.species))
        split = evalkit.stratified_split(manifest, tuple(config.get("ratios", evalkit.DEFAULT_RATIOS)), seed)
        histogram = evalkit.class_histogram(manifest)

    runs = {}
    for variant in ("full", "cropped"):
        with stage(f"train-{variant}"):
            runs[variant] = _train_variant(variant, data, split, spec, tcfg, balance, seed, out)

    with stage("compare"):
        report = evalkit.compare_runs(runs["full"][0], runs["cropped"][0])
        report.update({
            "seed": seed,
            "a": "full",
            "b": "cropped",
            "balance": balance,
            "split": split.to_dict(),
            "histogram": histogram.to_dict(),
            "artifacts": {variant: paths for variant, (_, paths) in runs.items()},
        })
        _write_json(out / "comparison.json", report)
    logger.info(
        "full %.4f vs cropped %.4f (delta %+.4f)",
        report["accuracy_a"],
        report["accuracy_b"],
        report["overall_delta"],
    )
    return report


def load_experiment_config(path: str | Path | None = None) -> dict[str, Any]:
    return load_config(path or resolve_path("config/experiment.yaml"))
