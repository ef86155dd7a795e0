"""Command line: python -m insectcam <subcommand> [--seed N] [--out DIR] [--config FILE] [--json] [-v]

Exit codes: 0 success, 2 config error, 3 data error, 4 stage failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd

from . import evalkit, nnet, optics, pnm
from .config_loader import CONFIG_DIR, load_config, merge_overrides
from .detect import CropConfig, Mask, crop_insect, default_min_area, resize_bilinear, threshold_mask
from .errors import ConfigError, DataError, InsectcamError
from .imaging import Frame, TriggerConfig, detect_triggers, mean_luminance, render_transit
from .pipeline import RunConfig, experiment_full_vs_cropped, replay, run_pipeline
from .taxonomy import DEFAULT_THRESHOLD, ProbVector, decide, load_taxonomy, rollup
from .validate import validate_document

logger = logging.getLogger(__name__)


def _out(args: argparse.Namespace, default: str) -> Path:
    return Path(args.out or Path("runs") / default).resolve()


def _abs(path: str | None) -> str | None:
    return str(Path(path).resolve()) if path else None


def _write_json(path: Path, doc: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _emit(result: Any, as_json: bool) -> None:
    if as_json:
        print(json.dumps(result, indent=2, sort_keys=True))
        return
    if isinstance(result, list):
        print(pd.DataFrame(result).to_string(index=False) if result else "(none)")
        return
    width = max((len(k) for k in result), default=0)
    for key, value in result.items():
        if isinstance(value, (dict, list)):
            value = json.dumps(value, sort_keys=True)
        print(f"{key:<{width}}  {value}")


def _section(config: dict[str, Any], key: str) -> dict[str, Any]:
    """A named block of a config file, or the whole file when it has no such block."""
    block = config.get(key, config)
    if not isinstance(block, dict):
        raise ConfigError(f"config block {key!r} must be a mapping")
    return block


def _read_json(path: Path, what: str) -> Any:
    if not path.exists():
        raise DataError(f"{what} not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"{what} {path} is not valid JSON: {e}") from None


def _numbers(values: Any, source: str) -> list[float]:
    if not isinstance(values, list):
        raise DataError(f"{source}: expected a JSON array of numbers")
    try:
        return [float(v) for v in values]
    except (TypeError, ValueError) as e:
        raise DataError(f"{source}: not a list of numbers: {e}") from None


def _floats(text: str) -> list[float]:
    """Comma or newline separated numbers, a JSON array, or either one in @file."""
    source = "values"
    if text.startswith("@"):
        path = Path(text[1:])
        if not path.exists():
            raise DataError(f"file not found: {path}")
        text, source = path.read_text(encoding="utf-8"), str(path)
    if text.lstrip().startswith("["):
        try:
            return _numbers(json.loads(text), source)
        except json.JSONDecodeError as e:
            raise DataError(f"{source} is not valid JSON: {e}") from None
    try:
        return [float(v) for v in text.replace("\n", ",").split(",") if v.strip()]
    except ValueError as e:
        raise DataError(f"{source}: not a list of numbers: {e}") from None


def _luma_series(path: Path) -> list[float]:
    """A simulate sidecar, a JSON array, a TSV with a 'luma' column, or one value per line."""
    if not path.exists():
        raise DataError(f"file not found: {path}")
    if path.suffix == ".json":
        doc = _read_json(path, "luma file")
        return _numbers(doc.get("luma") if isinstance(doc, dict) else doc, str(path))
    try:
        table = pd.read_csv(path, sep="\t")
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise DataError(f"cannot read luma table {path}: {e}") from None
    if "luma" in table.columns:
        return _numbers(table["luma"].tolist(), str(path))
    return _floats(f"@{path}")


# --- subcommands --------------------------------------------------------------


def cmd_optics(args) -> dict[str, Any]:
    config = load_config(args.config or CONFIG_DIR / "optics_reference.yaml")
    config = merge_overrides(config, {
        "aperture_number": args.aperture_number,
        "wavelength": args.wavelength,
        "pixel_pitch": args.pixel_pitch,
        "sensor_width": args.sensor_width,
        "fov_width": args.fov_width,
        "circle_of_confusion": args.circle_of_confusion,
        "flash_duration": args.flash_duration,
        "exposure_time": args.exposure_time,
        "insect_speed": args.speed,
    })
    validate_document(config, "optical_config", "optical config")
    cfg = optics.OpticalConfig.from_dict(config)
    speed = float(config.get("insect_speed", 0.5))
    return {**optics.design_report(cfg, speed).to_dict(), "supplement": optics.supplement(cfg, speed)}


def cmd_simulate(args) -> dict[str, Any]:
    out = _out(args, "simulate")
    transit = render_transit(args.class_id, args.seed, args.frames, args.width, args.height)
    names, timestamps, luma = [], [], []
    for i, (frame, mask) in enumerate(zip(transit.frames, transit.masks)):
        name = f"f{i:03d}.ppm"
        pnm.write_rgb(out / "frames" / name, frame.pixels)
        if mask is not None:
            Mask(mask).write_pgm(out / "masks" / f"f{i:03d}.pgm")
        names.append(name)
        timestamps.append(frame.timestamp)
        luma.append(mean_luminance(frame))
    sidecar = _write_json(out / "transit.json", {
        "class_id": args.class_id,
        "seed": args.seed,
        "frames": names,
        "timestamps": timestamps,
        "luma": luma,
        "flash_indices": list(transit.flash_indices),
    })
    return {
        "frames": len(transit.frames),
        "flash_indices": list(transit.flash_indices),
        "sidecar": str(sidecar),
        "out": str(out),
    }


def _trigger_config(args) -> TriggerConfig:
    block = _section(load_config(args.config), "trigger") if args.config else {}
    block = merge_overrides({k: v for k, v in block.items() if k != "buffer_seconds"}, {
        "baseline_window": args.window,
        "ratio_threshold": args.ratio,
        "cooldown": args.cooldown,
        "followup_count": args.followups,
        "followup_stride": args.stride,
    })
    return TriggerConfig.from_dict(block)


def cmd_trigger(args) -> list[dict[str, Any]]:
    cfg = _trigger_config(args)
    if args.frames_dir:
        paths = sorted(Path(args.frames_dir).glob("*.ppm"))
        if not paths:
            raise DataError(f"no .ppm frames in {args.frames_dir}")
        series = [mean_luminance(Frame(pnm.read_rgb(p))) for p in paths]
    elif args.luma:
        series = _luma_series(Path(args.luma))
    else:
        raise ConfigError("trigger needs --frames-dir or --luma")
    return [e.to_dict() for e in detect_triggers(series, cfg)]


def cmd_detect(args) -> dict[str, Any]:
    frame = Frame(pnm.read_rgb(args.image))
    if args.mask:
        mask = Mask.read_pgm(args.mask)
    elif args.threshold is not None:
        mask = threshold_mask(frame, args.threshold)
    else:
        raise ConfigError("detect needs --mask or --threshold")
    cfg = CropConfig(
        connectivity=args.connectivity,
        min_area=args.min_area or default_min_area(frame.width, frame.height),
        margin=args.margin,
        target_size=args.resize,
    )
    tight, square, patch = crop_insect(frame, mask, cfg)
    crop_path = pnm.write_rgb(_out(args, "detect") / f"{Path(args.image).stem}_crop.ppm", patch.pixels)
    return {"tight": tight.to_dict(), "square": square.to_dict(), "min_area": cfg.min_area, "crop": str(crop_path)}


def _ratios(text: str) -> tuple[float, ...]:
    return tuple(_floats(text))


def cmd_split(args) -> dict[str, Any]:
    tree = load_taxonomy(args.taxonomy)
    manifest = evalkit.load_manifest(args.manifest, tree)
    assignment = evalkit.stratified_split(manifest, _ratios(args.ratios), args.seed)
    written = manifest.with_splits(assignment).write(_out(args, "split") / "manifest_split.tsv")
    return {
        "seed": args.seed,
        "counts": assignment.counts,
        "histogram": evalkit.class_histogram(manifest).to_dict(),
        "manifest": str(written),
    }


def _tagged(manifest: evalkit.DatasetManifest, seed: int) -> evalkit.DatasetManifest:
    if all(r.split for r in manifest.records):
        return manifest
    return manifest.with_splits(evalkit.stratified_split(manifest, seed=seed))


def cmd_train(args) -> dict[str, Any]:
    spec = nnet.load_spec(args.spec)
    tree = load_taxonomy(args.taxonomy)
    manifest = _tagged(evalkit.load_manifest(args.manifest, tree), args.seed)
    block = _section(load_config(args.config), "train") if args.config else {}
    block = merge_overrides(block, {"epochs": args.epochs, "learning_rate": args.lr, "seed": args.seed})
    block.pop("balance", None)
    cfg = nnet.TrainConfig.from_dict(block)
    train_set = evalkit.manifest_tensors(manifest, spec.input_shape, "train")
    val_set = evalkit.manifest_tensors(manifest, spec.input_shape, "val")
    params, history = nnet.train(spec, train_set, cfg, val=val_set)
    out = _out(args, "train")
    return {
        "params": str(nnet.save_params(params, out / "params.bin")),
        "history": str(_write_json(out / "history.json", history)),
        "samples": len(train_set),
        "final": history[-1],
    }


def _decision_block(probs: ProbVector, args) -> dict[str, Any]:
    tree = load_taxonomy(args.taxonomy)
    rolled = rollup(probs, tree)
    return {"rollup": rolled, "decision": decide(rolled, args.threshold).to_dict()}


def cmd_predict(args) -> dict[str, Any]:
    spec = nnet.load_spec(args.spec)
    params = nnet.load_params(args.params, spec)
    frame = Frame(pnm.read_rgb(args.image))
    _, h, w = spec.input_shape
    if (frame.width, frame.height) != (w, h):
        frame = resize_bilinear(frame, w, h)
    probs = nnet.predict(spec, params, nnet.image_to_tensor(frame))
    tree = load_taxonomy(args.taxonomy)
    return {
        "probs": {s: float(p) for s, p in zip(tree.species, probs.values)},
        **_decision_block(probs, args),
    }


def cmd_rollup(args) -> dict[str, Any]:
    return _decision_block(ProbVector(np.asarray(_floats(args.probs))), args)


def cmd_eval(args) -> dict[str, Any]:
    spec = nnet.load_spec(args.spec)
    params = nnet.load_params(args.params, spec)
    tree = load_taxonomy(args.taxonomy)
    manifest = _tagged(evalkit.load_manifest(args.manifest, tree), args.seed)
    data = evalkit.manifest_tensors(manifest, spec.input_shape, args.split)
    if len(data) == 0:
        raise DataError(f"no records in split {args.split!r}")
    preds = nnet.predict_batch(spec, params, data.x).argmax(axis=1)
    cm = evalkit.confusion_matrix(preds, data.y, len(tree), tree.species)
    metrics = evalkit.evaluation_metrics(cm)
    out = _out(args, "eval")
    _write_json(out / "metrics.json", metrics)
    cm.write_csv(out / "confusion.csv")
    cm.write_heatmap(out / "confusion.ppm")
    flagged = [c["species"] for c in metrics["per_class"] if c["never_predicted"]]
    return {"top1_accuracy": metrics["top1_accuracy"], "total": metrics["total"], "never_predicted": flagged, "out": str(out)}


def cmd_compare(args) -> dict[str, Any]:
    docs = [_read_json(Path(p), "metrics file") for p in (args.metrics_a, args.metrics_b)]
    for p, doc in zip((args.metrics_a, args.metrics_b), docs):
        if not isinstance(doc, dict) or "per_class" not in doc or "top1_accuracy" not in doc:
            raise DataError(f"{p} is not a metrics file")
    report = evalkit.compare_runs(*docs)
    if args.out:
        _write_json(_out(args, "compare") / "comparison.json", report)
    return report


def cmd_pipeline(args) -> dict[str, Any]:
    config = merge_overrides(load_config(args.config), {"seed": args.seed, "out_dir": _abs(args.out)})
    record = run_pipeline(RunConfig.from_dict(config))
    return {"run_id": record.run_id, "run_dir": record.artifacts["run_dir"], "metrics": record.metrics}


def cmd_experiment(args) -> dict[str, Any]:
    config = load_config(args.config or CONFIG_DIR / "experiment.yaml")
    config = merge_overrides(config, {"seed": args.seed, "out_dir": _abs(args.out), "train.epochs": args.epochs})
    report = experiment_full_vs_cropped(config)
    return {k: report[k] for k in ("accuracy_a", "accuracy_b", "overall_delta", "worst_regression", "artifacts")}


def cmd_replay(args) -> dict[str, Any]:
    return replay(args.record, _abs(args.out))


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--config", default=None, help="YAML or JSON config file")
    common.add_argument("--json", action="store_true", help="machine-readable JSON on stdout")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="insectcam", description="Insect camera trap pipeline tools.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, fn, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=fn)
        return p

    p = add("optics", cmd_optics, "optical design report")
    p.add_argument("--speed", type=float, help="insect speed in m/s")
    p.add_argument("--aperture-number", type=float)
    p.add_argument("--pixel-pitch", type=float, help="µm")
    p.add_argument("--fov-width", type=float, help="mm")
    p.add_argument("--wavelength", type=float, help="µm")
    p.add_argument("--sensor-width", type=float, help="mm")
    p.add_argument("--circle-of-confusion", type=float, help="µm; default is the Airy disk diameter")
    p.add_argument("--flash-duration", type=float, help="s")
    p.add_argument("--exposure-time", type=float, help="s")

    p = add("simulate", cmd_simulate, "render one synthetic transit to PPM frames")
    p.add_argument("--class-id", type=int, default=0)
    p.add_argument("--frames", type=int, default=24)
    p.add_argument("--width", type=int, default=320)
    p.add_argument("--height", type=int, default=240)

    p = add("trigger", cmd_trigger, "brightness-spike trigger over a frame sequence")
    p.add_argument("--frames-dir", help="directory of .ppm frames, sorted by name")
    p.add_argument("--luma", help="transit.json sidecar, JSON array, TSV with a 'luma' column, or one value per line")
    p.add_argument("--window", type=int)
    p.add_argument("--ratio", type=float)
    p.add_argument("--cooldown", type=int)
    p.add_argument("--followups", type=int)
    p.add_argument("--stride", type=int)

    p = add("detect", cmd_detect, "localize and crop the insect in one image")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", help="PGM mask; omit to use --threshold")
    p.add_argument("--threshold", type=int, help="global luma threshold 0..255")
    p.add_argument("--connectivity", type=int, choices=(4, 8), default=8)
    p.add_argument("--min-area", type=int)
    p.add_argument("--margin", type=float, default=0.05)
    p.add_argument("--resize", "--size", dest="resize", type=int, default=224, metavar="N", help="side of the written crop")

    p = add("split", cmd_split, "stratified train/val/test split of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--taxonomy")
    p.add_argument("--ratios", default="0.6,0.2,0.2")

    p = add("train", cmd_train, "train a net spec on a manifest")
    p.add_argument("--spec", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--taxonomy")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)

    p = add("predict", cmd_predict, "classify one image")
    p.add_argument("--spec", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--taxonomy")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)

    p = add("rollup", cmd_rollup, "roll species probabilities up the taxonomy")
    p.add_argument("--probs", required=True, help="comma-separated values, a JSON array, or @file")
    p.add_argument("--taxonomy")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)

    p = add("eval", cmd_eval, "evaluate parameters on a manifest split")
    p.add_argument("--spec", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--taxonomy")
    p.add_argument("--split", default="test", choices=evalkit.SPLITS)

    p = add("compare", cmd_compare, "per-class deltas between two metrics files")
    p.add_argument("metrics_a")
    p.add_argument("metrics_b")

    p = add("pipeline", cmd_pipeline, "end-to-end run on simulated transits")

    p = add("experiment", cmd_experiment, "full frames vs crops on synthetic data")
    p.add_argument("--epochs", type=int)

    p = add("replay", cmd_replay, "re-run a run record and check its metrics")
    p.add_argument("record")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.seed is None and args.command in ("simulate", "split", "train", "eval"):
        args.seed = 0
    try:
        result = args.func(args)
    except InsectcamError as e:
        logger.error("%s", e)
        return e.exit_code
    _emit(result, args.json)
    return 0
