"""
HelioDet command-line entry point

Usage:
    heliodet synth --config run.json --out data/synth
    heliodet train --config run.json --dataset data/synth --out runs/desk.weights
    heliodet eval --config run.json --dataset data/synth --weights runs/desk.weights --out runs/report.json
    heliodet detect --weights runs/desk.weights --image scene.ppm --overlay boxes.ppm

Exit codes: 0 success, 1 validation/runtime error, 2 I/O error.
"""

from pathlib import Path
from typing import Callable, Dict, List, Optional
import argparse
import json
import logging
import sys

from pydantic import ValidationError

from heliodet import __version__
from heliodet.config import settings
from heliodet.exceptions import HeliodetError
from heliodet.models.config_models import DetectorConfig, RunConfig, parse_config
from heliodet.nn import gradcheck
from heliodet.services import anchors, dataset, detector, evaluation, synthgen, trainer
from heliodet.utils.file_handler import read_text, save_file
from heliodet.utils.image_io import read_image, write_image

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_IO = 2


def setup_logging():
    level = logging.DEBUG if settings.debug else getattr(logging, settings.log_level.upper(), logging.INFO)
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )


def load_run_config(args: argparse.Namespace) -> RunConfig:
    """Config file (or defaults) with --seed applied"""
    cfg = parse_config(read_text(args.config)) if args.config else parse_config("{}")
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _dataset_root(args: argparse.Namespace, cfg: RunConfig) -> str:
    return args.dataset or cfg.paths.dataset_root or settings.dataset_root


def _weights_in(args: argparse.Namespace, cfg: RunConfig) -> str:
    path = args.weights or cfg.paths.weights_in
    if not path:
        raise HeliodetError("no weights given (--weights or weights_in)")
    return path


def _emit(text: str, out: Optional[str]):
    """Write a result document to --out, or print it"""
    if out:
        save_file(out, text)
        logger.info(f"Written: {out}")
    else:
        print(text, end="" if text.endswith("\n") else "\n")


def _load_detector(args: argparse.Namespace, cfg: RunConfig):
    """Network and its architecture from the weights file; thresholds from the run config"""
    net, weights_cfg = detector.load_detector(_weights_in(args, cfg))
    merged = weights_cfg.model_copy(update={
        "score_threshold": cfg.detector.score_threshold,
        "nms_threshold": cfg.detector.nms_threshold,
        "pad_value": cfg.detector.pad_value,
    })
    return net, merged


def cmd_synth(args: argparse.Namespace, cfg: RunConfig) -> int:
    root = args.out or _dataset_root(args, cfg)
    manifest = synthgen.generate_dataset(
        cfg.synth, cfg.run.n_images, root, cfg.split.train_fraction, cfg.effective()
    )
    counts = manifest.counts()
    logger.info(f"✓ Synthetic dataset ready: {root} ({counts['train']} train / {counts['test']} test)")
    return EXIT_OK


def cmd_split(args: argparse.Namespace, cfg: RunConfig) -> int:
    root = _dataset_root(args, cfg)
    current = dataset.load_manifest(root)
    manifest = dataset.split_dataset(current.entries, cfg.split.train_fraction, cfg.seed, root, current.classes)
    manifest.provenance = {
        **current.provenance,
        "split": {"train_fraction": cfg.split.train_fraction, "seed": cfg.seed},
        "effective": cfg.effective(),
    }
    dataset.save_manifest(manifest)
    return EXIT_OK


def cmd_augment(args: argparse.Namespace, cfg: RunConfig) -> int:
    root = _dataset_root(args, cfg)
    manifest = dataset.load_manifest(root)
    expanded = dataset.expand_training_set(
        manifest, cfg.augment.ops_per_image, cfg.seed, cfg.augment.max_ops, cfg.detector.pad_value
    )
    expanded.provenance["effective"] = cfg.effective()
    dataset.save_manifest(expanded)
    return EXIT_OK


def _resolve_anchors(cfg: RunConfig, manifest: dataset.DatasetManifest) -> DetectorConfig:
    if not cfg.run.auto_anchors or cfg.detector.anchors is not None:
        return cfg.detector
    priors = anchors.compute_anchors(manifest, cfg.detector.boxes_per_cell, cfg.seed)
    return DetectorConfig.model_validate({**cfg.detector.model_dump(), "anchors": priors})


def cmd_train(args: argparse.Namespace, cfg: RunConfig) -> int:
    manifest = dataset.load_manifest(_dataset_root(args, cfg))
    detector_cfg = _resolve_anchors(cfg, manifest)
    effective = cfg.effective()
    net, log = trainer.train(manifest, detector_cfg, cfg.train, cfg.evaluation, effective)

    out = Path(args.out or cfg.paths.weights_out or Path(settings.runs_dir) / "detector.weights")
    detector.save_detector(net, detector_cfg, out, effective)
    log.save(out.with_suffix(".trainlog.txt"))
    logger.info(f"✓ Training finished: {out}")
    return EXIT_OK


def cmd_detect(args: argparse.Namespace, cfg: RunConfig) -> int:
    if not args.image:
        raise HeliodetError("detect needs --image")
    net, detector_cfg = _load_detector(args, cfg)
    img = read_image(args.image)
    dets = detector.detect(img, net, detector_cfg)

    result = {
        "image": args.image,
        "detections": [
            {
                "class_id": d.class_id,
                "score": round(d.score, 6),
                "objectness": round(d.objectness, 6),
                "class_scores": [round(p, 6) for p in d.class_scores],
                "bbox": [round(v, 6) for v in (d.bbox.cx, d.bbox.cy, d.bbox.w, d.bbox.h)],
            }
            for d in dets
        ],
        "effective": cfg.effective(),
    }
    _emit(json.dumps(result, indent=2, sort_keys=True) + "\n", args.out)
    if args.overlay:
        write_image(args.overlay, detector.draw_detections(img, dets))
        logger.info(f"Overlay written: {args.overlay}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, cfg: RunConfig) -> int:
    manifest = dataset.load_manifest(_dataset_root(args, cfg))
    net, detector_cfg = _load_detector(args, cfg)
    report = evaluation.evaluate_dataset(manifest, net, detector_cfg, cfg.evaluation)
    report.effective = cfg.effective()
    _emit(report.to_json(), args.out or cfg.paths.report_out)
    return EXIT_OK


def cmd_bench(args: argparse.Namespace, cfg: RunConfig) -> int:
    manifest = dataset.load_manifest(_dataset_root(args, cfg))
    net, detector_cfg = _load_detector(args, cfg)
    images = [s.image for s in dataset.load_split(manifest, "test")]
    stats = evaluation.bench_latency(net, detector_cfg, images, cfg.evaluation.warmup_count)
    payload = {**stats.model_dump(mode="json"), "effective": cfg.effective()}
    _emit(json.dumps(payload, indent=2, sort_keys=True) + "\n", args.out)
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace, cfg: RunConfig) -> int:
    results = gradcheck.run_suite(seeds=args.seeds, base_seed=cfg.seed)
    summary: Dict[str, Dict[str, object]] = {}
    for r in results:
        entry = summary.setdefault(r.case, {"max_error": 0.0, "passed": True, "checked": 0, "skipped": 0})
        entry["max_error"] = max(entry["max_error"], r.max_error)
        entry["passed"] = entry["passed"] and r.passed
        entry["checked"] += r.checked
        entry["skipped"] += r.skipped
    payload = {"tolerance": gradcheck.TOLERANCE, "cases": summary, "effective": cfg.effective()}
    _emit(json.dumps(payload, indent=2, sort_keys=True) + "\n", args.out)
    failed = [case for case, entry in summary.items() if not entry["passed"]]
    if failed:
        logger.error(f"Gradient check failed: {', '.join(failed)}")
        return EXIT_ERROR
    return EXIT_OK


def cmd_anchors(args: argparse.Namespace, cfg: RunConfig) -> int:
    manifest = dataset.load_manifest(_dataset_root(args, cfg))
    priors = anchors.compute_anchors(manifest, cfg.detector.boxes_per_cell, cfg.seed)
    payload = {"anchors": [list(a) for a in priors], "effective": cfg.effective()}
    _emit(json.dumps(payload, indent=2, sort_keys=True) + "\n", args.out)
    return EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace, RunConfig], int]] = {
    "synth": cmd_synth,
    "split": cmd_split,
    "augment": cmd_augment,
    "train": cmd_train,
    "detect": cmd_detect,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "gradcheck": cmd_gradcheck,
    "anchors": cmd_anchors,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="heliodet",
        description="One-stage solar-cell detection toolkit"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Flat JSON run configuration")
    common.add_argument("--seed", type=int, help="Override the run seed")
    common.add_argument("--out", help="Output path (dataset root, weights file or report)")
    common.add_argument("--dataset", help="Dataset root (overrides dataset_root)")
    common.add_argument("--weights", help="Weights file to load (overrides weights_in)")

    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name, parents=[common])
        if name == "detect":
            cmd.add_argument("--image", help="PPM/PGM image to run on")
            cmd.add_argument("--overlay", help="Write a PPM with the boxes drawn in")
        if name == "gradcheck":
            cmd.add_argument("--seeds", type=int, default=gradcheck.DEFAULT_SEEDS, help="Seeds per case")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    setup_logging()
    args = build_parser().parse_args(argv)

    try:
        cfg = load_run_config(args)
        return COMMANDS[args.command](args, cfg)
    except OSError as e:
        # DatasetIOError lands here too
        logger.error(f"❌ I/O error: {e}")
        return EXIT_IO
    except (HeliodetError, ValidationError) as e:
        logger.error(f"❌ {e}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
