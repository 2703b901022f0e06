"""
Desk-scale reference runs of the full pipeline

Runs synth -> train -> eval on the reference configuration, optionally
repeats it to confirm the artifacts are byte-identical, and compares
training with and without offline expansion on a reduced 60-image pool.

Usage:
    python scripts/run_reference.py --out runs/reference
    python scripts/run_reference.py --out runs/reference --seed 0 --epochs 100 --repeat
    python scripts/run_reference.py --out runs/quick --epochs 10 --skip-ablation
"""

import sys
import argparse
import hashlib
import json
import logging
import time
from pathlib import Path
from typing import Any, Dict

# Add parent directory to path to import heliodet modules
sys.path.insert(0, str(Path(__file__).parent.parent))

from heliodet.models.config_models import RunConfig, parse_config
from heliodet.services.dataset import expand_training_set, save_manifest
from heliodet.services.detector import save_detector
from heliodet.services.evaluation import evaluate_dataset
from heliodet.services.synthgen import generate_dataset
from heliodet.services.trainer import train
from heliodet.utils.file_handler import save_file

logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

ABLATION_POOL = 60


def reference_config(seed: int, epochs: int, n_images: int = 300) -> RunConfig:
    return parse_config(json.dumps({"seed": seed, "epochs": epochs, "n_images": n_images}))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def desk_run(root: Path, cfg: RunConfig, expand: bool = False) -> Dict[str, Any]:
    """
    Generate, (optionally expand,) train and evaluate under root

    Returns:
        Metrics plus the hashes of the weights file and the eval report
    """
    started = time.perf_counter()
    effective = cfg.effective()
    manifest = generate_dataset(cfg.synth, cfg.run.n_images, root / "data", cfg.split.train_fraction, effective)
    if expand:
        manifest = expand_training_set(
            manifest, cfg.augment.ops_per_image, cfg.seed, cfg.augment.max_ops, cfg.detector.pad_value
        )
        save_manifest(manifest)

    net, log = train(manifest, cfg.detector, cfg.train, cfg.evaluation, effective)
    weights = root / "detector.weights"
    save_detector(net, cfg.detector, weights, effective)
    log.save(root / "detector.trainlog.txt")

    report = evaluate_dataset(manifest, net, cfg.detector, cfg.evaluation)
    report.effective = effective
    report_path = Path(save_file(root / "report.json", report.to_json()))

    smoothed = log.smoothed("objectness")
    return {
        "train_images": manifest.counts()["train"],
        "test_images": manifest.counts()["test"],
        "mAP": report.mAP,
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
        "objectness_ratio": smoothed[-1] / smoothed[0] if smoothed and smoothed[0] > 0 else None,
        "weights_sha256": _sha256(weights),
        "report_sha256": _sha256(report_path),
        "seconds": round(time.perf_counter() - started, 1),
    }


def ablation(root: Path, seed: int, epochs: int) -> Dict[str, Any]:
    """Same 60-image pool trained as-is and after offline expansion"""
    cfg = reference_config(seed, epochs, ABLATION_POOL)
    plain = desk_run(root / "original", cfg)
    augmented = desk_run(root / "augmented", cfg, expand=True)
    return {
        "original": plain,
        "augmented": augmented,
        "augmented_not_worse": (augmented["mAP"] or 0.0) >= (plain["mAP"] or 0.0),
    }


def main():
    parser = argparse.ArgumentParser(description="Run the desk-scale reference experiments")
    parser.add_argument("--out", required=True, help="Directory for datasets, weights and reports")
    parser.add_argument("--seed", type=int, default=0, help="Reference seed")
    parser.add_argument("--epochs", type=int, default=100, help="Training epochs")
    parser.add_argument("--repeat", action="store_true", help="Run the main experiment twice and compare artifacts")
    parser.add_argument("--skip-ablation", action="store_true", help="Skip the 60-image expansion comparison")

    args = parser.parse_args()
    out = Path(args.out)

    cfg = reference_config(args.seed, args.epochs)
    summary: Dict[str, Any] = {"seed": args.seed, "epochs": args.epochs}
    summary["desk"] = desk_run(out / "desk", cfg)

    if args.repeat:
        again = desk_run(out / "desk_repeat", cfg)
        summary["deterministic"] = (
            again["weights_sha256"] == summary["desk"]["weights_sha256"]
            and again["report_sha256"] == summary["desk"]["report_sha256"]
        )
    if not args.skip_ablation:
        summary["ablation"] = ablation(out / "ablation", args.seed, args.epochs)

    save_file(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")

    desk = summary["desk"]
    logger.info("=" * 60)
    logger.info("✓ Reference runs finished")
    logger.info("=" * 60)
    logger.info(f"  Test mAP@0.5:      {desk['mAP']}")
    logger.info(f"  F1:                {desk['f1']:.4f}")
    logger.info(f"  Objectness ratio:  {desk['objectness_ratio']}")
    logger.info(f"  Wall clock:        {desk['seconds']} s")
    if "deterministic" in summary:
        logger.info(f"  Deterministic:     {summary['deterministic']}")
    if "ablation" in summary:
        logger.info(f"  Expansion helps:   {summary['ablation']['augmented_not_worse']}")
    logger.info("=" * 60)


if __name__ == "__main__":
    main()
