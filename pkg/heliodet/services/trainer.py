"""
Mini-batch SGD training loop for the detector
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union
import json
import logging
import math

import numpy as np

from heliodet.exceptions import ArgumentError, TrainingDivergedError
from heliodet.models.config_models import DetectorConfig, EvalConfig, TrainConfig
from heliodet.models.report_models import TrainLogRecord
from heliodet.nn.network import Network
from heliodet.nn.optim import SGD
from heliodet.services.augment import apply_stack, random_op_stack
from heliodet.services.dataset import DatasetManifest, Sample, load_split, preprocess
from heliodet.services.detector import LossBreakdown, TargetTensor, batch_loss, build_network, encode_targets
from heliodet.services.evaluation import evaluate_samples, network_detector
from heliodet.utils.file_handler import save_file
from heliodet.utils.rng import derive_rng

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "box", "objectness", "no_objectness", "class", "total", "val_mAP")

# Label-preserving ops (plus hflip) used when TrainConfig.augment is on
TRAIN_AUGMENT_POOL = ("hue", "saturation", "brightness", "exposure", "blur", "noise", "hflip", "grayscale")


@dataclass
class TrainLog:
    """Per-epoch records; serialized as whitespace-separated columns"""

    records: List[TrainLogRecord] = field(default_factory=list)
    effective: Dict[str, Any] = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [
            "# heliodet train log",
            f"# effective {json.dumps(self.effective, sort_keys=True, separators=(',', ':'))}",
            "# " + " ".join(LOG_COLUMNS),
        ]
        for r in self.records:
            val = "nan" if r.val_mAP is None else f"{r.val_mAP:.6f}"
            lines.append(
                f"{r.epoch} {r.box:.6f} {r.objectness:.6f} {r.no_objectness:.6f} "
                f"{r.class_loss:.6f} {r.total:.6f} {val}"
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainLog":
        log = cls()
        for line in text.splitlines():
            if line.startswith("# effective "):
                log.effective = json.loads(line[len("# effective "):])
            if not line.strip() or line.startswith("#"):
                continue
            values = line.split()
            row = dict(zip(LOG_COLUMNS, values))
            val = float(row["val_mAP"])
            log.records.append(TrainLogRecord(
                epoch=int(row["epoch"]),
                box=float(row["box"]),
                objectness=float(row["objectness"]),
                no_objectness=float(row["no_objectness"]),
                class_loss=float(row["class"]),
                total=float(row["total"]),
                val_mAP=None if math.isnan(val) else val,
            ))
        return log

    def save(self, path: Union[str, Path]):
        save_file(path, self.to_text())
        logger.info(f"Train log saved: {path}")

    def smoothed(self, term: str, window: int = 5) -> List[float]:
        """Trailing moving average of one loss column"""
        attr = "class_loss" if term == "class" else term
        values = [getattr(r, attr) for r in self.records]
        return [float(np.mean(values[max(0, i - window + 1):i + 1])) for i in range(len(values))]


def _prepare(sample: Sample, cfg: DetectorConfig) -> Tuple[np.ndarray, TargetTensor]:
    boxed, annots, _ = preprocess(sample.image, sample.annotations, 0, cfg.input_size, cfg.pad_value)
    return boxed.to_chw_float(), encode_targets(annots, cfg)


def _augmented(sample: Sample, seed: int, epoch: int, index: int) -> Sample:
    rng = derive_rng(seed, "train-augment", epoch, index)
    ops = random_op_stack(rng, max_ops=2, pool=TRAIN_AUGMENT_POOL)
    img, annots = apply_stack(sample.image, sample.annotations, ops)
    return Sample(sample.entry, img, annots)


def epoch_lr(train_cfg: TrainConfig, epoch: int) -> float:
    """Linear warmup from lr/10 over the first warmup_epochs (0-based epoch)"""
    if epoch >= train_cfg.warmup_epochs:
        return train_cfg.lr
    return train_cfg.lr * (0.1 + 0.9 * epoch / train_cfg.warmup_epochs)


def train(
    manifest: DatasetManifest,
    detector_cfg: DetectorConfig,
    train_cfg: TrainConfig,
    eval_cfg: Optional[EvalConfig] = None,
    effective: Optional[Dict[str, Any]] = None
) -> Tuple[Network, TrainLog]:
    """
    Train a fresh detector on the train split

    Shuffling, initialization and in-loop augmentation are all keyed by
    train_cfg.seed, so equal inputs give bit-identical weights and logs.
    Training runs on one thread.

    Args:
        manifest: Dataset with a non-empty train split
        detector_cfg: Architecture and thresholds
        train_cfg: Optimizer and loss settings
        eval_cfg: Validation settings (mAP over the test split each epoch)
        effective: Run config echoed into the log header

    Returns:
        (trained network, per-epoch log)

    Raises:
        ArgumentError: Empty train split
        TrainingDivergedError: A loss term became non-finite
    """
    eval_cfg = eval_cfg or EvalConfig()
    train_samples = load_split(manifest, "train")
    if not train_samples:
        raise ArgumentError("training split is empty")
    val_samples = load_split(manifest, "test")

    net = build_network(detector_cfg, train_cfg.seed)
    optimizer = SGD(net, train_cfg.lr, train_cfg.momentum, train_cfg.weight_decay)
    log = TrainLog(effective=effective or {})

    prepared = [_prepare(s, detector_cfg) for s in train_samples]
    n = len(prepared)
    logger.info(
        f"Training on {n} images ({len(val_samples)} validation), "
        f"{train_cfg.epochs} epochs, batch {train_cfg.batch_size}, seed {train_cfg.seed}"
    )

    for epoch in range(train_cfg.epochs):
        if train_cfg.augment:
            prepared = [
                _prepare(_augmented(s, train_cfg.seed, epoch, i), detector_cfg)
                for i, s in enumerate(train_samples)
            ]
        lr = epoch_lr(train_cfg, epoch)
        order = derive_rng(train_cfg.seed, "shuffle", epoch).permutation(n)
        epoch_loss = LossBreakdown()

        for batch_index, start in enumerate(range(0, n, train_cfg.batch_size)):
            idx = order[start:start + train_cfg.batch_size]
            x = np.stack([prepared[i][0] for i in idx])
            targets = [prepared[i][1] for i in idx]

            out = net.forward(x)
            loss, grad = batch_loss(out, targets, detector_cfg, train_cfg.lambda_coord, train_cfg.lambda_noobj)
            bad_term = loss.non_finite_term()
            if bad_term is not None:
                logger.error(f"Loss diverged at epoch {epoch + 1}, batch {batch_index + 1}: {loss.as_dict()}")
                raise TrainingDivergedError(epoch + 1, batch_index + 1, bad_term)

            net.zero_grads()
            net.backward(grad)
            optimizer.step(lr)
            epoch_loss = epoch_loss + loss.scaled(len(idx))
            logger.debug(f"epoch {epoch + 1} batch {batch_index + 1}: total {loss.total:.5f}")

        mean = epoch_loss.scaled(1.0 / n)
        val_map = None
        if val_samples:
            report = evaluate_samples(
                val_samples,
                network_detector(net, detector_cfg, eval_cfg.ap_score_floor),
                manifest.classes,
                eval_cfg.iou_threshold,
                detector_cfg.score_threshold,
                workers=1,
            )
            val_map = report.mAP

        terms = mean.as_dict()
        log.records.append(TrainLogRecord(
            epoch=epoch + 1,
            box=terms["box"],
            objectness=terms["objectness"],
            no_objectness=terms["no_objectness"],
            class_loss=terms["class"],
            total=terms["total"],
            val_mAP=val_map,
        ))
        val_text = "" if val_map is None else f", val mAP {val_map:.4f}"
        logger.info(
            f"Epoch {epoch + 1}/{train_cfg.epochs}: total {mean.total:.4f} "
            f"(box {mean.box:.4f}, obj {mean.objectness:.4f}, noobj {mean.no_objectness:.4f}, "
            f"class {mean.classification:.4f}), lr {lr:.5f}{val_text}"
        )

    return net, log
