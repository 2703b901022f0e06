"""
Detection metrics: matching, precision/recall/F1, P-R curves, AP, mAP
and inference latency
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, Hashable, List, Optional, Sequence, Tuple
import logging
import time

import numpy as np

from heliodet.exceptions import ArgumentError, MetricsError
from heliodet.models.config_models import DetectorConfig, EvalConfig
from heliodet.models.report_models import ClassMetrics, EvalReport, LatencyStats
from heliodet.nn.network import Network
from heliodet.services.dataset import DatasetManifest, Sample, load_split
from heliodet.services.detector import detect
from heliodet.services.labels import Annotation
from heliodet.utils.geometry import Detection, iou_matrix
from heliodet.utils.image_io import Image
from heliodet.utils.workers import ordered_map

logger = logging.getLogger(__name__)

DetectFn = Callable[[Image], List[Detection]]


@dataclass
class MatchResult:
    tp: int
    fp: int
    fn: int
    # (detection index, ground-truth index, IoU)
    pairs: List[Tuple[int, int, float]] = field(default_factory=list)


def _score_order(dets: Sequence[Detection]) -> List[int]:
    return sorted(range(len(dets)), key=lambda i: (-dets[i].score, dets[i].class_id, dets[i].bbox.cx))


def _best_match(
    det: Detection, gts: Sequence[Annotation], overlaps: np.ndarray, taken: List[bool], iou_threshold: float
) -> Tuple[int, float]:
    best, best_iou = -1, 0.0
    for j, gt in enumerate(gts):
        if taken[j] or gt.class_id != det.class_id:
            continue
        # strict > keeps the lower gt index on ties
        if overlaps[j] > best_iou:
            best, best_iou = j, float(overlaps[j])
    if best >= 0 and best_iou >= iou_threshold:
        return best, best_iou
    return -1, best_iou


def match_detections(dets: Sequence[Detection], gts: Sequence[Annotation], iou_threshold: float = 0.5) -> MatchResult:
    """
    Greedy one-to-one matching in score order

    Each detection takes the unmatched same-class ground truth of highest
    IoU if that IoU >= iou_threshold. Detections are sorted here, so callers
    need not sort them.
    """
    overlaps = iou_matrix([d.bbox.to_corners() for d in dets], [g.bbox.to_corners() for g in gts])
    taken = [False] * len(gts)
    pairs = []
    for i in _score_order(dets):
        j, overlap = _best_match(dets[i], gts, overlaps[i], taken, iou_threshold)
        if j >= 0:
            taken[j] = True
            pairs.append((i, j, overlap))
    tp = len(pairs)
    return MatchResult(tp=tp, fp=len(dets) - tp, fn=len(gts) - tp, pairs=pairs)


def precision_recall_f1(tp: int, fp: int, fn: int) -> Tuple[float, float, float]:
    """P = tp/(tp+fp), R = tp/(tp+fn), F1 = 2PR/(P+R); every 0/0 is 0"""
    if min(tp, fp, fn) < 0:
        raise ArgumentError(f"counts must be non-negative, got tp={tp} fp={fp} fn={fn}")
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


@dataclass
class PRCurve:
    """Points in detection-rank order; recall is non-decreasing"""

    recall: List[float] = field(default_factory=list)
    precision: List[float] = field(default_factory=list)

    @property
    def points(self) -> List[Tuple[float, float]]:
        return list(zip(self.recall, self.precision))


def envelope_area(recall: Sequence[float], precision: Sequence[float]) -> float:
    """All-point interpolated area: precision at r is the max precision at recall >= r"""
    if not recall:
        return 0.0
    env = np.maximum.accumulate(np.asarray(precision, dtype=np.float64)[::-1])[::-1]
    steps = np.diff(np.concatenate([[0.0], np.asarray(recall, dtype=np.float64)]))
    return float(np.sum(steps * env))


def average_precision(
    ranked: Sequence[Tuple[Hashable, Detection]],
    gts_per_image: Dict[Hashable, Sequence[Annotation]],
    class_id: int,
    iou_threshold: float = 0.5
) -> Tuple[Optional[float], PRCurve]:
    """
    AP of one class over a dataset

    Args:
        ranked: (image id, detection) pairs; only class_id detections count
        gts_per_image: Image id -> ground truth of that image
        class_id: Class to score
        iou_threshold: Match threshold

    Returns:
        (AP or None when the class has no ground truth, P-R curve)
    """
    gts = {
        image_id: [g for g in annots if g.class_id == class_id]
        for image_id, annots in gts_per_image.items()
    }
    n_gt = sum(len(g) for g in gts.values())
    if n_gt == 0:
        return None, PRCurve()

    candidates = [(image_id, d) for image_id, d in ranked if d.class_id == class_id]
    # stable: equal scores keep input order
    candidates.sort(key=lambda pair: -pair[1].score)

    taken = {image_id: [False] * len(g) for image_id, g in gts.items()}
    curve = PRCurve()
    tp = fp = 0
    for image_id, det in candidates:
        image_gts = gts.get(image_id, [])
        overlaps = iou_matrix([det.bbox.to_corners()], [g.bbox.to_corners() for g in image_gts])[0]
        j, _ = _best_match(det, image_gts, overlaps, taken.setdefault(image_id, []), iou_threshold)
        if j >= 0:
            taken[image_id][j] = True
            tp += 1
        else:
            fp += 1
        curve.recall.append(tp / n_gt)
        curve.precision.append(tp / (tp + fp))
    return envelope_area(curve.recall, curve.precision), curve


def mean_ap(aps: Sequence[Optional[float]]) -> float:
    """Mean over the defined APs (classes with ground truth)"""
    defined = [ap for ap in aps if ap is not None]
    if not defined:
        raise MetricsError("mAP undefined: no class has ground truth")
    return float(sum(defined) / len(defined))


def evaluate_samples(
    samples: Sequence[Sample],
    detect_fn: DetectFn,
    class_names: Sequence[str],
    iou_threshold: float = 0.5,
    score_threshold: float = 0.25,
    workers: Optional[int] = None
) -> EvalReport:
    """
    Metrics of a detector over loaded samples

    detect_fn should return every detection down to the AP score floor: AP
    uses all of them, P/R/F1 only those with score > score_threshold.
    """
    if not samples:
        raise ArgumentError("cannot evaluate an empty split")
    all_dets = ordered_map(lambda s: detect_fn(s.image), samples, workers)
    gts_per_image = {i: s.annotations for i, s in enumerate(samples)}
    ranked = [(i, d) for i, dets in enumerate(all_dets) for d in dets]

    operating = [[d for d in dets if d.score > score_threshold] for dets in all_dets]
    classes = []
    totals = [0, 0, 0]
    for class_id, name in enumerate(class_names):
        ap, _ = average_precision(ranked, gts_per_image, class_id, iou_threshold)
        tp = fp = fn = 0
        for dets, sample in zip(operating, samples):
            result = match_detections(
                [d for d in dets if d.class_id == class_id],
                [g for g in sample.annotations if g.class_id == class_id],
                iou_threshold,
            )
            tp, fp, fn = tp + result.tp, fp + result.fp, fn + result.fn
        precision, recall, f1 = precision_recall_f1(tp, fp, fn)
        classes.append(ClassMetrics(
            class_id=class_id, name=name, ap=ap, precision=precision, recall=recall, f1=f1,
            tp=tp, fp=fp, fn=fn, n_gt=tp + fn,
        ))
        totals = [totals[0] + tp, totals[1] + fp, totals[2] + fn]

    try:
        m_ap = mean_ap([c.ap for c in classes])
    except MetricsError:
        logger.warning("No ground truth in the evaluated split; mAP left empty")
        m_ap = None
    precision, recall, f1 = precision_recall_f1(*totals)
    return EvalReport(
        classes=classes,
        mAP=m_ap,
        precision=precision,
        recall=recall,
        f1=f1,
        iou_threshold=iou_threshold,
        score_threshold=score_threshold,
        n_images=len(samples),
    )


def network_detector(net: Network, cfg: DetectorConfig, score_floor: float) -> DetectFn:
    return lambda img: detect(img, net, cfg, score_threshold=score_floor)


def evaluate_dataset(
    manifest: DatasetManifest,
    net: Network,
    detector_cfg: DetectorConfig,
    eval_cfg: Optional[EvalConfig] = None,
    split: str = "test"
) -> EvalReport:
    """
    Run the detector over one split and score it

    Raises:
        DatasetIOError: Files of the split are missing (all are listed)
        ArgumentError: The split is empty
    """
    eval_cfg = eval_cfg or EvalConfig()
    samples = load_split(manifest, split)
    logger.info(f"Evaluating {len(samples)} {split} images")
    report = evaluate_samples(
        samples,
        network_detector(net, detector_cfg, eval_cfg.ap_score_floor),
        manifest.classes,
        eval_cfg.iou_threshold,
        detector_cfg.score_threshold,
    )
    if eval_cfg.measure_latency:
        report.latency = bench_latency(net, detector_cfg, [s.image for s in samples], eval_cfg.warmup_count)
    map_text = "n/a" if report.mAP is None else f"{report.mAP:.4f}"
    logger.info(f"mAP@{eval_cfg.iou_threshold}: {map_text}, P {report.precision:.4f}, R {report.recall:.4f}, F1 {report.f1:.4f}")
    return report


def latency_stats(times_ms: Sequence[float]) -> LatencyStats:
    if not times_ms:
        raise ArgumentError("no timings to summarize")
    t = np.asarray(times_ms, dtype=np.float64)
    return LatencyStats(
        mean_ms=float(t.mean()),
        median_ms=float(np.median(t)),
        p95_ms=float(np.percentile(t, 95)),
        min_ms=float(t.min()),
        max_ms=float(t.max()),
        count=len(t),
    )


def bench_latency(net: Network, cfg: DetectorConfig, images: Sequence[Image], warmup_count: int = 5) -> LatencyStats:
    """
    Single-threaded per-image detect time

    warmup_count untimed passes (cycling through images) run first; then
    every image is timed once.

    Raises:
        ArgumentError: No images
    """
    if not images:
        raise ArgumentError("bench_latency needs at least one image")
    for i in range(warmup_count):
        detect(images[i % len(images)], net, cfg)

    times = []
    for img in images:
        start = time.perf_counter()
        detect(img, net, cfg)
        times.append((time.perf_counter() - start) * 1000.0)
    stats = latency_stats(times)
    logger.info(f"Latency over {stats.count} images: mean {stats.mean_ms:.2f} ms, median {stats.median_ms:.2f} ms, p95 {stats.p95_ms:.2f} ms")
    return stats
