"""
Grid detection head: network construction, target encoding, loss, decoding
and the end-to-end detect pipeline

The network emits S*S*(B*5 + C) values, read as an (S, S, B*5 + C) grid in
row-major (row, col) order. Each cell holds B slots of (tx, ty, tw, th, to)
followed by C class logits shared by the cell:

    cx = (col + sigmoid(tx)) / S          cy = (row + sigmoid(ty)) / S
    w  = sigmoid(tw)                      (direct mode)
    w  = anchor_w * exp(tw)               (anchor mode)
    objectness = sigmoid(to)              p_c = sigmoid(class logit c)
"""

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union
import logging
import math

import numpy as np

from heliodet.exceptions import ArgumentError, ConfigError, ShapeError
from heliodet.models.config_models import DetectorConfig
from heliodet.nn.layers import DTYPE, sigmoid
from heliodet.nn.network import Network
from heliodet.services.labels import Annotation
from heliodet.utils.geometry import BBox, Detection, nms, sort_detections
from heliodet.utils.image_io import Image
from heliodet.utils.image_ops import draw_boxes, letterbox

logger = logging.getLogger(__name__)

SLOT_DEPTH = 5
# Logit magnitude used for "certain" values in idealized predictions
LOGIT_SATURATION = 40.0
OFFSET_CLIP = 1e-9


def build_network(cfg: DetectorConfig, seed: int, channels: int = 3) -> Network:
    """
    Construct the detector network with seeded Kaiming-uniform weights

    Args:
        cfg: Detector configuration (its backbone defines the layers)
        seed: Initialization seed
        channels: Input channels

    Returns:
        Network whose output has exactly S*S*(B*5 + C) values

    Raises:
        ConfigError: Backbone does not compose or emits the wrong number of values
    """
    try:
        net = Network(cfg.backbone, (channels, cfg.input_size, cfg.input_size))
    except ShapeError as e:
        raise ConfigError("backbone", str(e))
    if net.output_shape != (cfg.output_length,):
        raise ConfigError(
            "backbone",
            f"expected {cfg.output_length} outputs (S={cfg.grid_size}, B={cfg.boxes_per_cell}, "
            f"C={cfg.num_classes}), backbone produces {net.output_length} {net.output_shape}",
        )
    net.init_params(seed)
    logger.debug(f"Network built: {len(net.layers)} layers, {net.param_count()} parameters")
    return net


def save_detector(net: Network, cfg: DetectorConfig, path: Union[str, Path], effective: Optional[Dict[str, Any]] = None):
    """Weights file with the detector config (and optionally the run config) in its header"""
    metadata = {"detector": cfg.model_dump(mode="json")}
    if effective is not None:
        metadata["effective"] = effective
    net.save(path, metadata)


def load_detector(path: Union[str, Path]) -> Tuple[Network, DetectorConfig]:
    net, metadata = Network.load(path)
    if "detector" not in metadata:
        raise ConfigError("weights_in", f"{path} carries no detector configuration")
    cfg = DetectorConfig.model_validate(metadata["detector"])
    return net, cfg


@dataclass
class TargetTensor:
    """
    Per-cell training targets, shape (S, S, 5 + C)

    Channels: offset_x, offset_y (position inside the cell), w, h (normalized
    to the image), objectness in {0, 1}, then the one-hot class.
    """

    data: np.ndarray

    @property
    def grid_size(self) -> int:
        return self.data.shape[0]

    @property
    def num_classes(self) -> int:
        return self.data.shape[2] - 5

    @property
    def objectness(self) -> np.ndarray:
        return self.data[..., 4]

    def object_cells(self) -> List[Tuple[int, int]]:
        rows, cols = np.nonzero(self.objectness > 0)
        return list(zip(rows.tolist(), cols.tolist()))


def encode_targets(annots: Sequence[Annotation], cfg: DetectorConfig) -> TargetTensor:
    """
    Assign each object to the cell containing its centre

    A second object whose centre lands in an occupied cell is dropped with a
    warning.
    """
    S, C = cfg.grid_size, cfg.num_classes
    data = np.zeros((S, S, 5 + C), dtype=np.float64)
    dropped = 0
    for a in annots:
        if not 0 <= a.class_id < C:
            raise ArgumentError(f"class id {a.class_id} outside [0, {C})")
        col = min(max(int(math.floor(a.bbox.cx * S)), 0), S - 1)
        row = min(max(int(math.floor(a.bbox.cy * S)), 0), S - 1)
        if data[row, col, 4] > 0:
            dropped += 1
            continue
        data[row, col, :5] = (a.bbox.cx * S - col, a.bbox.cy * S - row, a.bbox.w, a.bbox.h, 1.0)
        data[row, col, 5 + a.class_id] = 1.0
    if dropped:
        logger.warning(f"{dropped} object(s) dropped: grid cell already holds an object")
    return TargetTensor(data)


def prediction_grid(pred: np.ndarray, cfg: DetectorConfig) -> np.ndarray:
    """Raw network output -> float64 (S, S, B*5 + C) grid"""
    pred = np.asarray(pred)
    if pred.size != cfg.output_length:
        raise ShapeError("head", f"prediction has {pred.size} values, expected {cfg.output_length}")
    S = cfg.grid_size
    return pred.astype(np.float64).reshape(S, S, cfg.cell_depth)


class DecodedGrid(NamedTuple):
    """Activated predictions; box arrays are (S, S, B), classes (S, S, C)"""

    sx: np.ndarray
    sy: np.ndarray
    w: np.ndarray
    h: np.ndarray
    obj: np.ndarray
    cls: np.ndarray


def _activate(grid: np.ndarray, cfg: DetectorConfig) -> DecodedGrid:
    S, B = cfg.grid_size, cfg.boxes_per_cell
    slots = grid[..., :B * SLOT_DEPTH].reshape(S, S, B, SLOT_DEPTH)
    if cfg.anchor_mode:
        anchors = np.asarray(cfg.anchors, dtype=np.float64)
        w = anchors[:, 0] * np.exp(slots[..., 2])
        h = anchors[:, 1] * np.exp(slots[..., 3])
    else:
        w = sigmoid(slots[..., 2])
        h = sigmoid(slots[..., 3])
    return DecodedGrid(
        sx=sigmoid(slots[..., 0]),
        sy=sigmoid(slots[..., 1]),
        w=w,
        h=h,
        obj=sigmoid(slots[..., 4]),
        cls=sigmoid(grid[..., B * SLOT_DEPTH:]),
    )


def _responsible_slots(dec: DecodedGrid, target: TargetTensor, S: int) -> np.ndarray:
    t = target.data
    cols = np.arange(S, dtype=np.float64)[None, :, None]
    rows = np.arange(S, dtype=np.float64)[:, None, None]

    px, py = (cols + dec.sx) / S, (rows + dec.sy) / S
    gx, gy = (cols + t[..., 0:1]) / S, (rows + t[..., 1:2]) / S
    gw, gh = t[..., 2:3], t[..., 3:4]

    ix = np.minimum(px + dec.w / 2, gx + gw / 2) - np.maximum(px - dec.w / 2, gx - gw / 2)
    iy = np.minimum(py + dec.h / 2, gy + gh / 2) - np.maximum(py - dec.h / 2, gy - gh / 2)
    inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
    union = dec.w * dec.h + gw * gh - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        ious = np.where(union > 0, inter / union, 0.0)
    # argmax takes the lowest slot index on ties
    best = np.argmax(ious, axis=-1).astype(np.int16)
    return np.where(target.objectness > 0, best, np.int16(-1))


def assign_responsible(pred: np.ndarray, target: TargetTensor, cfg: DetectorConfig) -> np.ndarray:
    """(S, S) slot index of the highest-IoU prediction per object cell, -1 elsewhere"""
    _check_target(target, cfg)
    return _responsible_slots(_activate(prediction_grid(pred, cfg), cfg), target, cfg.grid_size)


def _check_target(target: TargetTensor, cfg: DetectorConfig):
    expected = (cfg.grid_size, cfg.grid_size, 5 + cfg.num_classes)
    if target.data.shape != expected:
        raise ShapeError("target", f"target shape {target.data.shape} does not match {expected}")


@dataclass(frozen=True)
class LossBreakdown:
    box: float = 0.0
    objectness: float = 0.0
    no_objectness: float = 0.0
    classification: float = 0.0

    @property
    def total(self) -> float:
        return self.box + self.objectness + self.no_objectness + self.classification

    def __add__(self, other: "LossBreakdown") -> "LossBreakdown":
        return LossBreakdown(
            self.box + other.box,
            self.objectness + other.objectness,
            self.no_objectness + other.no_objectness,
            self.classification + other.classification,
        )

    def scaled(self, factor: float) -> "LossBreakdown":
        return LossBreakdown(
            self.box * factor,
            self.objectness * factor,
            self.no_objectness * factor,
            self.classification * factor,
        )

    def as_dict(self) -> Dict[str, float]:
        return {
            "box": self.box,
            "objectness": self.objectness,
            "no_objectness": self.no_objectness,
            "class": self.classification,
            "total": self.total,
        }

    def non_finite_term(self) -> Optional[str]:
        """Name of the first non-finite term, or None"""
        for name, value in self.as_dict().items():
            if not math.isfinite(value):
                return name
        return None


def yolo_loss_with_grad(
    pred: np.ndarray,
    target: TargetTensor,
    cfg: DetectorConfig,
    lambda_coord: float = 5.0,
    lambda_noobj: float = 0.5
) -> Tuple[LossBreakdown, np.ndarray]:
    """
    Sum-squared detection loss of one image and its gradient

    box           = lambda_coord * sum over responsible slots of
                    (x - x^)^2 + (y - y^)^2 + (sqrt w - sqrt w^)^2 + (sqrt h - sqrt h^)^2
    objectness    = sum over responsible slots of (1 - obj^)^2
    no_objectness = lambda_noobj * sum over all other slots of obj^2
    class         = sum over object cells, classes of (p - p^)^2

    x, y are offsets inside the cell. The responsible slot of an object cell
    is the one whose decoded box has the highest IoU with the ground truth.

    Args:
        pred: Raw network output for one image (S*S*(B*5 + C) values)
        target: Encoded targets
        cfg: Detector configuration

    Returns:
        (loss terms, dLoss/dpred flattened like pred)

    Raises:
        ShapeError: pred or target does not match cfg
    """
    _check_target(target, cfg)
    S, B = cfg.grid_size, cfg.boxes_per_cell
    grid = prediction_grid(pred, cfg)
    dec = _activate(grid, cfg)
    responsible = _responsible_slots(dec, target, S)

    t = target.data
    object_cell = t[..., 4] > 0
    mask = responsible[..., None] == np.arange(B)[None, None, :]

    dx = dec.sx - t[..., 0:1]
    dy = dec.sy - t[..., 1:2]
    sqrt_w, sqrt_h = np.sqrt(dec.w), np.sqrt(dec.h)
    dw = sqrt_w - np.sqrt(t[..., 2:3])
    dh = sqrt_h - np.sqrt(t[..., 3:4])
    cls_diff = t[..., 5:] - dec.cls

    box = lambda_coord * float(np.sum(np.where(mask, dx ** 2 + dy ** 2 + dw ** 2 + dh ** 2, 0.0)))
    objectness = float(np.sum(np.where(mask, (1.0 - dec.obj) ** 2, 0.0)))
    no_objectness = lambda_noobj * float(np.sum(np.where(mask, 0.0, dec.obj ** 2)))
    classification = float(np.sum(np.where(object_cell[..., None], cls_diff ** 2, 0.0)))

    grad_slots = np.zeros((S, S, B, SLOT_DEPTH), dtype=np.float64)
    grad_slots[..., 0] = np.where(mask, 2.0 * lambda_coord * dx * dec.sx * (1.0 - dec.sx), 0.0)
    grad_slots[..., 1] = np.where(mask, 2.0 * lambda_coord * dy * dec.sy * (1.0 - dec.sy), 0.0)
    if cfg.anchor_mode:
        grad_w = lambda_coord * dw * sqrt_w
        grad_h = lambda_coord * dh * sqrt_h
    else:
        grad_w = lambda_coord * dw * sqrt_w * (1.0 - dec.w)
        grad_h = lambda_coord * dh * sqrt_h * (1.0 - dec.h)
    grad_slots[..., 2] = np.where(mask, grad_w, 0.0)
    grad_slots[..., 3] = np.where(mask, grad_h, 0.0)
    obj_slope = dec.obj * (1.0 - dec.obj)
    grad_slots[..., 4] = np.where(
        mask,
        -2.0 * (1.0 - dec.obj) * obj_slope,
        2.0 * lambda_noobj * dec.obj * obj_slope,
    )
    grad_cls = np.where(object_cell[..., None], -2.0 * cls_diff * dec.cls * (1.0 - dec.cls), 0.0)

    grad = np.concatenate([grad_slots.reshape(S, S, B * SLOT_DEPTH), grad_cls], axis=-1)
    loss = LossBreakdown(box, objectness, no_objectness, classification)
    return loss, grad.reshape(np.shape(pred))


def yolo_loss(
    pred: np.ndarray,
    target: TargetTensor,
    cfg: DetectorConfig,
    lambda_coord: float = 5.0,
    lambda_noobj: float = 0.5
) -> LossBreakdown:
    loss, _ = yolo_loss_with_grad(pred, target, cfg, lambda_coord, lambda_noobj)
    return loss


def batch_loss(
    outputs: np.ndarray,
    targets: Sequence[TargetTensor],
    cfg: DetectorConfig,
    lambda_coord: float = 5.0,
    lambda_noobj: float = 0.5
) -> Tuple[LossBreakdown, np.ndarray]:
    """Mean loss over a batch (N, S*S*(B*5 + C)) and its gradient, summed in sample order"""
    if len(outputs) != len(targets):
        raise ShapeError("head", f"{len(outputs)} predictions for {len(targets)} targets")
    total = LossBreakdown()
    grads = np.zeros(outputs.shape, dtype=np.float64)
    for i, (pred, target) in enumerate(zip(outputs, targets)):
        loss, grads[i] = yolo_loss_with_grad(pred, target, cfg, lambda_coord, lambda_noobj)
        total = total + loss
    n = len(outputs)
    return total.scaled(1.0 / n), grads / n


def _logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, OFFSET_CLIP, 1.0 - OFFSET_CLIP)
    return np.log(p) - np.log1p(-p)


def targets_to_logits(target: TargetTensor, cfg: DetectorConfig) -> np.ndarray:
    """
    Idealized raw prediction that decodes exactly to the targets

    Every slot of an object cell carries the ground-truth box; slot 0 is
    certain (objectness logit +40), the others and all empty cells are
    certain negatives.
    """
    _check_target(target, cfg)
    S, B = cfg.grid_size, cfg.boxes_per_cell
    t = target.data
    grid = np.full((S, S, cfg.cell_depth), -LOGIT_SATURATION, dtype=np.float64)
    slots = grid[..., :B * SLOT_DEPTH].reshape(S, S, B, SLOT_DEPTH)

    for row, col in target.object_cells():
        ox, oy, w, h = t[row, col, :4]
        slots[row, col, :, 0] = _logit(ox)
        slots[row, col, :, 1] = _logit(oy)
        if cfg.anchor_mode:
            anchors = np.asarray(cfg.anchors, dtype=np.float64)
            slots[row, col, :, 2] = np.log(w / anchors[:, 0])
            slots[row, col, :, 3] = np.log(h / anchors[:, 1])
        else:
            slots[row, col, :, 2] = _logit(w)
            slots[row, col, :, 3] = _logit(h)
        slots[row, col, 0, 4] = LOGIT_SATURATION
        grid[row, col, B * SLOT_DEPTH:] = np.where(t[row, col, 5:] > 0, LOGIT_SATURATION, -LOGIT_SATURATION)

    grid[..., :B * SLOT_DEPTH] = slots.reshape(S, S, B * SLOT_DEPTH)
    return grid.reshape(-1).astype(DTYPE)


def decode(pred: np.ndarray, cfg: DetectorConfig, score_threshold: Optional[float] = None) -> List[Detection]:
    """
    Turn one raw prediction into detections

    score = objectness * max class probability; a slot is kept when
    score > score_threshold (strict). Boxes are clamped to the unit square.

    Returns:
        Detections sorted by score descending
    """
    threshold = cfg.score_threshold if score_threshold is None else score_threshold
    S = cfg.grid_size
    dec = _activate(prediction_grid(pred, cfg), cfg)

    class_id = np.argmax(dec.cls, axis=-1)
    class_prob = np.max(dec.cls, axis=-1)
    scores = dec.obj * class_prob[..., None]

    detections = []
    for row, col, slot in zip(*np.nonzero(scores > threshold)):
        cx = (col + dec.sx[row, col, slot]) / S
        cy = (row + dec.sy[row, col, slot]) / S
        w, h = dec.w[row, col, slot], dec.h[row, col, slot]
        bbox = BBox.clamped(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
        if bbox is None:
            continue
        detections.append(Detection(
            bbox=bbox,
            objectness=float(dec.obj[row, col, slot]),
            class_id=int(class_id[row, col]),
            score=float(scores[row, col, slot]),
            class_scores=tuple(float(p) for p in dec.cls[row, col]),
        ))
    return sort_detections(detections)


def detect(
    img: Image,
    net: Network,
    cfg: DetectorConfig,
    score_threshold: Optional[float] = None
) -> List[Detection]:
    """
    Full inference pipeline for one image

    letterbox -> scale pixels to [0, 1] -> forward -> decode -> NMS -> map
    boxes back to the source image frame

    Uses the non-caching forward pass, so one network may serve several
    threads at once.

    Raises:
        ArgumentError: Network input does not match cfg.input_size or the image channels
    """
    channels, net_h, net_w = net.input_shape
    if (net_h, net_w) != (cfg.input_size, cfg.input_size):
        raise ArgumentError(
            f"network expects {net_w}x{net_h} input, detector config says {cfg.input_size}"
        )
    if img.channels != channels:
        if channels == 3 and img.channels == 1:
            img = img.to_rgb()
        else:
            raise ArgumentError(f"image has {img.channels} channel(s), network expects {channels}")

    boxed, transform = letterbox(img, cfg.input_size, cfg.input_size, cfg.pad_value)
    raw = net.predict(boxed.to_chw_float()[None])[0]
    kept = nms(decode(raw, cfg, score_threshold), cfg.nms_threshold)

    detections = []
    for det in kept:
        x1, y1, x2, y2 = transform.box_to_src(det.bbox).to_corners()
        bbox = BBox.clamped(x1, y1, x2, y2)
        if bbox is not None:
            detections.append(replace(det, bbox=bbox))
    return sort_detections(detections)


def draw_detections(img: Image, detections: Sequence[Detection], color: Tuple[int, int, int] = (255, 0, 0)) -> Image:
    """Overlay of detection boxes labelled "class:score" on an RGB copy of img"""
    return draw_boxes(
        img,
        [d.bbox for d in detections],
        color=color,
        width=1 if max(img.size) < 200 else 2,
        labels=[f"{d.class_id}:{d.score:.2f}" for d in detections],
    )
