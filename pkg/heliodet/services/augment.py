"""
Bounding-box-aware augmentation

Pixel-only ops (grayscale, hue, saturation, brightness, exposure, blur,
noise, cutout) never touch the annotations. Geometric ops (hflip,
rotation90, shear, crop, scale, mosaic) move every box by mapping its four
corners and taking the axis-aligned hull; the hull is clipped to the image
and dropped when less than MIN_VISIBILITY of it remains visible.

Coordinates follow the pixel-edge convention: pixel i covers [i, i + 1).
"""

from typing import List, Optional, Sequence, Tuple
import logging
import math

import numpy as np

from heliodet.exceptions import ArgumentError
from heliodet.models.config_models import AUGMENT_RANGES, AugmentOp
from heliodet.services.labels import Annotation
from heliodet.utils import image_ops
from heliodet.utils.geometry import BBox, rotate_bbox_cw, xywhn_to_xyxy
from heliodet.utils.image_io import Image
from heliodet.utils.rng import derive_rng

logger = logging.getLogger(__name__)

MIN_VISIBILITY = 0.25
MOSAIC_JITTER = (0.25, 0.75)

LabeledImage = Tuple[Image, List[Annotation]]

# Ops drawn by random_op_stack when no explicit pool is given
DEFAULT_POOL = (
    "crop", "shear", "grayscale", "hue", "saturation", "brightness",
    "exposure", "blur", "noise", "cutout", "hflip", "scale",
)


def transform_annotations(
    annots: Sequence[Annotation],
    matrix: np.ndarray,
    src_size: Tuple[int, int],
    dst_size: Tuple[int, int],
    min_visibility: float = MIN_VISIBILITY
) -> List[Annotation]:
    """
    Map boxes through an affine transform given in pixel coordinates

    Args:
        annots: Boxes normalized to the source image
        matrix: 2x3 (or 3x3) source pixel -> destination pixel transform
        src_size: Source (width, height)
        dst_size: Destination (width, height)
        min_visibility: Minimum visible fraction of the transformed hull

    Returns:
        Surviving boxes, clipped and normalized to the destination image
    """
    src_w, src_h = src_size
    dst_w, dst_h = dst_size
    m = np.asarray(matrix, dtype=np.float64)[:2]
    out = []
    for a in annots:
        x1, y1, x2, y2 = xywhn_to_xyxy(a.bbox, src_w, src_h)
        corners = np.array([[x1, y1, 1.0], [x2, y1, 1.0], [x1, y2, 1.0], [x2, y2, 1.0]]) @ m.T
        hx1, hy1 = corners.min(axis=0)
        hx2, hy2 = corners.max(axis=0)
        full = (hx2 - hx1) * (hy2 - hy1)

        vx1, vx2 = min(max(hx1, 0.0), dst_w), min(max(hx2, 0.0), dst_w)
        vy1, vy2 = min(max(hy1, 0.0), dst_h), min(max(hy2, 0.0), dst_h)
        visible = max(vx2 - vx1, 0.0) * max(vy2 - vy1, 0.0)
        if full <= 0 or visible < min_visibility * full:
            continue
        bbox = BBox.clamped(vx1 / dst_w, vy1 / dst_h, vx2 / dst_w, vy2 / dst_h)
        if bbox is not None:
            out.append(Annotation(a.class_id, bbox))
    if len(out) < len(annots):
        logger.debug(f"{len(annots) - len(out)} box(es) dropped below {min_visibility:.0%} visibility")
    return out


def _shear_matrix(degrees: float, axis: str, w: int, h: int) -> np.ndarray:
    t = math.tan(math.radians(degrees))
    if axis == "x":
        # x' = x + t * (y - h/2)
        return np.array([[1.0, t, -t * h / 2], [0.0, 1.0, 0.0]])
    return np.array([[1.0, 0.0, 0.0], [t, 1.0, -t * w / 2]])


def _zoom_matrix(factor: float, w: int, h: int) -> np.ndarray:
    """Scale by factor about the image centre"""
    return np.array([[factor, 0.0, w / 2 * (1 - factor)], [0.0, factor, h / 2 * (1 - factor)]])


def _crop_matrix(op: AugmentOp, w: int, h: int) -> np.ndarray:
    """Window of relative side 1 - m at a seeded position, stretched back to w x h"""
    keep = 1.0 - op.magnitude
    rng = derive_rng(op.seed, "crop")
    x0 = rng.uniform(0.0, op.magnitude) * w
    y0 = rng.uniform(0.0, op.magnitude) * h
    return np.array([[1.0 / keep, 0.0, -x0 / keep], [0.0, 1.0 / keep, -y0 / keep]])


def _warp(img: Image, annots: Sequence[Annotation], matrix: np.ndarray, pad_value: int) -> LabeledImage:
    out = image_ops.warp_affine(img, matrix, img.width, img.height, fill=pad_value)
    return out, transform_annotations(annots, matrix, img.size, img.size)


def _cutout(img: Image, op: AugmentOp) -> Image:
    rng = derive_rng(op.seed, "cutout")
    rw = max(1, int(round(op.magnitude * img.width)))
    rh = max(1, int(round(op.magnitude * img.height)))
    for _ in range(op.count):
        x0 = int(rng.integers(0, img.width - rw + 1))
        y0 = int(rng.integers(0, img.height - rh + 1))
        img = image_ops.fill_rect(img, x0, y0, x0 + rw, y0 + rh, op.pad_value)
    return img


def mosaic(
    primary: LabeledImage,
    partners: Sequence[LabeledImage],
    seed: int,
    pad_value: int = image_ops.DEFAULT_PAD_VALUE
) -> LabeledImage:
    """
    Composite four images into one canvas the size of the primary image

    Each image is scaled to half the canvas and placed with one corner on a
    seeded centre point jittered within the middle half of the canvas: the
    primary top-left of the centre, partners top-right, bottom-left and
    bottom-right.
    """
    if len(partners) != 3:
        raise ArgumentError(f"mosaic needs 3 partner images, got {len(partners)}")
    img, _ = primary
    w, h = img.size
    qw, qh = max(1, w // 2), max(1, h // 2)
    rng = derive_rng(seed, "mosaic")
    cx = int(round(rng.uniform(*MOSAIC_JITTER) * w))
    cy = int(round(rng.uniform(*MOSAIC_JITTER) * h))
    origins = [(cx - qw, cy - qh), (cx, cy - qh), (cx - qw, cy), (cx, cy)]

    canvas = np.full((h, w, img.channels), pad_value, dtype=np.uint8)
    annots: List[Annotation] = []
    for (tile, tile_annots), (ox, oy) in zip([primary, *partners], origins):
        if tile.channels != img.channels:
            tile = tile.to_rgb() if img.channels == 3 else image_ops.to_grayscale(tile)
        scaled = image_ops.resize_bilinear(tile, qw, qh)
        x0, y0 = max(ox, 0), max(oy, 0)
        x1, y1 = min(ox + qw, w), min(oy + qh, h)
        if x1 > x0 and y1 > y0:
            canvas[y0:y1, x0:x1] = scaled.data[y0 - oy:y1 - oy, x0 - ox:x1 - ox]
        matrix = np.array([[qw / tile.width, 0.0, ox], [0.0, qh / tile.height, oy]])
        annots += transform_annotations(tile_annots, matrix, tile.size, (w, h))
    return Image(canvas), annots


def augment(
    img: Image,
    annots: Sequence[Annotation],
    op: AugmentOp,
    partners: Optional[Sequence[LabeledImage]] = None
) -> LabeledImage:
    """
    Apply one augmentation op

    Args:
        img: Source image
        annots: Its annotations
        op: Op kind, magnitude and seed
        partners: Three extra labelled images (mosaic only)

    Returns:
        (augmented image, transformed annotations); an empty list is a
        valid negative sample
    """
    annots = list(annots)
    if op.is_geometric:
        return _geometric(img, annots, op, partners)
    return _pixel(img, op), annots


def _geometric(
    img: Image, annots: List[Annotation], op: AugmentOp, partners: Optional[Sequence[LabeledImage]]
) -> LabeledImage:
    kind, m = op.kind, op.magnitude
    w, h = img.size
    if kind == "hflip":
        return image_ops.hflip(img), [Annotation(a.class_id, BBox(1.0 - a.bbox.cx, a.bbox.cy, a.bbox.w, a.bbox.h)) for a in annots]
    if kind == "rotation90":
        q = int(m)
        return image_ops.rotate90(img, q), [Annotation(a.class_id, rotate_bbox_cw(a.bbox, q)) for a in annots]
    if kind == "shear":
        return _warp(img, annots, _shear_matrix(m, op.axis, w, h), op.pad_value)
    if kind == "crop":
        if m == 0:
            return img, annots
        return _warp(img, annots, _crop_matrix(op, w, h), op.pad_value)
    if kind == "scale":
        return _warp(img, annots, _zoom_matrix(1.0 + m, w, h), op.pad_value)
    if kind == "mosaic":
        if partners is None:
            raise ArgumentError("mosaic needs partner images")
        return mosaic((img, annots), partners, op.seed, op.pad_value)
    raise ArgumentError(f"unknown geometric augmentation {kind}")


def _pixel(img: Image, op: AugmentOp) -> Image:
    """Pixel-level ops leave every box where it is"""
    kind, m = op.kind, op.magnitude
    if kind == "grayscale":
        out = image_ops.to_grayscale(img)
    elif kind == "hue":
        out = image_ops.adjust_hue(img, m)
    elif kind == "saturation":
        out = image_ops.adjust_saturation(img, 1.0 + m)
    elif kind == "brightness":
        out = image_ops.adjust_brightness(img, m)
    elif kind == "exposure":
        out = image_ops.adjust_exposure(img, 2.0 ** -m)
    elif kind == "blur":
        out = image_ops.gaussian_blur(img, m)
    elif kind == "noise":
        out = image_ops.add_noise(img, m, derive_rng(op.seed, "noise"))
    elif kind == "cutout":
        out = _cutout(img, op)
    else:
        raise ArgumentError(f"unknown augmentation {kind}")
    return out


def random_op(kind: str, rng: np.random.Generator, pad_value: int = image_ops.DEFAULT_PAD_VALUE) -> AugmentOp:
    """An op of the given kind with a magnitude drawn uniformly from its range"""
    lo, hi = AUGMENT_RANGES[kind]
    if kind == "rotation90":
        magnitude = float(rng.integers(int(lo), int(hi) + 1))
    else:
        magnitude = float(rng.uniform(lo, hi))
    return AugmentOp(
        kind=kind,
        magnitude=magnitude,
        seed=int(rng.integers(0, 2 ** 31)),
        axis="x" if rng.random() < 0.5 else "y",
        count=int(rng.integers(1, 3)),
        pad_value=pad_value,
    )


def random_op_stack(
    rng: np.random.Generator,
    max_ops: int = 3,
    pool: Sequence[str] = DEFAULT_POOL,
    pad_value: int = image_ops.DEFAULT_PAD_VALUE
) -> List[AugmentOp]:
    """Between 1 and max_ops distinct ops from pool, in random order"""
    count = int(rng.integers(1, min(max_ops, len(pool)) + 1))
    kinds = rng.choice(len(pool), size=count, replace=False)
    return [random_op(pool[int(i)], rng, pad_value) for i in kinds]


def apply_stack(
    img: Image,
    annots: Sequence[Annotation],
    ops: Sequence[AugmentOp],
    partners: Optional[Sequence[LabeledImage]] = None
) -> LabeledImage:
    annots = list(annots)
    for op in ops:
        img, annots = augment(img, annots, op, partners if op.kind == "mosaic" else None)
    return img, annots
