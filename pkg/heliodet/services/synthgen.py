"""
Synthetic solar-cell scenes with exact ground truth

A scene is a background, a few look-alike distractors (dark uniform
rectangles) and the solar cells themselves (dark fill crossed by light grid
wires). Per-scene conditions: specular reflections, occluders, shadows,
low light, blur and overlapping cells. Occluded cells keep their full-extent
annotation.

Scene i draws all of its randomness from derive_rng(seed, "scene", i), so any
subset of scenes can be rendered in any order, on any thread.
"""

from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union
import logging

import numpy as np
from PIL import Image as PILImage, ImageDraw

from heliodet.exceptions import ArgumentError
from heliodet.models.config_models import SynthParams
from heliodet.services.dataset import DatasetEntry, DatasetManifest, save_manifest, split_dataset
from heliodet.services.labels import Annotation, save_labels
from heliodet.utils.file_handler import image_path, label_path
from heliodet.utils.geometry import rotate_bbox_cw, xyxy_to_xywhn
from heliodet.utils.image_io import Image, write_image
from heliodet.utils.image_ops import gaussian_blur, rotate90, to_uint8
from heliodet.utils.rng import derive_rng
from heliodet.utils.workers import ordered_map

logger = logging.getLogger(__name__)

MIN_CELL_PIXELS = 4
SHRINK_FACTOR = 0.85
CLASSES = ["solar_cell"]

Rect = Tuple[int, int, int, int]  # x0, y0, x1, y1 (exclusive)


def _background(rng: np.random.Generator, kind: str, size: int) -> np.ndarray:
    if kind == "mixed":
        kind = ("flat", "gradient", "speckle")[int(rng.integers(0, 3))]
    base = rng.uniform(90, 210, size=3)
    if kind == "flat":
        return np.broadcast_to(base, (size, size, 3)).copy()
    if kind == "gradient":
        other = rng.uniform(90, 210, size=3)
        angle = rng.uniform(0, 2 * np.pi)
        ys, xs = np.mgrid[0:size, 0:size] / max(size - 1, 1)
        t = (np.cos(angle) * xs + np.sin(angle) * ys)
        t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
        return base * (1 - t[..., None]) + other * t[..., None]
    return base + rng.normal(0.0, 18.0, size=(size, size, 3))


def _place(rng: np.random.Generator, pw: int, ph: int, size: int, blocked: List[Rect]) -> Optional[Rect]:
    """Uniform pick among every top-left corner whose pw x ph window avoids blocked; None when there is none"""
    occupied = np.zeros((size, size), dtype=np.int64)
    for x0, y0, x1, y1 in blocked:
        occupied[y0:y1, x0:x1] = 1
    integral = np.zeros((size + 1, size + 1), dtype=np.int64)
    integral[1:, 1:] = occupied.cumsum(axis=0).cumsum(axis=1)
    # covered[y, x]: occupied pixels inside the window with top-left (x, y)
    covered = integral[ph:, pw:] - integral[:-ph, pw:] - integral[ph:, :-pw] + integral[:-ph, :-pw]
    ys, xs = np.nonzero(covered == 0)
    if len(xs) == 0:
        return None
    k = int(rng.integers(0, len(xs)))
    x0, y0 = int(xs[k]), int(ys[k])
    return (x0, y0, x0 + pw, y0 + ph)


def _place_cell(rng: np.random.Generator, pw: int, ph: int, size: int, blocked: List[Rect], scene_index: int) -> Rect:
    """Place a cell, shrinking it until a free spot exists"""
    while True:
        rect = _place(rng, pw, ph, size, blocked)
        if rect is not None:
            return rect
        if pw <= MIN_CELL_PIXELS and ph <= MIN_CELL_PIXELS:
            raise ArgumentError(
                f"scene {scene_index}: no room for another cell even at {MIN_CELL_PIXELS} px; "
                f"lower n_cells or raise image_size"
            )
        pw = max(MIN_CELL_PIXELS, int(pw * SHRINK_FACTOR))
        ph = max(MIN_CELL_PIXELS, int(ph * SHRINK_FACTOR))
        logger.debug(f"scene {scene_index}: shrinking cell to {pw}x{ph} to fit")


def _cell_pixels(rng: np.random.Generator, params: SynthParams) -> Tuple[int, int]:
    size = params.image_size
    side = rng.uniform(*params.cell_size)
    aspect = rng.uniform(0.7, 1.4)
    pw = int(round(side * size))
    ph = int(round(min(side * aspect, 1.0) * size))
    return max(pw, MIN_CELL_PIXELS), max(ph, MIN_CELL_PIXELS)


def _draw_cell(draw: ImageDraw.ImageDraw, rng: np.random.Generator, rect: Rect):
    x0, y0, x1, y1 = rect
    fill = tuple(int(v) for v in rng.uniform((20, 25, 55), (60, 70, 115)))
    wire = tuple(int(v) for v in rng.uniform(170, 235, size=3))
    draw.rectangle([x0, y0, x1 - 1, y1 - 1], fill=fill)

    pitch = int(rng.integers(4, 8))
    for x in range(x0 + pitch, x1 - 1, pitch):
        draw.line([(x, y0), (x, y1 - 1)], fill=wire, width=1)
    for y in range(y0 + pitch, y1 - 1, pitch):
        draw.line([(x0, y), (x1 - 1, y)], fill=wire, width=1)


def _reflection(data: np.ndarray, rng: np.random.Generator, rect: Rect):
    """Bright diagonal band across the cell"""
    x0, y0, x1, y1 = rect
    ys, xs = np.mgrid[y0:y1, x0:x1]
    slope = rng.uniform(-1.5, 1.5)
    offset = rng.uniform(0, x1 - x0)
    width = rng.uniform(2, max(3, (x1 - x0) / 3))
    band = np.abs((xs - x0) - slope * (ys - y0) - offset) < width / 2
    patch = data[y0:y1, x0:x1]
    patch[band] = patch[band] * 0.35 + 255 * 0.65


def _occluder(data: np.ndarray, rng: np.random.Generator, rect: Rect):
    """Opaque blob over one side of the cell, up to ~40% of its area"""
    x0, y0, x1, y1 = rect
    cw, ch = x1 - x0, y1 - y0
    ow = max(1, int(cw * rng.uniform(0.3, 0.65)))
    oh = max(1, int(ch * rng.uniform(0.3, 0.65)))
    ox = x0 - ow // 3 if rng.random() < 0.5 else x1 - 2 * ow // 3
    oy = int(rng.integers(y0 - oh // 3, y1 - 2 * oh // 3 + 1))
    size = data.shape[0]
    ox0, oy0 = max(ox, 0), max(oy, 0)
    ox1, oy1 = min(ox + ow, size), min(oy + oh, size)
    if ox1 > ox0 and oy1 > oy0:
        data[oy0:oy1, ox0:ox1] = rng.uniform(60, 230, size=3)


def _shadow(data: np.ndarray, rng: np.random.Generator):
    """Darken a random half-plane of the scene"""
    size = data.shape[0]
    ys, xs = np.mgrid[0:size, 0:size]
    angle = rng.uniform(0, 2 * np.pi)
    cut = rng.uniform(0.3, 0.7) * size
    side = np.cos(angle) * (xs - size / 2) + np.sin(angle) * (ys - size / 2) + size / 2 > cut
    data[side] *= rng.uniform(0.45, 0.7)


def generate_scene(params: SynthParams, scene_index: int) -> Tuple[Image, List[Annotation]]:
    """
    Render one scene

    Args:
        params: Generator parameters
        scene_index: Scene number (selects the random stream)

    Returns:
        (RGB image of side params.image_size, one class-0 annotation per cell,
        the tight box of its rendered pixels)

    Raises:
        ArgumentError: Cell size range implies cells smaller than 4 pixels
            or larger than the image, or n_cells do not fit even at the minimum cell size
    """
    size = params.image_size
    lo, hi = params.cell_size
    if lo * size < MIN_CELL_PIXELS - 0.5:
        raise ArgumentError(f"cell_size {lo} gives cells under {MIN_CELL_PIXELS} px at image_size {size}")
    if hi * size > size:
        raise ArgumentError(f"cell_size {hi} gives cells larger than the {size} px image")

    rng = derive_rng(params.seed, "scene", scene_index)
    data = _background(rng, params.background, size)
    allow_overlap = rng.random() < params.overlap_prob

    pil = PILImage.fromarray(to_uint8(data))
    draw = ImageDraw.Draw(pil)

    n_distractors = int(rng.integers(params.n_distractors[0], params.n_distractors[1] + 1))
    n_cells = int(rng.integers(params.n_cells[0], params.n_cells[1] + 1))

    # Cells first; distractors only take the space left over
    cells: List[Rect] = []
    for _ in range(n_cells):
        pw, ph = _cell_pixels(rng, params)
        cells.append(_place_cell(rng, pw, ph, size, [] if allow_overlap else cells, scene_index))

    distractors: List[Rect] = []
    for _ in range(n_distractors):
        pw, ph = _cell_pixels(rng, params)
        rect = _place(rng, pw, ph, size, cells + distractors)
        if rect is None:
            logger.debug(f"scene {scene_index}: no free spot for a {pw}x{ph} distractor")
            continue
        distractors.append(rect)

    for rect in distractors:
        shade = rng.uniform(15, 55)
        tint = tuple(int(v) for v in np.clip(shade + rng.uniform(-8, 8, size=3), 0, 255))
        draw.rectangle([rect[0], rect[1], rect[2] - 1, rect[3] - 1], fill=tint)
    for rect in cells:
        _draw_cell(draw, rng, rect)

    data = np.asarray(pil, dtype=np.float64).copy()
    for rect in cells:
        if rng.random() < params.reflection_prob:
            _reflection(data, rng, rect)
    if cells and rng.random() < params.occlusion_prob:
        _occluder(data, rng, cells[int(rng.integers(0, len(cells)))])
    if rng.random() < params.shadow_prob:
        _shadow(data, rng)
    data *= rng.uniform(*params.lighting)

    img = Image(to_uint8(data))
    if rng.random() < params.blur_prob:
        img = gaussian_blur(img, rng.uniform(0.6, 1.5))

    annots = [
        Annotation(0, xyxy_to_xywhn(x0, y0, x1, y1, size, size))
        for x0, y0, x1, y1 in cells
    ]
    return img, annots


def _stored_scene(params: SynthParams, index: int) -> Tuple[Image, List[Annotation], int]:
    """Scene as written to disk: possibly stored rotated, with the orient tag that undoes it"""
    img, annots = generate_scene(params, index)
    if derive_rng(params.seed, "orient", index).random() >= params.orient_prob:
        return img, annots, 0
    q = int(derive_rng(params.seed, "orient-turns", index).integers(1, 4))
    stored = rotate90(img, 4 - q)
    return stored, [Annotation(a.class_id, rotate_bbox_cw(a.bbox, 4 - q)) for a in annots], 90 * q


def generate_dataset(
    params: SynthParams,
    n_images: int,
    out_root: Union[str, Path],
    train_fraction: float = 0.8,
    effective: Optional[Dict[str, Any]] = None
) -> DatasetManifest:
    """
    Render n_images scenes into the dataset layout and split them

    Returns:
        The written manifest

    Raises:
        ArgumentError: n_images < 2
        DatasetIOError: Output location not writable
    """
    if n_images < 2:
        raise ArgumentError(f"n_images must be at least 2, got {n_images}")
    root = Path(out_root)

    def render(index: int) -> DatasetEntry:
        img, annots, orient = _stored_scene(params, index)
        stem = f"scene_{index:05d}"
        write_image(root / image_path(stem), img)
        save_labels(root / label_path(stem), annots)
        return DatasetEntry(image=image_path(stem), label=label_path(stem), orient=orient)

    logger.info(f"Generating {n_images} scenes into {root} (seed {params.seed})")
    entries = ordered_map(render, range(n_images))

    manifest = split_dataset(entries, train_fraction, params.seed, root, CLASSES)
    manifest.provenance = {
        "generator": params.model_dump(mode="json"),
        "n_images": n_images,
        "train_fraction": train_fraction,
    }
    if effective is not None:
        manifest.provenance["effective"] = effective
    save_manifest(manifest)
    return manifest
