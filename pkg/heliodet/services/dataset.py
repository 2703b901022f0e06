"""
Dataset layout, deterministic train/test split, preprocessing and
offline expansion of the training split

Layout under the dataset root:
    images/<stem>.ppm
    labels/<stem>.txt
    manifest.json   {"classes": [...], "entries": [{image, label, split, orient}], "provenance": {...}}
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union
import json
import logging
import math

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from heliodet.exceptions import ArgumentError, DatasetIOError
from heliodet.services.augment import LabeledImage, apply_stack, random_op_stack, DEFAULT_POOL
from heliodet.services.labels import Annotation, read_labels, save_labels
from heliodet.utils.file_handler import MANIFEST_NAME, image_path, label_path, read_text, require_files, save_file
from heliodet.utils.geometry import BBox, rotate_bbox_cw
from heliodet.utils.image_io import Image, read_image, write_image
from heliodet.utils.image_ops import DEFAULT_PAD_VALUE, LetterboxTransform, letterbox, rotate90
from heliodet.utils.rng import derive_rng
from heliodet.utils.workers import ordered_map

logger = logging.getLogger(__name__)


class DatasetEntry(BaseModel):
    """One image/label pair; paths are relative to the dataset root"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    image: str
    label: str
    split: Literal["train", "test"] = "train"
    # Clockwise rotation that brings the stored image upright
    orient: Literal[0, 90, 180, 270] = 0

    @property
    def stem(self) -> str:
        return Path(self.image).stem


class DatasetManifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    root: str = Field(default=".", exclude=True)
    classes: List[str] = Field(default_factory=lambda: ["solar_cell"])
    entries: List[DatasetEntry] = Field(default_factory=list)
    provenance: Dict[str, Any] = Field(default_factory=dict)

    def split(self, tag: str) -> List[DatasetEntry]:
        return [e for e in self.entries if e.split == tag]

    def path(self, relative: str) -> Path:
        return Path(self.root) / relative

    def counts(self) -> Dict[str, int]:
        return {"train": len(self.split("train")), "test": len(self.split("test"))}

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def save_manifest(manifest: DatasetManifest) -> str:
    path = save_file(Path(manifest.root) / MANIFEST_NAME, manifest.to_json())
    counts = manifest.counts()
    logger.info(f"Manifest written: {path} ({counts['train']} train / {counts['test']} test)")
    return path


def load_manifest(root: Union[str, Path], check_files: bool = True) -> DatasetManifest:
    """
    Read root/manifest.json

    Raises:
        DatasetIOError: Manifest or any listed image/label file is missing
        ArgumentError: Manifest content is invalid
    """
    root = Path(root)
    text = read_text(root / MANIFEST_NAME)
    try:
        manifest = DatasetManifest.model_validate({**json.loads(text), "root": str(root)})
    except (json.JSONDecodeError, ValidationError) as e:
        raise ArgumentError(f"invalid manifest {root / MANIFEST_NAME}: {e}")
    if check_files:
        require_files(
            [manifest.path(e.image) for e in manifest.entries]
            + [manifest.path(e.label) for e in manifest.entries]
        )
    return manifest


def split_dataset(
    entries: Sequence[DatasetEntry],
    train_fraction: float,
    seed: int,
    root: Union[str, Path] = ".",
    classes: Optional[List[str]] = None
) -> DatasetManifest:
    """
    Seeded shuffle, then the first floor(train_fraction * N) entries go to train

    Entries keep their original order in the manifest; only their split tags
    change. Each split keeps at least one entry.

    Raises:
        ArgumentError: Fewer than two entries or fraction outside (0, 1)
    """
    n = len(entries)
    if n < 2:
        raise ArgumentError(f"cannot split {n} entr{'y' if n == 1 else 'ies'}; need at least 2")
    if not 0.0 < train_fraction < 1.0:
        raise ArgumentError(f"train_fraction must be in (0, 1), got {train_fraction}")

    n_train = min(max(int(math.floor(train_fraction * n + 1e-9)), 1), n - 1)
    order = derive_rng(seed, "split").permutation(n)
    train_indices = set(order[:n_train].tolist())

    tagged = [
        e.model_copy(update={"split": "train" if i in train_indices else "test"})
        for i, e in enumerate(entries)
    ]
    manifest = DatasetManifest(root=str(root), entries=tagged)
    if classes is not None:
        manifest.classes = list(classes)
    logger.info(f"Split {n} entries: {n_train} train / {n - n_train} test (seed {seed})")
    return manifest


def orient_upright(img: Image, annots: Sequence[Annotation], orient: int) -> Tuple[Image, List[Annotation]]:
    """Rotate image and boxes clockwise by orient degrees"""
    if orient % 90:
        raise ArgumentError(f"orient must be a multiple of 90, got {orient}")
    q = (orient // 90) % 4
    if q == 0:
        return img, list(annots)
    return rotate90(img, q), [Annotation(a.class_id, rotate_bbox_cw(a.bbox, q)) for a in annots]


def preprocess(
    img: Image,
    annots: Sequence[Annotation],
    orient: int,
    target_size: int,
    pad_value: int = DEFAULT_PAD_VALUE
) -> Tuple[Image, List[Annotation], LetterboxTransform]:
    """
    Auto-orient, then letterbox to target_size x target_size

    Returns:
        (network-frame image, boxes normalized to it, transform back to the
        upright source frame)
    """
    upright, upright_annots = orient_upright(img, annots, orient)
    boxed, transform = letterbox(upright, target_size, target_size, pad_value)
    mapped = []
    for a in upright_annots:
        x1, y1, x2, y2 = transform.box_to_dst(a.bbox).to_corners()
        bbox = BBox.clamped(x1, y1, x2, y2)
        if bbox is not None:
            mapped.append(Annotation(a.class_id, bbox))
    return boxed, mapped, transform


@dataclass
class Sample:
    """An upright image with annotations in its own frame"""

    entry: DatasetEntry
    image: Image
    annotations: List[Annotation]


def load_sample(manifest: DatasetManifest, entry: DatasetEntry) -> Sample:
    img = read_image(manifest.path(entry.image))
    annots = read_labels(manifest.path(entry.label), len(manifest.classes))
    img, annots = orient_upright(img, annots, entry.orient)
    return Sample(entry, img, annots)


def load_split(manifest: DatasetManifest, split: str) -> List[Sample]:
    """
    Load every entry of one split, in manifest order

    Raises:
        DatasetIOError: Lists every missing file of the split
    """
    entries = manifest.split(split)
    require_files([manifest.path(e.image) for e in entries] + [manifest.path(e.label) for e in entries])
    return ordered_map(lambda e: load_sample(manifest, e), entries)


def expand_training_set(
    manifest: DatasetManifest,
    ops_per_image: int,
    seed: int,
    max_ops: int = 3,
    pad_value: int = DEFAULT_PAD_VALUE
) -> DatasetManifest:
    """
    Add ops_per_image augmented copies of every train entry

    Copy k of train entry i uses the op stack drawn from (seed, i, k); mosaic
    partners are drawn from the same stream. Copies are written upright
    (orient 0) next to the originals as <stem>_aug<k>. Originals and the test
    split are untouched.

    Returns:
        New manifest: original entries in order, then the copies
    """
    if ops_per_image < 0:
        raise ArgumentError(f"ops_per_image must be >= 0, got {ops_per_image}")
    if ops_per_image == 0:
        return manifest.model_copy(deep=True)

    train = manifest.split("train")
    pool = DEFAULT_POOL + (("mosaic",) if len(train) >= 4 else ())
    samples = load_split(manifest, "train")

    def expand_one(index: int) -> List[DatasetEntry]:
        sample = samples[index]
        created = []
        for k in range(ops_per_image):
            rng = derive_rng(seed, "expand", index, k)
            ops = random_op_stack(rng, max_ops, pool, pad_value)
            partners: Optional[List[LabeledImage]] = None
            if any(op.kind == "mosaic" for op in ops):
                others = [j for j in range(len(samples)) if j != index]
                picks = rng.choice(len(others), size=3, replace=False)
                partners = [(samples[others[int(p)]].image, samples[others[int(p)]].annotations) for p in picks]
            img, annots = apply_stack(sample.image, sample.annotations, ops, partners)

            stem = f"{sample.entry.stem}_aug{k}"
            write_image(manifest.path(image_path(stem)), img)
            save_labels(manifest.path(label_path(stem)), annots)
            created.append(DatasetEntry(image=image_path(stem), label=label_path(stem), split="train"))
        return created

    copies = ordered_map(expand_one, range(len(samples)))
    expanded = manifest.model_copy(deep=True)
    expanded.entries = list(manifest.entries) + [e for group in copies for e in group]
    expanded.provenance = {**manifest.provenance, "expand": {"ops_per_image": ops_per_image, "seed": seed, "max_ops": max_ops}}
    logger.info(f"Training split expanded: {len(train)} -> {len(train) * (1 + ops_per_image)} images")
    return expanded
