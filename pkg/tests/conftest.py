"""
Shared fixtures: a tiny detector configuration and a small synthetic dataset
"""

import numpy as np
import pytest

from heliodet.models.config_models import DetectorConfig, SynthParams
from heliodet.services.labels import Annotation
from heliodet.services.synthgen import generate_dataset
from heliodet.utils.geometry import BBox, Detection


@pytest.fixture
def tiny_cfg() -> DetectorConfig:
    """16-pixel input, 2x2 grid, 2 boxes per cell, 1 class"""
    return DetectorConfig(grid_size=2, boxes_per_cell=2, num_classes=1, input_size=16, hidden_features=32)


@pytest.fixture
def small_synth() -> SynthParams:
    return SynthParams(
        image_size=32,
        n_cells=(1, 2),
        n_distractors=(0, 1),
        cell_size=(0.25, 0.4),
        seed=3,
    )


@pytest.fixture
def synth_dataset(tmp_path, small_synth):
    """10 scenes written to disk, split 8/2"""
    return generate_dataset(small_synth, 10, tmp_path / "dataset")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def make_annotation(cx: float, cy: float, w: float, h: float, class_id: int = 0) -> Annotation:
    return Annotation(class_id, BBox(cx, cy, w, h))


def make_detection(cx: float, cy: float, w: float, h: float, score: float, class_id: int = 0) -> Detection:
    return Detection(bbox=BBox(cx, cy, w, h), objectness=score, class_id=class_id, score=score)
