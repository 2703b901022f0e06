"""
Tests for bounding-box-aware augmentation

The rasterization checks draw one white rectangle on black, apply a
geometric op, and compare the transformed annotation with the tight box of
the warped white pixels.
"""

import numpy as np
import pytest
from pydantic import ValidationError

from heliodet.models.config_models import AUGMENT_RANGES, PIXEL_KINDS, AugmentOp
from heliodet.services.augment import (
    apply_stack, augment, mosaic, random_op, random_op_stack, transform_annotations,
)
from heliodet.services.labels import Annotation
from heliodet.utils.geometry import BBox, xywhn_to_xyxy
from heliodet.utils.image_io import Image

from conftest import make_annotation

SIZE = 128
PIXEL_TOLERANCE = 1.5


def _object_scene(rng, size=SIZE):
    """Black image with one white rectangle kept away from the borders"""
    data = np.zeros((size, size, 3), dtype=np.uint8)
    w, h = (int(v) for v in rng.integers(max(3, size // 9), size // 3, size=2))
    x0 = int(rng.integers(size // 4, 3 * size // 4 - w + 1))
    y0 = int(rng.integers(size // 4, 3 * size // 4 - h + 1))
    data[y0:y0 + h, x0:x0 + w] = 255
    annot = make_annotation((x0 + w / 2) / size, (y0 + h / 2) / size, w / size, h / size)
    return Image(data), [annot]


def _mask_box(img: Image):
    ys, xs = np.nonzero(img.data.max(axis=2) > 127)
    if len(xs) == 0:
        return None
    return xs.min(), ys.min(), xs.max() + 1, ys.max() + 1


def _assert_box_matches_pixels(img, annots):
    if not annots:
        return
    assert len(annots) == 1
    expected = _mask_box(img)
    assert expected is not None
    got = xywhn_to_xyxy(annots[0].bbox, img.width, img.height)
    np.testing.assert_allclose(got, expected, atol=PIXEL_TOLERANCE)


def _op(kind, magnitude=0.0, seed=0, **kwargs):
    return AugmentOp(kind=kind, magnitude=magnitude, seed=seed, pad_value=0, **kwargs)


class TestAnnotationRules:

    def test_hflip(self):
        img, annots = augment(Image.blank(10, 10), [make_annotation(0.2, 0.3, 0.1, 0.2)], _op("hflip"))
        b = annots[0].bbox
        assert (b.cx, b.cy, b.w, b.h) == pytest.approx((0.8, 0.3, 0.1, 0.2))

    def test_rotation_quarter_turn(self):
        _, annots = augment(Image.blank(10, 6), [make_annotation(0.2, 0.3, 0.1, 0.4)], _op("rotation90", 1))
        b = annots[0].bbox
        assert (b.cx, b.cy, b.w, b.h) == pytest.approx((0.7, 0.2, 0.4, 0.1))

    @pytest.mark.parametrize("kind", sorted(PIXEL_KINDS))
    def test_pixel_ops_keep_boxes(self, kind, rng):
        img, annots = _object_scene(rng, 32)
        lo, hi = AUGMENT_RANGES[kind]
        out, out_annots = augment(img, annots, _op(kind, (lo + hi) / 2, seed=4))
        assert out_annots == annots
        assert out.size == img.size

    def test_cutout_leaves_boxes(self, rng):
        img, annots = _object_scene(rng, 32)
        out, out_annots = augment(img, annots, _op("cutout", 0.3, seed=1, count=2))
        assert out_annots == annots
        assert (out.data == 0).sum() >= (img.data == 0).sum()

    def test_all_boxes_removed_is_valid(self):
        # 1.5x zoom about the centre pushes a corner box out of frame
        img = Image.blank(SIZE, SIZE)
        out, annots = augment(img, [make_annotation(0.03, 0.03, 0.03, 0.03)], _op("scale", 0.5))
        assert annots == []
        assert out.size == img.size

    def test_visibility_threshold(self):
        annots = [make_annotation(0.1, 0.5, 0.2, 0.2)]
        # Box spans x 0..20 of 100; shifting 14 left keeps 30% visible, 16 keeps 20%
        shift = np.array([[1.0, 0.0, -14.0], [0.0, 1.0, 0.0]])
        assert len(transform_annotations(annots, shift, (100, 100), (100, 100))) == 1
        shift[0, 2] = -16.0
        assert transform_annotations(annots, shift, (100, 100), (100, 100)) == []

    def test_clipped_to_image(self):
        shift = np.array([[1.0, 0.0, -10.0], [0.0, 1.0, 0.0]])
        b = transform_annotations([make_annotation(0.2, 0.5, 0.2, 0.2)], shift, (100, 100), (100, 100))[0].bbox
        assert (b.cx, b.w) == pytest.approx((0.1, 0.2))
        b = transform_annotations([make_annotation(0.15, 0.5, 0.2, 0.2)], shift, (100, 100), (100, 100))[0].bbox
        assert b.to_corners()[0] == pytest.approx(0.0)
        assert b.w == pytest.approx(0.15)


class TestRasterization:

    @pytest.mark.parametrize("kind", ["hflip", "rotation90", "shear", "crop", "scale"])
    def test_box_follows_pixels(self, kind):
        for seed in range(50):
            rng = np.random.default_rng(seed)
            img, annots = _object_scene(rng)
            op = random_op(kind, rng, pad_value=0)
            out, out_annots = augment(img, annots, op)
            _assert_box_matches_pixels(out, out_annots)

    def test_mosaic_box_follows_pixels(self):
        empty = (Image.blank(SIZE, SIZE), [])
        for seed in range(50):
            img, annots = _object_scene(np.random.default_rng(seed))
            out, out_annots = mosaic((img, annots), [empty, empty, empty], seed, pad_value=0)
            _assert_box_matches_pixels(out, out_annots)


class TestMosaic:

    def test_canvas_and_annotations(self, rng):
        scenes = [_object_scene(rng) for _ in range(4)]
        out, annots = mosaic(scenes[0], scenes[1:], seed=9, pad_value=0)
        assert out.size == (SIZE, SIZE)
        assert 1 <= len(annots) <= 4
        assert all(a.bbox.is_valid() for a in annots)
        # Tiles are half-size copies
        assert all(a.bbox.w <= 0.5 * (SIZE // 3) / SIZE + 1e-9 for a in annots)

    def test_deterministic(self, rng):
        scenes = [_object_scene(rng) for _ in range(4)]
        a = mosaic(scenes[0], scenes[1:], seed=3)
        b = mosaic(scenes[0], scenes[1:], seed=3)
        assert a == b

    def test_needs_three_partners(self, rng):
        scene = _object_scene(rng)
        with pytest.raises(ValueError):
            mosaic(scene, [scene], seed=0)
        with pytest.raises(ValueError):
            augment(*scene, _op("mosaic"))


class TestOps:

    def test_geometric_kinds(self):
        assert AugmentOp(kind="hflip").is_geometric
        assert AugmentOp(kind="mosaic").is_geometric
        assert not AugmentOp(kind="cutout").is_geometric
        assert not any(AugmentOp(kind=kind).is_geometric for kind in PIXEL_KINDS)

    def test_magnitude_range_checked(self):
        with pytest.raises(ValidationError):
            AugmentOp(kind="shear", magnitude=30.0)
        with pytest.raises(ValidationError):
            AugmentOp(kind="rotation90", magnitude=1.5)
        with pytest.raises(ValidationError):
            AugmentOp(kind="blur", magnitude=-1.0)

    def test_random_op_in_range(self, rng):
        for kind, (lo, hi) in AUGMENT_RANGES.items():
            op = random_op(kind, rng)
            assert lo <= op.magnitude <= hi

    def test_stack_deterministic(self, rng):
        img, annots = _object_scene(rng, 48)
        ops_a = random_op_stack(np.random.default_rng(5), max_ops=3)
        ops_b = random_op_stack(np.random.default_rng(5), max_ops=3)
        assert ops_a == ops_b
        assert 1 <= len(ops_a) <= 3
        assert len({op.kind for op in ops_a}) == len(ops_a)
        assert apply_stack(img, annots, ops_a) == apply_stack(img, annots, ops_b)

    def test_seed_changes_noise(self, rng):
        img, annots = _object_scene(rng, 32)
        a, _ = augment(img, annots, _op("noise", 0.1, seed=1))
        b, _ = augment(img, annots, _op("noise", 0.1, seed=2))
        assert a != b

    def test_annotations_not_mutated(self):
        annots = [Annotation(0, BBox(0.2, 0.3, 0.1, 0.2))]
        augment(Image.blank(10, 10), annots, _op("hflip"))
        assert annots[0].bbox.cx == 0.2
