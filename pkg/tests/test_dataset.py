"""
Tests for splitting, preprocessing, manifest handling and offline expansion
"""

import pytest

from heliodet.exceptions import ArgumentError, DatasetIOError
from heliodet.services.dataset import (
    DatasetEntry, expand_training_set, load_manifest, load_split, orient_upright, preprocess, save_manifest, split_dataset,
)
from heliodet.services.labels import read_labels
from heliodet.utils.file_handler import image_path, label_path
from heliodet.utils.image_io import Image

from conftest import make_annotation


def _entries(n):
    return [DatasetEntry(image=image_path(f"s{i}"), label=label_path(f"s{i}")) for i in range(n)]


class TestSplit:

    @pytest.mark.parametrize("n,train,test", [(358, 286, 72), (10, 8, 2), (300, 240, 60), (2, 1, 1)])
    def test_counts(self, n, train, test):
        assert split_dataset(_entries(n), 0.8, seed=0).counts() == {"train": train, "test": test}

    def test_each_split_keeps_one(self):
        assert split_dataset(_entries(3), 0.1, seed=0).counts() == {"train": 1, "test": 2}
        assert split_dataset(_entries(3), 0.99, seed=0).counts() == {"train": 2, "test": 1}

    def test_deterministic(self):
        a = split_dataset(_entries(50), 0.8, seed=7)
        b = split_dataset(_entries(50), 0.8, seed=7)
        assert [e.split for e in a.entries] == [e.split for e in b.entries]
        c = split_dataset(_entries(50), 0.8, seed=8)
        assert [e.split for e in a.entries] != [e.split for e in c.entries]

    def test_order_preserved(self):
        entries = _entries(20)
        manifest = split_dataset(entries, 0.8, seed=1)
        assert [e.image for e in manifest.entries] == [e.image for e in entries]

    def test_too_few_entries(self):
        with pytest.raises(ArgumentError):
            split_dataset(_entries(1), 0.8, seed=0)

    @pytest.mark.parametrize("fraction", [0.0, 1.0, -0.2])
    def test_fraction_range(self, fraction):
        with pytest.raises(ArgumentError):
            split_dataset(_entries(10), fraction, seed=0)


class TestPreprocess:

    def test_letterbox_boxes(self):
        # 40x30 -> 64: scale 1.6, 8 rows of padding above and below
        img, annots, transform = preprocess(Image.blank(40, 30), [make_annotation(0.5, 0.5, 0.2, 0.15)], 0, 64)
        assert img.size == (64, 64)
        assert (transform.pad_x, transform.pad_y) == (0, 8)
        b = annots[0].bbox
        assert (b.cx, b.cy, b.w, b.h) == pytest.approx((0.5, 0.5, 0.2, 0.1125))

    def test_orient_then_letterbox(self):
        # Stored 30x40 sideways; a quarter turn clockwise makes it 40x30
        img, annots, _ = preprocess(Image.blank(30, 40), [make_annotation(0.5, 0.5, 0.15, 0.2)], 90, 64)
        assert img.size == (64, 64)
        b = annots[0].bbox
        assert (b.cx, b.cy, b.w, b.h) == pytest.approx((0.5, 0.5, 0.2, 0.1125))

    def test_orient_rule(self):
        _, annots = orient_upright(Image.blank(10, 20), [make_annotation(0.2, 0.3, 0.1, 0.4)], 90)
        b = annots[0].bbox
        assert (b.cx, b.cy, b.w, b.h) == pytest.approx((0.7, 0.2, 0.4, 0.1))

    def test_pad_value(self):
        img, _, _ = preprocess(Image.blank(40, 30, value=0), [], 0, 64, pad_value=7)
        assert img.data[0, 0, 0] == 7
        assert img.data[32, 32, 0] == 0

    def test_bad_orient(self):
        with pytest.raises(ArgumentError):
            preprocess(Image.blank(4, 4), [], 45, 8)


class TestManifest:

    def test_roundtrip(self, synth_dataset):
        loaded = load_manifest(synth_dataset.root)
        assert loaded.entries == synth_dataset.entries
        assert loaded.classes == ["solar_cell"]
        assert loaded.counts() == {"train": 8, "test": 2}

    def test_missing_files_listed(self, synth_dataset):
        gone = [synth_dataset.path(e.image) for e in synth_dataset.entries[:2]]
        for path in gone:
            path.unlink()
        with pytest.raises(DatasetIOError) as exc:
            load_manifest(synth_dataset.root)
        assert exc.value.paths == [str(p) for p in gone]
        assert isinstance(exc.value, OSError)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DatasetIOError):
            load_manifest(tmp_path)

    def test_invalid_manifest(self, tmp_path):
        (tmp_path / "manifest.json").write_text('{"entries": [{"image": "a.ppm"}]}')
        with pytest.raises(ArgumentError):
            load_manifest(tmp_path)

    def test_load_split(self, synth_dataset):
        samples = load_split(synth_dataset, "test")
        assert [s.entry for s in samples] == synth_dataset.split("test")
        assert all(s.image.size == (32, 32) for s in samples)


class TestExpand:

    def test_zero_ops_is_identity(self, synth_dataset):
        assert expand_training_set(synth_dataset, 0, seed=1).entries == synth_dataset.entries

    def test_counts_and_files(self, synth_dataset):
        test_bytes = {e.image: synth_dataset.path(e.image).read_bytes() for e in synth_dataset.split("test")}
        expanded = expand_training_set(synth_dataset, 2, seed=1)

        assert expanded.counts() == {"train": 24, "test": 2}
        assert expanded.entries[:10] == synth_dataset.entries
        assert expanded.entries[10].image == image_path(f"{synth_dataset.split('train')[0].stem}_aug0")
        for e in expanded.entries[10:]:
            assert e.orient == 0
            assert expanded.path(e.image).is_file()
            read_labels(expanded.path(e.label), 1)
        for image, data in test_bytes.items():
            assert synth_dataset.path(image).read_bytes() == data
        assert expanded.provenance["expand"] == {"ops_per_image": 2, "seed": 1, "max_ops": 3}

    def test_deterministic(self, synth_dataset):
        first = expand_training_set(synth_dataset, 1, seed=4)
        snapshot = {e.image: first.path(e.image).read_bytes() for e in first.entries[10:]}
        expand_training_set(synth_dataset, 1, seed=4)
        assert all(first.path(image).read_bytes() == data for image, data in snapshot.items())

    def test_saved_manifest_reloads(self, synth_dataset):
        expanded = expand_training_set(synth_dataset, 1, seed=2)
        save_manifest(expanded)
        assert load_manifest(synth_dataset.root).counts() == {"train": 16, "test": 2}

    def test_negative_ops(self, synth_dataset):
        with pytest.raises(ArgumentError):
            expand_training_set(synth_dataset, -1, seed=0)
