"""
Tests for run-configuration parsing and process settings
"""

import pytest

from heliodet.config import Settings
from heliodet.exceptions import ConfigError
from heliodet.models.config_models import FULL_SCALE_INPUT, RunConfig, parse_config


class TestParseConfig:

    def test_defaults(self):
        cfg = parse_config("{}")
        assert cfg.train.batch_size == 8
        assert cfg.train.epochs == 100
        assert cfg.detector.input_size == 96
        assert cfg.split.train_fraction == pytest.approx(0.8)
        assert cfg.evaluation.iou_threshold == 0.5

    def test_empty_text(self):
        assert parse_config("") == RunConfig()

    def test_flat_keys_route_to_sections(self):
        cfg = parse_config('{"epochs": 3, "image_size": 48, "S": 7, "ops_per_image": 1, "iou_threshold": 0.6}')
        assert cfg.train.epochs == 3
        assert cfg.synth.image_size == 48
        assert cfg.detector.grid_size == 7
        assert cfg.augment.ops_per_image == 1
        assert cfg.evaluation.iou_threshold == 0.6

    def test_seed_reaches_every_section(self):
        cfg = parse_config('{"seed": 4}')
        assert cfg.train.seed == 4 and cfg.synth.seed == 4
        assert cfg.seed == 4

    @pytest.mark.parametrize("text,key", [
        ('{"epochs": 0}', "epochs"),
        ('{"batchsize": 8}', "batchsize"),
        ('{"lr": "fast"}', "lr"),
        ('{"score_threshold": 1.5}', "score_threshold"),
    ])
    def test_errors_name_the_key(self, text, key):
        with pytest.raises(ConfigError) as exc:
            parse_config(text)
        assert exc.value.key == key
        assert key in str(exc.value)

    def test_malformed_json(self):
        with pytest.raises(ConfigError):
            parse_config("{epochs: 3")
        with pytest.raises(ConfigError):
            parse_config("[1, 2]")

    @pytest.mark.parametrize("text,key", [
        ('{"epochs": "100"}', "epochs"),
        ('{"batch_size": 8.0}', "batch_size"),
        ('{"seed": "7"}', "seed"),
        ('{"augment": "yes"}', "augment"),
        ('{"measure_latency": 1}', "measure_latency"),
        ('{"iou_threshold": "0.5"}', "iou_threshold"),
        ('{"n_cells": [1, "3"]}', "n_cells"),
    ])
    def test_type_mismatch_is_config_error(self, text, key):
        with pytest.raises(ConfigError) as exc:
            parse_config(text)
        assert exc.value.key == key

    def test_arrays_fill_tuple_fields(self):
        cfg = parse_config('{"cell_size": [0.2, 0.3], "n_cells": [2, 2], "anchors": [[0.1, 0.2], [0.3, 0.4]]}')
        assert cfg.synth.cell_size == (0.2, 0.3)
        assert cfg.synth.n_cells == (2, 2)
        assert cfg.detector.anchors == [(0.1, 0.2), (0.3, 0.4)]

    def test_integers_accepted_for_floats(self):
        assert parse_config('{"iou_threshold": 1}').evaluation.iou_threshold == 1.0

    @pytest.mark.parametrize("anchors", ["[[0.1, 0.2]]", "[[0.1, 0.2], [0.0, 0.3]]"])
    def test_anchor_errors_name_anchors(self, anchors):
        with pytest.raises(ConfigError) as exc:
            parse_config('{"B": 2, "anchors": ' + anchors + "}")
        assert exc.value.key == "anchors"

    def test_full_profile(self):
        cfg = parse_config('{"profile": "full"}')
        assert cfg.detector.input_size == FULL_SCALE_INPUT == 640
        assert parse_config('{"profile": "full", "input_size": 320}').detector.input_size == 320

    def test_lr_zero_accepted(self):
        assert parse_config('{"lr": 0}').train.lr == 0.0

    def test_with_seed(self):
        cfg = parse_config('{"seed": 1, "epochs": 5}').with_seed(9)
        assert cfg.train.seed == 9 and cfg.synth.seed == 9
        assert cfg.train.epochs == 5

    def test_effective_is_flat_and_sorted(self):
        effective = parse_config('{"epochs": 2}').effective()
        assert effective["epochs"] == 2
        assert effective["batch_size"] == 8
        assert list(effective) == sorted(effective)


class TestSettings:

    def test_environment(self, monkeypatch):
        monkeypatch.setenv("HELIODET_THREADS", "4")
        monkeypatch.setenv("HELIODET_LOG_LEVEL", "DEBUG")
        s = Settings()
        assert s.threads == 4
        assert s.log_level == "DEBUG"

    def test_defaults(self, monkeypatch):
        monkeypatch.delenv("HELIODET_THREADS", raising=False)
        assert Settings(_env_file=None).threads == 1
