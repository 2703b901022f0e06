"""
Tests for the heliodet command line
"""

import json

import pytest

from heliodet.main import EXIT_ERROR, EXIT_IO, EXIT_OK, build_parser, main
from heliodet.nn.network import Network
from heliodet.services import detector
from heliodet.services.dataset import load_manifest
from heliodet.services.trainer import TrainLog
from heliodet.utils.geometry import BBox, Detection

TINY_RUN = {
    "n_images": 8,
    "image_size": 32,
    "cell_size": [0.25, 0.4],
    "n_distractors": [0, 1],
    "input_size": 16,
    "S": 2,
    "hidden_features": 16,
    "epochs": 1,
    "batch_size": 4,
    "warmup_count": 1,
    "seed": 3,
}


@pytest.fixture
def run_config(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(TINY_RUN))
    return str(path)


def test_parser_lists_every_command():
    parser = build_parser()
    for command in ("synth", "split", "augment", "train", "detect", "eval", "bench", "gradcheck", "anchors"):
        assert parser.parse_args([command]).command == command


def test_end_to_end(tmp_path, run_config, capsys):
    data = str(tmp_path / "data")
    weights = str(tmp_path / "runs" / "tiny.weights")

    assert main(["synth", "--config", run_config, "--out", data]) == EXIT_OK
    assert load_manifest(data).counts() == {"train": 6, "test": 2}

    assert main(["train", "--config", run_config, "--dataset", data, "--out", weights]) == EXIT_OK
    log = TrainLog.from_text((tmp_path / "runs" / "tiny.trainlog.txt").read_text())
    assert len(log.records) == 1
    assert log.effective["epochs"] == 1

    report_path = tmp_path / "report.json"
    assert main(["eval", "--config", run_config, "--dataset", data, "--weights", weights, "--out", str(report_path)]) == EXIT_OK
    report = json.loads(report_path.read_text())
    assert report["n_images"] == 2
    assert report["effective"]["seed"] == 3

    image = str(tmp_path / "data" / "images" / "scene_00000.ppm")
    overlay = tmp_path / "overlay.ppm"
    capsys.readouterr()
    assert main(["detect", "--config", run_config, "--weights", weights, "--image", image, "--overlay", str(overlay)]) == EXIT_OK
    result = json.loads(capsys.readouterr().out)
    assert result["image"] == image
    assert isinstance(result["detections"], list)
    assert overlay.read_bytes().startswith(b"P6")

    bench_path = tmp_path / "bench.json"
    assert main(["bench", "--config", run_config, "--dataset", data, "--weights", weights, "--out", str(bench_path)]) == EXIT_OK
    assert json.loads(bench_path.read_text())["count"] == 2


def test_augment_and_split(tmp_path, run_config):
    data = str(tmp_path / "data")
    assert main(["synth", "--config", run_config, "--out", data]) == EXIT_OK
    assert main(["augment", "--config", run_config, "--dataset", data]) == EXIT_OK
    assert load_manifest(data).counts() == {"train": 18, "test": 2}

    assert main(["split", "--config", run_config, "--dataset", data, "--seed", "5"]) == EXIT_OK
    manifest = load_manifest(data)
    assert sum(manifest.counts().values()) == 20
    assert manifest.provenance["split"]["seed"] == 5


def test_anchors(tmp_path, run_config, capsys):
    data = str(tmp_path / "data")
    main(["synth", "--config", run_config, "--out", data])
    capsys.readouterr()
    assert main(["anchors", "--config", run_config, "--dataset", data]) == EXIT_OK
    assert len(json.loads(capsys.readouterr().out)["anchors"]) == 2


def test_gradcheck(tmp_path):
    out = tmp_path / "gradcheck.json"
    assert main(["gradcheck", "--seeds", "1", "--out", str(out)]) == EXIT_OK
    summary = json.loads(out.read_text())
    assert all(case["passed"] for case in summary["cases"].values())
    assert "yolo_loss_network" in summary["cases"]


def test_config_error_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"batchsize": 8}')
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "d")]) == EXIT_ERROR


def test_missing_dataset_exit_code(tmp_path):
    assert main(["eval", "--dataset", str(tmp_path / "nowhere"), "--weights", "w"]) == EXIT_IO


def test_missing_config_exit_code(tmp_path):
    assert main(["synth", "--config", str(tmp_path / "absent.json")]) == EXIT_IO


def test_detect_needs_image(tmp_path):
    assert main(["detect", "--weights", str(tmp_path / "w.weights")]) == EXIT_ERROR


def test_every_artifact_carries_the_effective_config(tmp_path, run_config, capsys):
    data = str(tmp_path / "data")
    weights = str(tmp_path / "tiny.weights")
    common = ["--config", run_config, "--seed", "5"]

    def emitted(*argv):
        capsys.readouterr()
        assert main([*argv, *common]) == EXIT_OK
        return json.loads(capsys.readouterr().out)

    assert main(["synth", *common, "--out", data]) == EXIT_OK
    assert load_manifest(data).provenance["effective"]["seed"] == 5

    assert main(["augment", *common, "--dataset", data]) == EXIT_OK
    assert load_manifest(data).provenance["effective"]["seed"] == 5
    assert main(["split", *common, "--dataset", data]) == EXIT_OK
    assert load_manifest(data).provenance["effective"]["seed"] == 5

    assert main(["train", *common, "--dataset", data, "--out", weights]) == EXIT_OK
    assert Network.load(weights)[1]["effective"]["seed"] == 5
    assert TrainLog.from_text((tmp_path / "tiny.trainlog.txt").read_text()).effective["seed"] == 5

    image = str(tmp_path / "data" / "images" / "scene_00000.ppm")
    payloads = [
        emitted("eval", "--dataset", data, "--weights", weights),
        emitted("bench", "--dataset", data, "--weights", weights),
        emitted("detect", "--weights", weights, "--image", image),
        emitted("anchors", "--dataset", data),
        emitted("gradcheck", "--seeds", "1"),
    ]
    for payload in payloads:
        assert payload["effective"]["seed"] == 5
        assert payload["effective"]["epochs"] == 1


def test_detect_reports_class_scores(tmp_path, run_config, capsys, monkeypatch):
    data = str(tmp_path / "data")
    weights = str(tmp_path / "tiny.weights")
    main(["synth", "--config", run_config, "--out", data])
    main(["train", "--config", run_config, "--dataset", data, "--out", weights])

    found = Detection(bbox=BBox(0.5, 0.5, 0.2, 0.3), objectness=0.9, class_id=0, score=0.81, class_scores=(0.9,))
    monkeypatch.setattr(detector, "detect", lambda img, net, cfg: [found])
    image = str(tmp_path / "data" / "images" / "scene_00000.ppm")
    capsys.readouterr()
    assert main(["detect", "--config", run_config, "--weights", weights, "--image", image]) == EXIT_OK
    (det,) = json.loads(capsys.readouterr().out)["detections"]
    assert det["class_scores"] == [0.9]
    assert det["score"] == 0.81
    assert det["bbox"] == [0.5, 0.5, 0.2, 0.3]
