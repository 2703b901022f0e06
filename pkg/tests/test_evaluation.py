"""
Tests for matching, P/R/F1, AP, mAP and latency reporting
"""

import pytest

from heliodet.exceptions import ArgumentError, MetricsError
from heliodet.models.config_models import EvalConfig
from heliodet.services.dataset import DatasetEntry, Sample
from heliodet.services.detector import build_network
from heliodet.services.evaluation import (
    average_precision, bench_latency, envelope_area, evaluate_dataset, evaluate_samples, latency_stats,
    match_detections, mean_ap, precision_recall_f1,
)
from heliodet.utils.image_io import Image

from conftest import make_annotation, make_detection


def _det_on(annot, score, dx=0.0):
    b = annot.bbox
    return make_detection(b.cx + dx, b.cy, b.w, b.h, score, annot.class_id)


def _random_instance(rng):
    """A few images with ground truth and noisy, partly wrong detections"""
    gts, ranked = {}, []
    for image_id in range(int(rng.integers(1, 4))):
        image_gts = []
        for _ in range(int(rng.integers(0, 4))):
            w, h = rng.uniform(0.05, 0.3, size=2)
            image_gts.append(make_annotation(rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2), w, h))
        gts[image_id] = image_gts
        for gt in image_gts:
            if rng.random() < 0.8:
                ranked.append((image_id, _det_on(gt, float(rng.uniform()), dx=float(rng.uniform(-0.1, 0.1)))))
        for _ in range(int(rng.integers(0, 3))):
            w, h = rng.uniform(0.05, 0.3, size=2)
            ranked.append((image_id, make_detection(rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2), w, h, float(rng.uniform()))))
    return gts, ranked


def _oracle_ap(gts, ranked, iou_threshold=0.5):
    """Brute force: one P/R point per distinct score threshold, then the upper envelope"""
    n_gt = sum(len(g) for g in gts.values())
    points = []
    for threshold in sorted({d.score for _, d in ranked}, reverse=True):
        tp = fp = 0
        for image_id, image_gts in gts.items():
            kept = [d for i, d in ranked if i == image_id and d.score >= threshold]
            result = match_detections(kept, image_gts, iou_threshold)
            tp, fp = tp + result.tp, fp + result.fp
        points.append((tp / n_gt, tp / (tp + fp)))
    area, previous = 0.0, 0.0
    for recall in sorted({r for r, _ in points}):
        area += (recall - previous) * max(p for r, p in points if r >= recall)
        previous = recall
    return area


def _sample(annots, value=0):
    entry = DatasetEntry(image=f"images/s{value}.ppm", label=f"labels/s{value}.txt")
    return Sample(entry, Image.blank(8, 8, value=value), list(annots))


class TestMatch:

    def test_single_match(self):
        gt = make_annotation(0.5, 0.5, 0.2, 0.2)
        result = match_detections([_det_on(gt, 0.9)], [gt])
        assert (result.tp, result.fp, result.fn) == (1, 0, 0)
        assert result.pairs[0][:2] == (0, 0)

    def test_tie_goes_to_lower_gt_index(self):
        gt = make_annotation(0.5, 0.5, 0.2, 0.2)
        result = match_detections([_det_on(gt, 0.9)], [gt, gt])
        assert result.pairs[0][1] == 0
        assert result.fn == 1

    def test_higher_score_matches_first(self):
        gt = make_annotation(0.5, 0.5, 0.2, 0.2)
        weak, strong = _det_on(gt, 0.3, dx=0.01), _det_on(gt, 0.8, dx=0.02)
        result = match_detections([weak, strong], [gt])
        assert result.pairs[0][0] == 1
        assert (result.tp, result.fp) == (1, 1)

    def test_class_must_agree(self):
        result = match_detections([_det_on(make_annotation(0.5, 0.5, 0.2, 0.2, 1), 0.9)], [make_annotation(0.5, 0.5, 0.2, 0.2)])
        assert (result.tp, result.fp, result.fn) == (0, 1, 1)

    def test_below_threshold(self):
        gt = make_annotation(0.5, 0.5, 0.2, 0.2)
        assert match_detections([_det_on(gt, 0.9, dx=0.15)], [gt]).tp == 0


class TestPrecisionRecall:

    def test_counts(self):
        assert precision_recall_f1(9, 1, 1) == pytest.approx((0.9, 0.9, 0.9))

    def test_zero_over_zero(self):
        assert precision_recall_f1(0, 0, 0) == (0.0, 0.0, 0.0)
        assert precision_recall_f1(0, 0, 3) == (0.0, 0.0, 0.0)

    @pytest.mark.parametrize("p,r,f1", [(0.882, 0.861, 0.8714), (0.914, 0.900, 0.9069)])
    def test_harmonic_mean(self, p, r, f1):
        assert 2 * p * r / (p + r) == pytest.approx(f1, abs=5e-5)
        # 1000-object counts that reproduce p and r
        tp = round(r * 1000)
        fp = round(tp / p) - tp
        _, _, got = precision_recall_f1(tp, fp, 1000 - tp)
        assert got == pytest.approx(f1, abs=1e-3)

    def test_negative_counts(self):
        with pytest.raises(ArgumentError):
            precision_recall_f1(-1, 0, 0)


class TestAveragePrecision:

    def test_single_hit(self):
        gt = make_annotation(0.5, 0.5, 0.2, 0.2)
        ap, _ = average_precision([(0, _det_on(gt, 0.9))], {0: [gt]}, 0)
        assert ap == 1.0

    def test_tp_fp_tp(self):
        a, b = make_annotation(0.2, 0.2, 0.2, 0.2), make_annotation(0.7, 0.7, 0.2, 0.2)
        ranked = [(0, _det_on(a, 0.9)), (0, make_detection(0.5, 0.1, 0.05, 0.05, 0.8)), (0, _det_on(b, 0.7))]
        ap, curve = average_precision(ranked, {0: [a, b]}, 0)
        assert curve.points == pytest.approx([(0.5, 1.0), (0.5, 0.5), (1.0, 2 / 3)])
        assert ap == pytest.approx(5 / 6)

    def test_no_detections(self):
        ap, curve = average_precision([], {0: [make_annotation(0.5, 0.5, 0.2, 0.2)]}, 0)
        assert ap == 0.0
        assert curve.points == []

    def test_no_ground_truth_is_undefined(self):
        ap, _ = average_precision([(0, make_detection(0.5, 0.5, 0.2, 0.2, 0.9))], {0: []}, 0)
        assert ap is None

    def test_envelope(self):
        assert envelope_area([0.5, 0.5, 1.0], [1.0, 0.5, 2 / 3]) == pytest.approx(5 / 6)
        assert envelope_area([], []) == 0.0

    def test_matches_brute_force(self, rng):
        checked = 0
        for _ in range(100):
            gts, ranked = _random_instance(rng)
            ap, curve = average_precision(ranked, gts, 0)
            if ap is None:
                continue
            checked += 1
            assert all(r2 >= r1 for r1, r2 in zip(curve.recall, curve.recall[1:]))
            if not ranked:
                assert ap == 0.0
                continue
            assert ap == pytest.approx(_oracle_ap(gts, ranked), abs=1e-9)
        assert checked > 50

    def test_input_order_irrelevant(self, rng):
        for _ in range(20):
            gts, ranked = _random_instance(rng)
            shuffled = [ranked[i] for i in rng.permutation(len(ranked))]
            assert average_precision(ranked, gts, 0)[0] == average_precision(shuffled, gts, 0)[0]

    def test_low_scoring_false_positive_never_helps(self, rng):
        for _ in range(50):
            gts, ranked = _random_instance(rng)
            ap, _ = average_precision(ranked, gts, 0)
            if ap is None:
                continue
            extra = ranked + [(0, make_detection(0.01, 0.99, 0.01, 0.01, 0.0))]
            assert average_precision(extra, gts, 0)[0] <= ap + 1e-12


class TestMeanAP:

    def test_single_class(self):
        assert mean_ap([0.948]) == pytest.approx(0.948)

    def test_two_classes(self):
        assert mean_ap([0.8, 0.6]) == pytest.approx(0.7)

    def test_undefined_classes_skipped(self):
        assert mean_ap([0.8, None]) == pytest.approx(0.8)

    def test_nothing_defined(self):
        with pytest.raises(MetricsError):
            mean_ap([None, None])


class TestEvaluateSamples:

    def _samples(self):
        return [
            _sample([make_annotation(0.3, 0.3, 0.2, 0.2), make_annotation(0.7, 0.6, 0.2, 0.3)], value=1),
            _sample([make_annotation(0.5, 0.5, 0.4, 0.4)], value=2),
        ]

    def test_perfect_detector(self):
        samples = self._samples()
        truth = {s.image: [_det_on(a, 1.0) for a in s.annotations] for s in samples}
        report = evaluate_samples(samples, lambda img: truth[img], ["solar_cell"])
        assert (report.precision, report.recall, report.f1, report.mAP) == (1.0, 1.0, 1.0, 1.0)
        assert report.classes[0].ap == 1.0
        assert report.classes[0].n_gt == 3
        assert report.n_images == 2

    def test_empty_detector(self):
        report = evaluate_samples(self._samples(), lambda img: [], ["solar_cell"])
        assert (report.precision, report.recall, report.f1) == (0.0, 0.0, 0.0)
        assert report.mAP == 0.0
        assert report.classes[0].fn == 3

    def test_operating_threshold_only_for_prf(self):
        samples = self._samples()
        # Correct but low-scoring: counted by AP, not by P/R/F1
        truth = {s.image: [_det_on(a, 0.1) for a in s.annotations] for s in samples}
        report = evaluate_samples(samples, lambda img: truth[img], ["solar_cell"], score_threshold=0.25)
        assert report.mAP == 1.0
        assert report.recall == 0.0

    def test_class_without_ground_truth(self):
        report = evaluate_samples(self._samples(), lambda img: [], ["solar_cell", "other"])
        assert report.classes[1].ap is None
        assert report.mAP == 0.0

    def test_empty_split(self):
        with pytest.raises(ArgumentError):
            evaluate_samples([], lambda img: [], ["solar_cell"])

    def test_report_json_is_stable(self):
        report = evaluate_samples(self._samples(), lambda img: [], ["solar_cell"])
        assert report.to_json() == report.to_json()
        assert report.to_json().endswith("}\n")


class TestDatasetEvaluation:

    def test_untrained_network(self, synth_dataset, tiny_cfg):
        net = build_network(tiny_cfg, seed=0)
        report = evaluate_dataset(synth_dataset, net, tiny_cfg, EvalConfig(measure_latency=True, warmup_count=1))
        assert report.n_images == 2
        assert report.mAP is None or 0.0 <= report.mAP <= 1.0
        assert report.latency.count == 2


class TestLatency:

    def test_stats_ordering(self):
        stats = latency_stats([3.0, 1.0, 2.0, 10.0])
        assert stats.min_ms <= stats.median_ms <= stats.p95_ms <= stats.max_ms
        assert stats.mean_ms == pytest.approx(4.0)
        assert stats.count == 4

    def test_no_timings(self):
        with pytest.raises(ArgumentError):
            latency_stats([])

    def test_bench(self, tiny_cfg):
        net = build_network(tiny_cfg, seed=0)
        stats = bench_latency(net, tiny_cfg, [Image.blank(16, 16), Image.blank(20, 12)], warmup_count=1)
        assert stats.count == 2
        assert stats.min_ms > 0.0

    def test_bench_needs_images(self, tiny_cfg):
        with pytest.raises(ArgumentError):
            bench_latency(build_network(tiny_cfg, seed=0), tiny_cfg, [])
