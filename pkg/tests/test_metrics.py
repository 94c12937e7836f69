import random
import time

import pytest
from hypothesis import given, settings, strategies as st

from hazardpipe.core import BoundingBox, HazardClass
from hazardpipe.metrics import (
    EmptyDataset,
    GroundTruth,
    IOU_SWEEP,
    LabeledBox,
    ScoredBox,
    average_precision,
    evaluate,
    iou,
    match_detections,
)

from oracles import (
    oracle_average_precision,
    oracle_evaluate_counts,
    oracle_map,
    oracle_match,
    pixel_iou,
)

PF = HazardClass.PLASTIC_FOIL
MC = HazardClass.METAL_CAN


def box(x0, y0, x1, y1):
    return BoundingBox(x0, y0, x1, y1)


class TestIoU:
    def test_identical_boxes(self):
        assert iou(box(0, 0, 10, 10), box(0, 0, 10, 10)) == 1.0

    def test_disjoint_boxes(self):
        assert iou(box(0, 0, 10, 10), box(20, 20, 30, 30)) == 0.0

    def test_half_overlap(self):
        # intersection 50, union 150
        assert iou(box(0, 0, 10, 10), box(5, 0, 15, 10)) == pytest.approx(1 / 3, abs=1e-15)

    def test_touching_edges_do_not_intersect(self):
        assert iou(box(0, 0, 10, 10), box(10, 0, 20, 10)) == 0.0

    @given(
        ax=st.integers(0, 20), ay=st.integers(0, 20),
        aw=st.integers(1, 12), ah=st.integers(1, 12),
        bx=st.integers(0, 20), by=st.integers(0, 20),
        bw=st.integers(1, 12), bh=st.integers(1, 12),
    )
    def test_matches_pixel_counting_oracle(self, ax, ay, aw, ah, bx, by, bw, bh):
        a = box(ax, ay, ax + aw, ay + ah)
        b = box(bx, by, bx + bw, by + bh)
        assert iou(a, b) == pytest.approx(pixel_iou(a, b), abs=1e-12)
        assert iou(a, b) == iou(b, a)


class TestMatching:
    def test_exact_hit(self):
        preds = [ScoredBox(box(0, 0, 10, 10), PF, 0.9)]
        truths = [LabeledBox(box(0, 0, 10, 10), PF)]
        [(pred, matched)] = match_detections(preds, truths, 0.5)
        assert matched is truths[0]

    def test_one_to_one_rule(self):
        truths = [LabeledBox(box(0, 0, 10, 10), PF)]
        preds = [
            ScoredBox(box(0, 0, 10, 10), PF, 0.9),
            ScoredBox(box(1, 0, 11, 10), PF, 0.8),
        ]
        result = match_detections(preds, truths, 0.5)
        assert result[0][1] is truths[0]
        assert result[1][1] is None

    def test_class_mismatch_never_matches(self):
        preds = [ScoredBox(box(0, 0, 10, 10), MC, 0.9)]
        truths = [LabeledBox(box(0, 0, 10, 10), PF)]
        assert match_detections(preds, truths, 0.5)[0][1] is None

    def test_mixed_iou_case_matches_exhaustive_oracle(self):
        truths = [
            LabeledBox(box(0, 0, 10, 10), PF),
            LabeledBox(box(8, 0, 18, 10), PF),
        ]
        preds = [
            ScoredBox(box(1, 0, 11, 10), PF, 0.95),
            ScoredBox(box(7, 0, 17, 10), PF, 0.90),
            ScoredBox(box(0, 1, 10, 11), PF, 0.85),
        ]
        expected = oracle_match(preds, truths, 0.5)
        got = match_detections(preds, truths, 0.5)
        got_indices = [None if m is None else truths.index(m) for _, m in got]
        assert got_indices == expected


def _random_instance(rng, max_images=5, max_boxes=6):
    """Small random dataset; scores are unique so ranking is unambiguous."""
    n_images = rng.randint(1, max_images)
    preds_by_image = {}
    truths_by_image = {}
    score_pool = iter(rng.sample(range(1, 1000), 200))
    for i in range(n_images):
        image_id = f"img{i}"
        truths_by_image[image_id] = [
            LabeledBox(
                _rand_box(rng),
                rng.choice([PF, MC]),
            )
            for _ in range(rng.randint(0, max_boxes))
        ]
        preds_by_image[image_id] = [
            ScoredBox(_rand_box(rng), rng.choice([PF, MC]), next(score_pool) / 1000.0)
            for _ in range(rng.randint(0, max_boxes))
        ]
    return preds_by_image, truths_by_image


def _rand_box(rng):
    x = rng.randint(0, 15)
    y = rng.randint(0, 15)
    return box(x, y, x + rng.randint(2, 12), y + rng.randint(2, 12))


class TestAveragePrecision:
    def test_perfect_detector(self):
        preds = {"a": [ScoredBox(box(0, 0, 10, 10), PF, 0.9)]}
        truths = {"a": [LabeledBox(box(0, 0, 10, 10), PF)]}
        assert average_precision(preds, truths, 0.5) == 1.0

    def test_zero_matches(self):
        preds = {"a": [ScoredBox(box(50, 50, 60, 60), PF, 0.9)]}
        truths = {"a": [LabeledBox(box(0, 0, 10, 10), PF)]}
        assert average_precision(preds, truths, 0.5) == 0.0

    def test_empty_truths_nonempty_preds(self):
        preds = {"a": [ScoredBox(box(0, 0, 10, 10), PF, 0.9)]}
        assert average_precision(preds, {"a": []}, 0.5) == 0.0

    def test_both_empty(self):
        assert average_precision({"a": []}, {"a": []}, 0.5) == 1.0

    def test_five_pred_three_truth_staircase(self):
        # Hand staircase: TP,FP,TP,FP,TP over 3 truths.
        # Envelope AP = 1/3*1 + 1/3*(2/3) + 1/3*(3/5) = 34/45.
        truths = {
            "a": [
                LabeledBox(box(0, 0, 10, 10), PF),
                LabeledBox(box(20, 0, 30, 10), PF),
                LabeledBox(box(40, 0, 50, 10), PF),
            ]
        }
        preds = {
            "a": [
                ScoredBox(box(0, 0, 10, 10), PF, 0.95),
                ScoredBox(box(100, 0, 110, 10), PF, 0.90),
                ScoredBox(box(20, 0, 30, 10), PF, 0.80),
                ScoredBox(box(1, 0, 11, 10), PF, 0.60),
                ScoredBox(box(40, 2, 50, 12), PF, 0.50),
            ]
        }
        expected = 34 / 45
        assert average_precision(preds, truths, 0.5) == pytest.approx(expected, abs=1e-12)
        assert oracle_average_precision(preds, truths, 0.5) == pytest.approx(expected, abs=1e-12)

    def test_matches_oracle_on_seeded_battery(self):
        rng = random.Random(1234)
        for _ in range(25):
            preds, truths = _random_instance(rng, max_images=2, max_boxes=4)
            for thr in (0.3, 0.5, 0.75):
                assert average_precision(preds, truths, thr) == pytest.approx(
                    oracle_average_precision(preds, truths, thr), abs=1e-12
                )


class TestEvaluate:
    def test_perfect_detector_all_ones(self):
        truth = GroundTruth(
            {
                "a": [LabeledBox(box(0, 0, 10, 10), PF)],
                "b": [LabeledBox(box(5, 5, 20, 20), MC)],
            }
        )
        preds = {
            "a": [ScoredBox(box(0, 0, 10, 10), PF, 0.9)],
            "b": [ScoredBox(box(5, 5, 20, 20), MC, 0.8)],
        }
        report = evaluate(preds, truth)
        assert report.box_precision == 1.0
        assert report.recall == 1.0
        assert report.map_50 == 1.0
        assert report.map_50_95 == 1.0

    def test_empty_dataset_raises(self):
        with pytest.raises(EmptyDataset):
            evaluate({}, GroundTruth({}))

    def test_two_image_micro_fixture(self):
        # img1: one exact PF hit + one far FP; img2: MC truth missed entirely.
        truth = GroundTruth(
            {
                "img1": [LabeledBox(box(0, 0, 10, 10), PF)],
                "img2": [LabeledBox(box(0, 0, 8, 8), MC)],
            }
        )
        preds = {
            "img1": [
                ScoredBox(box(0, 0, 10, 10), PF, 0.9),
                ScoredBox(box(30, 30, 40, 40), PF, 0.6),
            ],
            "img2": [],
        }
        report = evaluate(preds, truth)
        # Hand count: TP=1, FP=1, FN=1.
        assert report.box_precision == pytest.approx(0.5, abs=1e-12)
        assert report.recall == pytest.approx(0.5, abs=1e-12)
        # PF staircase: TP then FP -> AP 1.0; MC has truth, no preds -> AP 0.
        assert report.map_50 == pytest.approx(0.5, abs=1e-12)
        assert report.per_class["plastic_foil"]["ap_50"] == pytest.approx(1.0)
        assert report.per_class["metal_can"]["ap_50"] == 0.0

    def test_image_order_permutation_invariance(self):
        rng = random.Random(99)
        preds, truths = _random_instance(rng)
        truth = GroundTruth(truths)
        base = evaluate(preds, truth)
        shuffled_ids = list(preds)
        rng.shuffle(shuffled_ids)
        preds2 = {k: preds[k] for k in shuffled_ids}
        truth2 = GroundTruth({k: truths[k] for k in reversed(shuffled_ids)})
        again = evaluate(preds2, truth2)
        assert again == base

    def test_oracle_equivalence_battery_under_one_second(self):
        """Acceptance: exact oracle agreement on <=5 images x <=6 boxes, < 1 s."""
        rng = random.Random(20240601)
        start = time.perf_counter()
        for _ in range(30):
            preds, truths = _random_instance(rng)
            truth = GroundTruth(truths)
            report = evaluate(preds, truth)

            tp, fp, fn = oracle_evaluate_counts(preds, truths, 0.5)
            precision = tp / (tp + fp) if tp + fp else 1.0
            recall = tp / (tp + fn) if tp + fn else 1.0
            assert report.box_precision == pytest.approx(precision, abs=1e-12)
            assert report.recall == pytest.approx(recall, abs=1e-12)
            assert report.map_50 == pytest.approx(
                oracle_map(preds, truths, [0.5]), abs=1e-12
            )
            assert report.map_50_95 == pytest.approx(
                oracle_map(preds, truths, IOU_SWEEP), abs=1e-12
            )
            assert report.map_50_95 <= report.map_50 + 1e-12
        elapsed = time.perf_counter() - start
        assert elapsed < 1.0, f"oracle battery took {elapsed:.2f}s"

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_property_oracle_equivalence_small(self, seed):
        rng = random.Random(seed)
        preds, truths = _random_instance(rng, max_images=2, max_boxes=3)
        report = evaluate(preds, GroundTruth(truths))
        tp, fp, fn = oracle_evaluate_counts(preds, truths, 0.5)
        precision = tp / (tp + fp) if tp + fp else 1.0
        recall = tp / (tp + fn) if tp + fn else 1.0
        assert report.box_precision == pytest.approx(precision, abs=1e-12)
        assert report.recall == pytest.approx(recall, abs=1e-12)
        assert report.map_50_95 <= report.map_50 + 1e-12


class TestGroundTruthIO:
    def test_jsonl_round_trip(self, tmp_path):
        truth = GroundTruth(
            {
                "img2": [LabeledBox(box(0, 0, 8, 8), MC)],
                "img1": [LabeledBox(box(0, 0, 10, 10), PF)],
            }
        )
        path = tmp_path / "truth.jsonl"
        truth.to_jsonl(path)
        restored = GroundTruth.from_jsonl(path)
        assert restored.boxes == truth.boxes
