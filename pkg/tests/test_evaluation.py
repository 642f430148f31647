"""AP50/mAP50 evaluation: hand PR-curve oracles and ranking properties."""

import numpy as np
import pytest

from factor.evaluation import (
    GroundTruthSet,
    deserialize_ground_truth,
    evaluate,
    serialize_ground_truth,
)
from factor.interchange import BoundingBox, DetectionSet, RegionPrediction


def det(box, score, label, n_categories=2):
    logits = np.zeros(n_categories)
    logits[label] = 4.0
    return RegionPrediction(box=box, logits=logits, feature=np.zeros(2), score=score, label=label)


def det_set(regions, image_id="img", n_categories=2):
    return DetectionSet(
        image_id=image_id,
        regions=tuple(regions),
        categories=tuple(f"c{i}" for i in range(n_categories)),
        view="original",
    )


def gt_set(boxes, image_id="img", difficult=None):
    return GroundTruthSet(
        image_id=image_id,
        boxes=tuple(boxes),
        difficult_flags=tuple(difficult or [False] * len(boxes)),
    )


B1 = BoundingBox(0.1, 0.1, 0.3, 0.3)
B2 = BoundingBox(0.5, 0.5, 0.7, 0.7)
B_MISS = BoundingBox(0.7, 0.1, 0.9, 0.3)


class TestEvaluate:
    def test_perfect_detections(self):
        dets = [det_set([det(B1, 0.9, 0), det(B2, 0.8, 1)])]
        truth = [gt_set([(B1, 0), (B2, 1)])]
        report = evaluate(dets, truth)
        assert report.per_category_ap50 == (1.0, 1.0)
        assert report.map50 == 1.0

    def test_zero_detections(self):
        report = evaluate([det_set([])], [gt_set([(B1, 0)])])
        assert report.map50 == 0.0

    def test_hand_pr_curve_hit_first(self):
        # scores 0.9 hit + 0.8 miss: precision (1/1, 1/2) at recalls (1, 1) -> AP 1.0
        dets = [det_set([det(B1, 0.9, 0), det(B_MISS, 0.8, 0)])]
        truth = [gt_set([(B1, 0)])]
        assert evaluate(dets, truth).per_category_ap50[0] == 1.0

    def test_hand_pr_curve_miss_first(self):
        # miss ranked first -> precision at the recall step is 1/2 -> AP 0.5
        dets = [det_set([det(B1, 0.8, 0), det(B_MISS, 0.9, 0)])]
        truth = [gt_set([(B1, 0)])]
        assert evaluate(dets, truth).per_category_ap50[0] == 0.5

    def test_duplicate_suppression(self):
        jittered = BoundingBox(0.1, 0.1, 0.3, 0.31)
        dets = [det_set([det(B1, 0.9, 0), det(jittered, 0.8, 0)])]
        truth = [gt_set([(B1, 0)])]
        report = evaluate(dets, truth)
        assert report.counts[0].true_positives == 1
        assert report.counts[0].false_positives == 1

    def test_score_monotone_transform_invariance(self):
        dets_a = [det_set([det(B1, 0.9, 0), det(B_MISS, 0.5, 0), det(B2, 0.7, 1)])]
        dets_b = [det_set([det(B1, 0.81, 0), det(B_MISS, 0.25, 0), det(B2, 0.49, 1)])]
        truth = [gt_set([(B1, 0), (B2, 1)])]
        assert evaluate(dets_a, truth) == evaluate(dets_b, truth)

    def test_low_score_false_positive_never_raises_ap(self):
        truth = [gt_set([(B1, 0)])]
        base = evaluate([det_set([det(B1, 0.9, 0)])], truth).per_category_ap50[0]
        with_fp = evaluate(
            [det_set([det(B1, 0.9, 0), det(B_MISS, 0.1, 0)])], truth
        ).per_category_ap50[0]
        assert with_fp <= base

    def test_difficult_excluded_from_denominator(self):
        dets = [det_set([det(B1, 0.9, 0)])]
        truth = [gt_set([(B1, 0), (B2, 0)], difficult=[False, True])]
        report = evaluate(dets, truth)
        assert report.per_category_ap50[0] == 1.0
        assert report.counts[0].ground_truth_total == 1

    def test_difficult_match_ignored_not_fp(self):
        dets = [det_set([det(B2, 0.9, 0), det(B1, 0.8, 0)])]
        truth = [gt_set([(B1, 0), (B2, 0)], difficult=[False, True])]
        report = evaluate(dets, truth)
        assert report.per_category_ap50[0] == 1.0
        assert report.counts[0].false_positives == 0

    def test_map_over_populated_categories_only(self):
        dets = [det_set([det(B1, 0.9, 0, n_categories=3)], n_categories=3)]
        truth = [gt_set([(B1, 0)])]
        report = evaluate(dets, truth)
        assert report.map50 == 1.0

    def test_image_id_mismatch(self):
        with pytest.raises(ValueError, match="image_id"):
            evaluate([det_set([], image_id="a")], [gt_set([(B1, 0)], image_id="b")])

    def test_bounds(self, rng):
        from tests.conftest import random_box

        for trial in range(20):
            boxes = [random_box(rng) for _ in range(3)]
            dets = [
                det_set(
                    [det(random_box(rng), float(rng.uniform()), int(rng.integers(2)))
                     for _ in range(4)],
                    image_id=f"i{trial}",
                )
            ]
            truth = [gt_set([(b, int(rng.integers(2))) for b in boxes], image_id=f"i{trial}")]
            report = evaluate(dets, truth)
            assert all(0.0 <= ap <= 1.0 for ap in report.per_category_ap50)
            assert 0.0 <= report.map50 <= 1.0


class TestGroundTruthSerialization:
    def test_round_trip(self):
        truth = gt_set([(B1, 0), (B2, 1)], difficult=[False, True])
        back = deserialize_ground_truth(serialize_ground_truth(truth))
        assert back == truth

    def test_length_mismatch_rejected(self):
        from factor.interchange import InvariantViolationError

        with pytest.raises(InvariantViolationError):
            GroundTruthSet("img", ((B1, 0),), (False, True))
