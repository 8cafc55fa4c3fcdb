"""Rect, IOU, and greedy suppression against analytic cases and a brute oracle."""
import numpy as np
import pytest

from pyrdet import Rect, iou, nms


class Scored:
    def __init__(self, box, score):
        self.box = box
        self.score = score


def ref_iou(a, b):
    # independent route: corner arithmetic instead of width/height
    ax2, ay2 = a.x + a.w, a.y + a.h
    bx2, by2 = b.x + b.w, b.y + b.h
    iw = min(ax2, bx2) - max(a.x, b.x)
    ih = min(ay2, by2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0 else 0.0


def ref_nms(items, thresh):
    # greedy reference: repeatedly take the best remaining, discard overlaps
    remaining = sorted(range(len(items)), key=lambda i: -items[i].score)
    kept = []
    while remaining:
        top = remaining.pop(0)
        kept.append(top)
        remaining = [
            i for i in remaining if ref_iou(items[top].box, items[i].box) <= thresh
        ]
    return [items[i] for i in kept]


def random_rect(rng):
    x = float(rng.uniform(0, 80))
    y = float(rng.uniform(0, 80))
    w = float(rng.uniform(1, 40))
    h = float(rng.uniform(1, 40))
    return Rect(x, y, w, h)


class TestRect:
    def test_properties(self):
        r = Rect(2.0, 3.0, 4.0, 6.0)
        assert r.x2 == 6.0 and r.y2 == 9.0
        assert r.area == 24.0
        assert r.center == (4.0, 6.0)

    def test_negative_dims_rejected(self):
        with pytest.raises(ValueError):
            Rect(0, 0, -1.0, 5.0)
        with pytest.raises(ValueError):
            Rect(0, 0, 5.0, -0.1)

    def test_zero_dims_allowed(self):
        assert Rect(1, 1, 0.0, 0.0).area == 0.0


class TestIou:
    def test_identical(self):
        r = Rect(3, 4, 10, 12)
        assert iou(r, r) == 1.0

    def test_disjoint(self):
        assert iou(Rect(0, 0, 10, 10), Rect(20, 20, 5, 5)) == 0.0

    def test_touching_edges_is_zero(self):
        assert iou(Rect(0, 0, 10, 10), Rect(10, 0, 10, 10)) == 0.0

    def test_half_overlap_analytic(self):
        # inter 5x10 = 50, union 200 - 50 = 150
        v = iou(Rect(0, 0, 10, 10), Rect(5, 0, 10, 10))
        assert v == pytest.approx(50.0 / 150.0, abs=1e-12)

    def test_zero_area_boxes(self):
        assert iou(Rect(0, 0, 0, 0), Rect(0, 0, 0, 0)) == 0.0
        assert iou(Rect(0, 0, 0, 10), Rect(0, 0, 10, 10)) == 0.0

    def test_contained_box(self):
        outer = Rect(0, 0, 10, 10)
        inner = Rect(2, 2, 5, 5)
        assert iou(outer, inner) == pytest.approx(25.0 / 100.0, abs=1e-12)

    def test_symmetry_random(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            a, b = random_rect(rng), random_rect(rng)
            va, vb = iou(a, b), iou(b, a)
            assert va == vb
            assert 0.0 <= va <= 1.0
            assert va == pytest.approx(ref_iou(a, b), abs=1e-12)


class TestNms:
    def test_empty(self):
        assert nms([]) == []

    def test_single(self):
        d = Scored(Rect(0, 0, 10, 10), 0.5)
        assert nms([d]) == [d]

    def test_three_box_example(self):
        # B overlaps A at IOU 0.5 (> 0.3, suppressed); C is disjoint
        a = Scored(Rect(0, 0, 10, 15), 0.9)
        b = Scored(Rect(0, 5, 10, 15), 0.8)
        assert iou(a.box, b.box) == pytest.approx(0.5)
        c = Scored(Rect(50, 50, 10, 10), 0.7)
        assert nms([a, b, c], 0.3) == [a, c]

    def test_exact_threshold_survives(self):
        # suppression is strictly greater-than, 0.5 overlap at thresh 0.5 stays
        a = Scored(Rect(0, 0, 10, 15), 0.9)
        b = Scored(Rect(0, 5, 10, 15), 0.8)
        assert nms([a, b], 0.5) == [a, b]
        assert nms([a, b], 0.49) == [a]

    def test_score_ties_keep_input_order(self):
        a = Scored(Rect(0, 0, 10, 10), 0.5)
        b = Scored(Rect(1, 0, 10, 10), 0.5)
        assert nms([a, b], 0.3) == [a]
        assert nms([b, a], 0.3) == [b]

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            nms([], iou_thresh=1.5)
        with pytest.raises(ValueError):
            nms([], iou_thresh=-0.1)

    def test_output_is_subset_in_score_order(self):
        rng = np.random.default_rng(11)
        items = [Scored(random_rect(rng), float(rng.uniform())) for _ in range(30)]
        kept = nms(items, 0.3)
        assert all(k in items for k in kept)
        scores = [k.score for k in kept]
        assert scores == sorted(scores, reverse=True)

    def test_greedy_discard_property(self):
        # every discarded box overlaps some earlier-kept box above the threshold
        rng = np.random.default_rng(13)
        for _ in range(50):
            items = [Scored(random_rect(rng), float(rng.uniform())) for _ in range(15)]
            kept = nms(items, 0.3)
            kept_ids = {id(k) for k in kept}
            for it in items:
                if id(it) in kept_ids:
                    continue
                higher = [k for k in kept if k.score >= it.score]
                assert any(iou(it.box, k.box) > 0.3 for k in higher)

    def test_matches_reference_on_random_sets(self):
        rng = np.random.default_rng(17)
        for _ in range(1000):
            n = int(rng.integers(0, 21))
            items = [
                Scored(random_rect(rng), float(rng.uniform())) for _ in range(n)
            ]
            thresh = float(rng.uniform(0.1, 0.7))
            assert nms(items, thresh) == ref_nms(items, thresh)
