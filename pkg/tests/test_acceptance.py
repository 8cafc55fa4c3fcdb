"""Acceptance suite: one test per top-level contract, tolerances and budgets inline.

Each test prints nothing on success; the -v line is the per-criterion verdict.
Budgets are wall-clock and asserted inside the test body.
"""
import dataclasses
import math
import time
from types import SimpleNamespace

import numpy as np
import pytest
from cvxopt import matrix, solvers

from pyrdet import (
    Annotation,
    FeatureMap,
    PyramidConfig,
    Rect,
    RootFilter,
    SeededConvFeatures,
    TrainConfig,
    TrainImage,
    assign_components,
    build_image_pyramid,
    config_digest,
    detect,
    evaluate,
    extract_features,
    extract_positive,
    fit_linear_svm,
    hard_negative_mine,
    iou,
    level_box_to_image_box,
    match_detections,
    max_filter_pyramid,
    nms,
    regression_targets,
    score_level,
    select_level,
    train_bbox_regressor,
    window_feature,
    zscore_normalize,
)
from pyrdet.pyramid import LevelGeometry
from pyrdet.synthetic import make_corpus

solvers.options["show_progress"] = False

SQRT2 = math.sqrt(2.0)


class Budget:
    def __init__(self, seconds):
        self.seconds = seconds

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        if exc[0] is None:
            self.elapsed = time.perf_counter() - self.t0
            assert self.elapsed < self.seconds, (
                f"took {self.elapsed:.2f}s, budget {self.seconds}s"
            )
        return False


@pytest.fixture(scope="module")
def e2e():
    """Sixty synthetic images: train a one-component model on 40, hold out 20."""
    t0 = time.perf_counter()
    corpus = make_corpus(60, seed=0)
    pcfg = PyramidConfig(filter_scaledown=16)
    extractor = SeededConvFeatures(seed=0, channels=64, mid_channels=32)

    def norm5(image, image_id):
        fp = extract_features(build_image_pyramid(image, pcfg), extractor, image_id=image_id)
        return zscore_normalize(max_filter_pyramid(fp))[0]

    fps = [norm5(item.image, f"img{i:04d}") for i, item in enumerate(corpus)]
    train = list(zip(fps[:40], corpus[:40]))
    held_out = list(zip(fps[40:], corpus[40:]))

    _, shapes = assign_components([it.gt for _, it in train], 1, filter_scaledown=16)
    cfg = TrainConfig()
    images = [
        TrainImage(fp=fp, gt_boxes=(it.gt,), gt_components=(0,)) for fp, it in train
    ]
    model = hard_negative_mine(
        images,
        shapes,
        cfg,
        model_digest=config_digest(pcfg, extractor.descriptor),
        extractor_descriptor=extractor.descriptor,
    )

    pairs = []
    for fp, item in train:
        s = extract_positive(fp, item.gt, shapes[0], component_id=0)
        if s is None:
            continue
        geom, _ = fp.level(s.source.level_index)
        det_box = level_box_to_image_box(
            Rect(float(s.source.col), float(s.source.row), float(s.source.w), float(s.source.h)),
            geom,
        )
        pairs.append((s.feature, det_box, item.gt))
    regressor = train_bbox_regressor(pairs, ridge_lambda=1000.0, component_id=0)

    return SimpleNamespace(
        train_images=images,
        held_out=held_out,
        shapes=shapes,
        train_cfg=cfg,
        model=dataclasses.replace(model, regressors=(regressor,)),
        model_plain=model,
        build_seconds=time.perf_counter() - t0,
    )


def test_window_count_for_full_canvas_input():
    with Budget(1.0):
        img = np.zeros((1713, 1713, 3), dtype=np.uint8)
        pyr = build_image_pyramid(img)
        cells = sum(g.feature_dims[0] * g.feature_dims[1] for g in pyr.geometries)
    assert 20_000 <= cells <= 30_000, f"total feature cells {cells}"


def test_adjacent_level_ratio_is_sqrt2_within_rounding():
    rng = np.random.default_rng(0)
    with Budget(1.0):
        for _ in range(100):
            h = int(rng.integers(20, 600))
            w = int(rng.integers(20, 600))
            img = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
            pyr = build_image_pyramid(img)
            sizes = [lvl.image.shape[:2] for lvl in pyr.levels]
            for (h0, w0), (h1, w1) in zip(sizes, sizes[1:]):
                for cur, nxt in ((h0, h1), (w0, w1)):
                    if cur < 2:
                        continue  # 1-pixel floor clamp breaks the ratio
                    assert abs(nxt / SQRT2 - cur) < 1.0, (
                        f"{nxt}/sqrt2 vs {cur} on input {h}x{w}"
                    )


def test_normalized_features_have_unit_stats():
    rng = np.random.default_rng(1)
    extractor = SeededConvFeatures(seed=0, channels=8, mid_channels=6)
    with Budget(1.0):
        for h, w in [(330, 410), (256, 256)]:
            img = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
            conv = extract_features(build_image_pyramid(img), extractor, image_id="t")
            max5 = max_filter_pyramid(conv)
            norm5, _ = zscore_normalize(max5)
            for (geom, fm), (_, raw) in zip(norm5.levels, max5.levels):
                for c in range(fm.channels):
                    out = fm.data[c].astype(np.float64)
                    sigma = float(np.std(raw.data[c].astype(np.float64)))
                    if sigma <= 1e-6:
                        assert np.all(out == 0.0), f"level {geom.level_index} ch {c}"
                        continue
                    assert abs(out.mean()) < 1e-5, f"level {geom.level_index} ch {c}"
                    assert abs(np.std(out) - 1.0) < 1e-3, f"level {geom.level_index} ch {c}"
        # constant input: every channel constant at every level, output all zero
        flat = np.full((200, 200, 3), 77, dtype=np.uint8)
        conv = extract_features(build_image_pyramid(flat), extractor, image_id="c")
        norm5, _ = zscore_normalize(max_filter_pyramid(conv))
        for _, fm in norm5.levels:
            assert np.all(fm.data == 0.0)


def test_level_selection_matches_exhaustive_argmin():
    rng = np.random.default_rng(2)
    geoms = [
        LevelGeometry(level_index=i, scale=SQRT2 ** (i - 7), stride=16,
                      feature_dims=(64, 64))
        for i in range(1, 8)
    ]
    tie_geoms = [
        LevelGeometry(level_index=1, scale=1.0, stride=16, feature_dims=(64, 64)),
        LevelGeometry(level_index=2, scale=2.0, stride=16, feature_dims=(64, 64)),
    ]
    with Budget(1.0):
        for trial in range(1000):
            if trial % 20 == 0:
                # exact tie: 32px box is 2 cells at scale 1 and 4 at scale 2,
                # one cell short and one cell long of a 3x3 filter
                assert select_level(Rect(0, 0, 32, 32), tie_geoms, (3, 3)) == 1
                continue
            box = Rect(
                float(rng.uniform(0, 200)), float(rng.uniform(0, 200)),
                float(rng.uniform(10, 900)), float(rng.uniform(10, 900)),
            )
            shape = (int(rng.integers(3, 15)), int(rng.integers(3, 15)))
            best, best_cost = None, math.inf
            for g in geoms:
                cost = abs(box.h * g.scale / 16 - shape[0]) + abs(
                    box.w * g.scale / 16 - shape[1]
                )
                if cost < best_cost:
                    best, best_cost = g.level_index, cost
            assert select_level(box, geoms, shape) == best


def test_window_scoring_matches_naive_triple_loop():
    rng = np.random.default_rng(3)
    with Budget(5.0):
        for _ in range(100):
            c = int(rng.integers(1, 33))
            rows = int(rng.integers(1, 17))
            cols = int(rng.integers(1, 17))
            fh = int(rng.integers(1, rows + 1))
            fw = int(rng.integers(1, cols + 1))
            data = rng.normal(size=(c, rows, cols)).astype(np.float32)
            weights = rng.normal(size=(c, fh, fw)).astype(np.float32)
            bias = float(rng.normal())
            got = score_level(FeatureMap(data), RootFilter(0, weights, bias))
            want = np.zeros((rows - fh + 1, cols - fw + 1))
            for r in range(want.shape[0]):
                for cc in range(want.shape[1]):
                    acc = 0.0
                    for ch in range(c):
                        for dy in range(fh):
                            for dx in range(fw):
                                acc += float(weights[ch, dy, dx]) * float(
                                    data[ch, r + dy, cc + dx]
                                )
                    want[r, cc] = acc + bias
            assert np.allclose(got, want, rtol=1e-4, atol=1e-7)


def test_nms_and_iou_match_brute_force():
    class Scored:
        __slots__ = ("box", "score")

        def __init__(self, box, score):
            self.box = box
            self.score = score

    def ref_nms(dets, thresh):
        order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
        keep = []
        while order:
            best = order.pop(0)
            keep.append(best)
            order = [i for i in order if iou(dets[best].box, dets[i].box) <= thresh]
        return [dets[i] for i in keep]

    rng = np.random.default_rng(4)
    with Budget(2.0):
        # analytic cases, exact
        a = Rect(0, 0, 10, 10)
        assert iou(a, a) == 1.0
        assert iou(a, Rect(20, 20, 5, 5)) == 0.0
        assert iou(a, Rect(10, 0, 10, 10)) == 0.0
        assert iou(a, Rect(5, 0, 10, 10)) == pytest.approx(1 / 3)
        assert iou(Rect(0, 0, 4, 4), Rect(1, 1, 2, 2)) == pytest.approx(0.25)
        # suppression is strict: exactly-threshold overlap survives
        pair = [Scored(Rect(0, 0, 10, 15), 0.9), Scored(Rect(0, 5, 10, 15), 0.8)]
        assert iou(pair[0].box, pair[1].box) == pytest.approx(0.5)
        assert len(nms(pair, 0.5)) == 2
        assert len(nms(pair, 0.49)) == 1

        for _ in range(1000):
            n = int(rng.integers(0, 21))
            dets = [
                Scored(
                    Rect(float(rng.uniform(0, 80)), float(rng.uniform(0, 80)),
                         float(rng.uniform(1, 40)), float(rng.uniform(1, 40))),
                    float(rng.normal()),
                )
                for _ in range(n)
            ]
            got = nms(dets, 0.3)
            want = ref_nms(dets, 0.3)
            assert [id(d) for d in got] == [id(d) for d in want]


def test_svm_objective_within_one_percent_of_qp_reference():
    def qp_reference(X, y, cost):
        n = X.shape[0]
        Z = X * y[:, None]
        sol = solvers.qp(
            matrix(Z @ Z.T),
            matrix(-np.ones(n)),
            matrix(np.vstack([-np.eye(n), np.eye(n)])),
            matrix(np.concatenate([np.zeros(n), np.full(n, cost)])),
            matrix(y.reshape(1, -1)),
            matrix(np.zeros(1)),
        )
        assert sol["status"] == "optimal"
        return -sol["primal objective"]

    rng = np.random.default_rng(5)
    with Budget(30.0):
        first = None
        for trial in range(20):
            n, d = 50, 5
            X = rng.normal(size=(n, d))
            if trial % 2 == 0:
                y = np.sign(X @ rng.normal(size=d) + 0.1)
                y[y == 0] = 1.0
            else:
                y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
            ref = qp_reference(X, y, 0.01)
            w, b, info = fit_linear_svm(X, y, 0.01)
            assert info["objective"] == pytest.approx(ref, rel=0.01), f"trial {trial}"
            if trial == 0:
                first = (X, y, w.copy(), b)
        # rerun on the first problem: identical solver path, identical bits
        X, y, w0, b0 = first
        w1, b1, _ = fit_linear_svm(X, y, 0.01)
        assert np.array_equal(w0, w1) and b0 == b1


def test_mining_rescan_finds_no_missed_hard_negative(e2e):
    with Budget(120.0) as budget:
        comp = e2e.model_plain.training_meta["components"][0]
        assert comp["converged"], "mining did not converge; soundness not established"
        cached = set(map(tuple, comp["negative_keys"]))
        filt = e2e.model_plain.components[0]
        fh, fw = filt.shape
        wflat = filt.weights.ravel().astype(np.float64)
        thr = e2e.train_cfg.hard_threshold + 1e-3
        checked = 0
        for img in e2e.train_images:
            for geom, fm in img.fp.levels:
                if fm.rows < fh or fm.cols < fw:
                    continue
                for r in range(fm.rows - fh + 1):
                    for c in range(fm.cols - fw + 1):
                        score = (
                            float(wflat @ window_feature(fm, r, c, fh, fw).astype(np.float64))
                            + filt.bias
                        )
                        checked += 1
                        if score <= thr:
                            continue
                        key = (img.fp.image_id, geom.level_index, r, c)
                        box = level_box_to_image_box(
                            Rect(float(c), float(r), float(fw), float(fh)), geom
                        )
                        overlaps = any(
                            iou(box, g) >= e2e.train_cfg.neg_iou_max
                            for g in img.gt_boxes
                        )
                        assert key in cached or overlaps, (
                            f"window {key} scores {score:.4f} but was never cached"
                        )
        assert checked > 1000
    assert e2e.build_seconds + budget.elapsed < 120.0


def test_box_regression_recovers_exact_linear_targets():
    rng = np.random.default_rng(6)

    def rand_box():
        return Rect(float(rng.uniform(0, 100)), float(rng.uniform(0, 100)),
                    float(rng.uniform(10, 60)), float(rng.uniform(10, 60)))

    def apply_targets(det, t):
        cx = det.x + det.w / 2 + t[0] * det.w
        cy = det.y + det.h / 2 + t[1] * det.h
        w = det.w * math.exp(t[2])
        h = det.h * math.exp(t[3])
        return Rect(cx - w / 2, cy - h / 2, w, h)

    with Budget(1.0):
        box = rand_box()
        assert np.array_equal(regression_targets(box, box), np.zeros(4))

        W = rng.normal(scale=0.02, size=(4, 6))
        intercept = rng.normal(scale=0.02, size=4)
        pairs = []
        for _ in range(50):
            x = rng.normal(size=6)
            det_box = rand_box()
            pairs.append((x, det_box, apply_targets(det_box, W @ x + intercept)))
        reg = train_bbox_regressor(pairs, ridge_lambda=0.0)
        for x, det_box, gt in pairs:
            residual = reg.predict(x) - regression_targets(det_box, gt)
            assert float(np.max(np.abs(residual))) < 1e-6

        identity = [(rng.normal(size=6), b, b) for b in [rand_box() for _ in range(8)]]
        reg0 = train_bbox_regressor(identity, ridge_lambda=1000.0)
        assert np.allclose(reg0.predict(rng.normal(size=6)), 0.0, atol=1e-8)


def test_end_to_end_synthetic_corpus(e2e):
    with Budget(300.0) as budget:
        annotations = [
            Annotation(fp.image_id, item.gt) for fp, item in e2e.held_out
        ]

        def run(model):
            dets = []
            for fp, _ in e2e.held_out:
                dets.extend(detect(fp, model, threshold=-1.0))
            return dets

        refined = run(e2e.model)
        plain = run(e2e.model_plain)

        ap = evaluate(refined, annotations, protocol="discrete", iou_min=0.5).ap
        assert ap >= 0.9, f"held-out AP {ap:.4f}"

        def mean_matched_iou(dets):
            pairs = match_detections(dets, annotations, iou_min=0.5).matched
            assert pairs, "no matched detections"
            return float(np.mean([p.iou for p in pairs]))

        gain = mean_matched_iou(refined) - mean_matched_iou(plain)
        assert gain >= 0.02, f"regression IOU gain {gain:.4f}"
    assert e2e.build_seconds + budget.elapsed < 300.0


def test_eval_protocol_pair():
    def det(image_id, x, y, w, h, score):
        from pyrdet import Detection

        return Detection(image_id, Rect(x, y, w, h), score, 0, 1)

    # hand case: TP 0.9, FP 0.8, TP 0.7 over two ground truths
    anns = [Annotation("a", Rect(0, 0, 10, 10)), Annotation("a", Rect(100, 100, 10, 10))]
    dets = [
        det("a", 0, 0, 10, 10, 0.9),
        det("a", 50, 50, 10, 10, 0.8),
        det("a", 100, 100, 10, 10, 0.7),
    ]
    ap = evaluate(dets, anns, protocol="discrete").ap
    assert ap == pytest.approx(5 / 6, abs=1e-6)

    rng = np.random.default_rng(7)
    for _ in range(100):
        anns, dets = [], []
        for img in range(3):
            iid = f"im{img}"
            for g in range(int(rng.integers(1, 4))):
                x, y = 60.0 * g, 60.0 * img
                anns.append(Annotation(iid, Rect(x, y, 40, 40)))
                if rng.random() < 0.8:
                    dx, dy = rng.uniform(-6, 6, size=2)
                    dets.append(det(iid, x + dx, y + dy, 40 + rng.uniform(-5, 5), 40,
                                    float(rng.random())))
            for _ in range(int(rng.integers(0, 4))):
                dets.append(det(iid, 300 + rng.uniform(0, 50), 300 + rng.uniform(0, 50),
                                30, 30, float(rng.random())))
        cont = evaluate(dets, anns, protocol="continuous").ap
        disc = evaluate(dets, anns, protocol="discrete").ap
        assert cont <= disc + 1e-9
