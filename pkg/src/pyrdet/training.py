"""Training: component clustering, sample extraction, SVM, mining, regression.

The linear SVM minimizes 0.5*||w||^2 + cost * sum_i hinge(y_i (w.x_i + b))
with an unpenalized bias. It is solved on the equality-constrained dual
(box constraints plus y'a = 0) with accelerated projected gradient steps; the
bias is recovered by exact 1-D minimization and convergence is certified by
the relative duality gap, so the returned objective is within convergence_tol
of the true optimum. The solver is deterministic and uses no RNG.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .boxes import Rect, iou
from .config import TrainConfig, config_digest as _config_digest  # noqa: F401
from .errors import (
    DegenerateClusterError,
    DegenerateTrainingError,
    SamplingExhaustedError,
)
from .features import FeaturePyramid, Stage
from .model import (
    BBoxRegressor,
    DpmModel,
    RootFilter,
    regression_targets,
    score_level,
    window_feature,
)
from .pyramid import LevelGeometry, image_box_to_level_box, level_box_to_image_box

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SampleSource:
    """Where a training sample's window came from."""

    image_id: str
    level_index: int
    row: int
    col: int
    h: int
    w: int


@dataclass(frozen=True)
class TrainingSample:
    feature: np.ndarray  # (h*w*C,) float32, channel-major window layout
    label: int  # +1 or -1
    source: SampleSource
    component_id: int

    def __post_init__(self) -> None:
        if self.label not in (-1, 1):
            raise ValueError(f"label must be +1 or -1, got {self.label}")


# ----------------------------------------------------------------------------
# Component assignment (1-D k-means over log aspect ratios)
# ----------------------------------------------------------------------------


def _kmeans_1d(
    values: np.ndarray, k: int, rng: np.random.Generator, restarts: int = 20
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded Lloyd's algorithm on scalars; best of `restarts` inits."""
    unique = np.unique(values)
    best_labels: np.ndarray | None = None
    best_centers: np.ndarray | None = None
    best_inertia = math.inf
    for _ in range(restarts):
        centers = np.sort(rng.choice(unique, size=k, replace=False))
        for _ in range(200):
            dist = np.abs(values[:, None] - centers[None, :])
            labels = np.argmin(dist, axis=1)
            new_centers = centers.copy()
            for c in range(k):
                members = values[labels == c]
                if members.size:
                    new_centers[c] = members.mean()
                else:
                    # Re-seed an empty cluster at the point farthest from its center.
                    far = int(np.argmax(np.abs(values - centers[labels])))
                    new_centers[c] = values[far]
            if np.array_equal(new_centers, centers):
                break
            centers = new_centers
        inertia = float(np.sum((values - centers[labels]) ** 2))
        if inertia < best_inertia:
            best_inertia = inertia
            best_labels = labels
            best_centers = centers
    assert best_labels is not None and best_centers is not None
    # Relabel so component ids run by ascending center value.
    order = np.argsort(best_centers, kind="stable")
    remap = np.empty(k, dtype=np.intp)
    remap[order] = np.arange(k)
    return remap[best_labels], best_centers[order]


def assign_components(
    boxes: Sequence[Rect],
    n_components: int,
    filter_scaledown: int = 8,
    rng_seed: int = 0,
    restarts: int = 20,
) -> tuple[list[int], list[tuple[int, int]]]:
    """Cluster boxes into components by log aspect ratio; size each filter.

    Filter cell dims are the per-component median box height/width divided by
    ``filter_scaledown``, rounded to the nearest cell, clamped to >= 3 cells.
    Raises DegenerateClusterError when there are fewer distinct aspect ratios
    than requested components.
    """
    if not boxes:
        raise ValueError("assign_components needs at least one box")
    if n_components < 1:
        raise ValueError(f"n_components must be >= 1, got {n_components}")
    for b in boxes:
        if b.w <= 0 or b.h <= 0:
            raise ValueError(f"boxes must have positive dims, got {b}")
    ratios = np.array([math.log(b.w / b.h) for b in boxes])
    distinct = np.unique(ratios).size
    if n_components > distinct:
        raise DegenerateClusterError(
            f"{n_components} components requested but only {distinct} distinct aspect ratios"
        )
    if n_components == 1:
        labels = np.zeros(len(boxes), dtype=np.intp)
    else:
        rng = np.random.default_rng(rng_seed)
        labels, _ = _kmeans_1d(ratios, n_components, rng, restarts)
    shapes: list[tuple[int, int]] = []
    for c in range(n_components):
        members = [b for b, lab in zip(boxes, labels) if lab == c]
        med_h = float(np.median([b.h for b in members]))
        med_w = float(np.median([b.w for b in members]))
        h = max(3, int(math.floor(med_h / filter_scaledown + 0.5)))
        w = max(3, int(math.floor(med_w / filter_scaledown + 0.5)))
        shapes.append((h, w))
    return [int(x) for x in labels], shapes


# ----------------------------------------------------------------------------
# Level selection and sample extraction
# ----------------------------------------------------------------------------


def argmin_shape_cost(
    level_dims: Sequence[tuple[float, float]], filter_shape: tuple[int, int]
) -> int:
    """Position of the (rows, cols) pair closest to the filter in L1 cost.

    Cost is |rows - h| + |cols - w|; ties resolve to the earliest position.
    """
    h, w = filter_shape
    best_pos = 0
    best_cost = math.inf
    for pos, (by, bx) in enumerate(level_dims):
        cost = abs(by - h) + abs(bx - w)
        if cost < best_cost:
            best_cost = cost
            best_pos = pos
    return best_pos


def select_level(
    gt_box: Rect, geometries: Sequence[LevelGeometry], filter_shape: tuple[int, int]
) -> int:
    """Pick the level whose cell-space box dims best match the filter.

    The box is mapped into fractional feature cells at every level; the level
    minimizing |box_rows - h| + |box_cols - w| wins, ties going to the
    smaller level index.
    """
    if not geometries:
        raise ValueError("select_level needs at least one level geometry")
    ordered = sorted(geometries, key=lambda g: g.level_index)
    dims = []
    for geom in ordered:
        lb = image_box_to_level_box(gt_box, geom)
        dims.append((lb.h, lb.w))
    return ordered[argmin_shape_cost(dims, filter_shape)].level_index


def extract_positive(
    fp: FeaturePyramid,
    gt_box: Rect,
    filter_shape: tuple[int, int],
    component_id: int = 0,
) -> TrainingSample | None:
    """Cut the positive window for one ground-truth box.

    The box picks its level, its center snaps to the containing feature cell,
    and an h x w cell window centered there (shifted inward at borders) is
    flattened channel-major. Returns None (logged) when the chosen level is
    too small for the filter.
    """
    h, w = filter_shape
    level_index = select_level(gt_box, [g for g, _ in fp.levels], filter_shape)
    geom, fm = fp.level(level_index)
    if fm.rows < h or fm.cols < w:
        logger.warning(
            "skipping positive for %s: level %d grid %dx%d smaller than filter %dx%d",
            fp.image_id, level_index, fm.rows, fm.cols, h, w,
        )
        return None
    lb = image_box_to_level_box(gt_box, geom)
    j = int(math.floor(lb.y + lb.h / 2.0))
    k = int(math.floor(lb.x + lb.w / 2.0))
    r0 = min(max(j - (h - 1) // 2, 0), fm.rows - h)
    c0 = min(max(k - (w - 1) // 2, 0), fm.cols - w)
    feature = window_feature(fm, r0, c0, h, w)
    return TrainingSample(
        feature=feature,
        label=1,
        source=SampleSource(fp.image_id, level_index, r0, c0, h, w),
        component_id=component_id,
    )


def sample_negatives(
    fp: FeaturePyramid,
    gt_boxes: Sequence[Rect],
    filter_shape: tuple[int, int],
    n: int,
    rng: np.random.Generator,
    neg_iou_max: float = 0.3,
    component_id: int = 0,
    attempt_factor: int = 50,
) -> list[TrainingSample]:
    """Draw up to n random negative windows from one image's pyramid.

    Each draw picks a level (uniform among levels the filter fits) and a cell
    rect (uniform); the window is kept when its image-space box has IOU below
    ``neg_iou_max`` against every ground-truth box. Up to attempt_factor * n
    draws are tried; finding none at all raises SamplingExhaustedError.
    """
    if n == 0:
        return []
    h, w = filter_shape
    candidates = [
        (geom, fm) for geom, fm in fp.levels if fm.rows >= h and fm.cols >= w
    ]
    if not candidates:
        raise SamplingExhaustedError(
            f"{fp.image_id}: no level can fit a {h}x{w} filter"
        )
    accepted: list[TrainingSample] = []
    for _ in range(attempt_factor * n):
        li = int(rng.integers(0, len(candidates)))
        geom, fm = candidates[li]
        r = int(rng.integers(0, fm.rows - h + 1))
        c = int(rng.integers(0, fm.cols - w + 1))
        box = level_box_to_image_box(Rect(float(c), float(r), float(w), float(h)), geom)
        if all(iou(box, g) < neg_iou_max for g in gt_boxes):
            accepted.append(
                TrainingSample(
                    feature=window_feature(fm, r, c, h, w),
                    label=-1,
                    source=SampleSource(fp.image_id, geom.level_index, r, c, h, w),
                    component_id=component_id,
                )
            )
            if len(accepted) == n:
                break
    if not accepted:
        raise SamplingExhaustedError(
            f"{fp.image_id}: no negative window found in {attempt_factor * n} draws"
        )
    return accepted


# ----------------------------------------------------------------------------
# Linear SVM
# ----------------------------------------------------------------------------


def svm_objective(
    w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, cost: float
) -> float:
    """Primal objective 0.5*||w||^2 + cost * sum hinge."""
    margins = 1.0 - y * (X @ w + b)
    return 0.5 * float(w @ w) + cost * float(np.sum(np.maximum(margins, 0.0)))


def _optimal_bias(s: np.ndarray, y: np.ndarray) -> float:
    """Exact minimizer over b of sum_i hinge(y_i (s_i + b)).

    The hinge sum is convex piecewise-linear in b with breakpoints
    beta_i = y_i - s_i, so some breakpoint attains the minimum; all are
    evaluated with prefix sums and the smallest argmin wins.
    """
    beta = y - s
    bp = np.sort(beta[y > 0])
    bn = np.sort(beta[y < 0])
    cand = np.unique(beta)
    # positives contribute sum over {bp > b} of (bp - b)
    cum_p = np.concatenate(([0.0], np.cumsum(bp)))
    idx_p = np.searchsorted(bp, cand, side="right")
    pos_part = (cum_p[-1] - cum_p[idx_p]) - cand * (bp.size - idx_p)
    # negatives contribute sum over {bn < b} of (b - bn)
    cum_n = np.concatenate(([0.0], np.cumsum(bn)))
    idx_n = np.searchsorted(bn, cand, side="left")
    neg_part = cand * idx_n - cum_n[idx_n]
    return float(cand[int(np.argmin(pos_part + neg_part))])


def _project_dual(v: np.ndarray, y: np.ndarray, cost: float) -> np.ndarray:
    """Euclidean projection onto {0 <= a <= cost} intersect {y'a = 0}.

    The projection is clip(v + mu*y, 0, cost) for the mu solving
    y' clip(v + mu*y, 0, cost) = 0; that function is monotone in mu, so a
    fixed-count bisection pins mu to float precision.
    """
    span = cost + float(np.max(np.abs(v))) + 1.0
    lo, hi = -span, span
    for _ in range(90):
        mid = 0.5 * (lo + hi)
        val = float(y @ np.clip(v + mid * y, 0.0, cost))
        if val > 0.0:
            hi = mid
        else:
            lo = mid
    return np.clip(v + 0.5 * (lo + hi) * y, 0.0, cost)


def fit_linear_svm(
    X: np.ndarray,
    y: np.ndarray,
    cost: float,
    tol: float = 1e-3,
    max_iter: int = 10_000,
) -> tuple[np.ndarray, float, dict]:
    """Fit the hinge-loss SVM; returns (w, b, info).

    Accelerated projected gradient on the dual with gradient-based restarts;
    stops when the relative duality gap drops to ``tol``. info records the
    primal/dual objectives, the certified gap, and iteration count.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError(f"bad shapes: X {X.shape}, y {y.shape}")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise DegenerateTrainingError("training data must contain both classes")
    if cost <= 0:
        raise ValueError(f"cost must be > 0, got {cost}")

    n = X.shape[0]
    Z = X * y[:, None]

    # Lipschitz constant of the dual gradient: top eigenvalue of Z Z'.
    v = np.ones(n) / math.sqrt(n)
    lam = 0.0
    for _ in range(60):
        av = Z @ (Z.T @ v)
        lam = float(np.linalg.norm(av))
        if lam <= 1e-30:
            break
        v = av / lam
    lip = max(lam * 1.01, 1e-12)

    alpha = np.zeros(n)
    momentum = alpha.copy()
    t = 1.0
    best: tuple[float, np.ndarray, float] | None = None  # (objective, w, b)
    gap = math.inf
    iters = 0
    for k in range(1, max_iter + 1):
        iters = k
        grad = Z @ (Z.T @ momentum) - 1.0
        new_alpha = _project_dual(momentum - grad / lip, y, cost)
        if float(grad @ (new_alpha - alpha)) > 0.0:
            # Momentum points uphill: restart acceleration.
            t = 1.0
            momentum = new_alpha.copy()
        else:
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            momentum = new_alpha + ((t - 1.0) / t_next) * (new_alpha - alpha)
            t = t_next
        alpha = new_alpha
        if k % 20 == 0 or k == max_iter:
            w = Z.T @ alpha
            b = _optimal_bias(X @ w, y)
            primal = svm_objective(w, b, X, y, cost)
            dual = float(np.sum(alpha)) - 0.5 * float(w @ w)
            if best is None or primal < best[0]:
                best = (primal, w, b)
            gap = best[0] - dual
            if gap <= tol * max(1.0, abs(best[0])):
                break
    assert best is not None
    primal, w, b = best
    return (
        w,
        b,
        {
            "objective": primal,
            "dual": primal - gap,
            "gap": gap,
            "iterations": iters,
            "converged": gap <= tol * max(1.0, abs(primal)),
        },
    )


def train_svm(
    samples: Sequence[TrainingSample], cfg: TrainConfig
) -> tuple[np.ndarray, float]:
    """Train on labeled window features; returns (weights, bias)."""
    if not samples:
        raise DegenerateTrainingError("no training samples")
    labels = {s.label for s in samples}
    if labels != {-1, 1}:
        raise DegenerateTrainingError(f"need both classes, got labels {sorted(labels)}")
    X = np.stack([s.feature for s in samples]).astype(np.float64)
    y = np.array([s.label for s in samples], dtype=np.float64)
    w, b, _ = fit_linear_svm(X, y, cost=cfg.svm_cost, tol=cfg.convergence_tol)
    return w, b


# ----------------------------------------------------------------------------
# Hard negative mining
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainImage:
    """One training image: its norm5 pyramid, truth boxes, component labels."""

    fp: FeaturePyramid
    gt_boxes: tuple[Rect, ...]
    gt_components: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.gt_boxes) != len(self.gt_components):
            raise ValueError("gt_boxes and gt_components must align")


def _sample_score(filt: RootFilter, sample: TrainingSample) -> float:
    return float(
        filt.weights.ravel().astype(np.float64) @ sample.feature.astype(np.float64)
        + filt.bias
    )


def hard_negative_mine(
    images: Sequence[TrainImage],
    component_shapes: Sequence[tuple[int, int]],
    cfg: TrainConfig,
    model_digest: str | None = None,
    extractor_descriptor: str | None = None,
) -> DpmModel:
    """Train root filters with bootstrapped hard negatives.

    Per component: seed a cache with positives plus random negatives, then for
    up to mining_rounds: train, rescan every image for uncached negative
    windows scoring above hard_threshold, add them, prune cached negatives
    scoring below easy_prune_threshold, and stop early once a full scan adds
    nothing. Mining statistics (rounds, additions, cached negative window
    keys, convergence) land in the model's training_meta.
    """
    if not images:
        raise DegenerateTrainingError("no training images")
    for img in images:
        if img.fp.stage != Stage.NORM5:
            raise DegenerateTrainingError(
                f"{img.fp.image_id}: mining expects norm5 features, got {img.fp.stage.label}"
            )
    channels = images[0].fp.channels
    digest = model_digest or images[0].fp.config_digest or "0" * 64
    descriptor = extractor_descriptor or images[0].fp.extractor_descriptor or "unknown"
    rng = np.random.default_rng(cfg.rng_seed)

    filters: list[RootFilter] = []
    meta: dict = {"components": []}
    for comp_id, (h, w) in enumerate(component_shapes):
        positives: list[TrainingSample] = []
        for img in images:
            for box, comp in zip(img.gt_boxes, img.gt_components):
                if comp == comp_id:
                    s = extract_positive(img.fp, box, (h, w), component_id=comp_id)
                    if s is not None:
                        positives.append(s)
        if not positives:
            raise DegenerateTrainingError(f"component {comp_id}: no usable positives")
        # Random draws sample with replacement; keep one sample per window.
        negatives: list[TrainingSample] = []
        neg_keys: set[tuple[str, int, int, int]] = set()
        for img in images:
            for s in sample_negatives(
                img.fp,
                img.gt_boxes,
                (h, w),
                cfg.negatives_per_image,
                rng,
                neg_iou_max=cfg.neg_iou_max,
                component_id=comp_id,
            ):
                key = (s.source.image_id, s.source.level_index, s.source.row, s.source.col)
                if key in neg_keys:
                    continue
                neg_keys.add(key)
                negatives.append(s)
        if not negatives:
            raise DegenerateTrainingError(f"component {comp_id}: no negatives sampled")
        cache = positives + negatives

        filt: RootFilter | None = None
        added_per_round: list[int] = []
        objective_per_round: list[float] = []
        converged = False
        for _ in range(cfg.mining_rounds):
            wv, bv = train_svm(cache, cfg)
            objective_per_round.append(
                svm_objective(
                    wv,
                    bv,
                    np.stack([s.feature for s in cache]).astype(np.float64),
                    np.array([s.label for s in cache], dtype=np.float64),
                    cfg.svm_cost,
                )
            )
            filt = RootFilter(
                component_id=comp_id,
                weights=wv.reshape(channels, h, w).astype(np.float32),
                bias=float(bv),
            )
            added = 0
            for img in images:
                for geom, fm in img.fp.levels:
                    scores = score_level(fm, filt)
                    if scores.size == 0:
                        continue
                    rs, cs = np.nonzero(scores > cfg.hard_threshold)
                    for r, c in zip(rs.tolist(), cs.tolist()):
                        key = (img.fp.image_id, geom.level_index, r, c)
                        if key in neg_keys:
                            continue
                        box = level_box_to_image_box(
                            Rect(float(c), float(r), float(w), float(h)), geom
                        )
                        if any(iou(box, g) >= cfg.neg_iou_max for g in img.gt_boxes):
                            continue
                        cache.append(
                            TrainingSample(
                                feature=window_feature(fm, r, c, h, w),
                                label=-1,
                                source=SampleSource(
                                    img.fp.image_id, geom.level_index, r, c, h, w
                                ),
                                component_id=comp_id,
                            )
                        )
                        neg_keys.add(key)
                        added += 1
            added_per_round.append(added)
            # Drop easy negatives; fresh additions score above hard_threshold
            # and so always survive.
            cache = [
                s
                for s in cache
                if s.label == 1 or _sample_score(filt, s) >= cfg.easy_prune_threshold
            ]
            neg_keys = {
                (s.source.image_id, s.source.level_index, s.source.row, s.source.col)
                for s in cache
                if s.label == -1
            }
            if added == 0:
                converged = True
                break
        assert filt is not None
        filters.append(filt)
        meta["components"].append(
            {
                "component_id": comp_id,
                "filter_shape": (h, w),
                "positives": len(positives),
                "rounds": len(added_per_round),
                "added_per_round": added_per_round,
                "objective_per_round": objective_per_round,
                "converged": converged,
                "cache_size": len(cache),
                "negative_keys": sorted(neg_keys),
            }
        )
        logger.info(
            "component %d: %d rounds, converged=%s, cache=%d",
            comp_id, len(added_per_round), converged, len(cache),
        )
    return DpmModel(
        components=tuple(filters),
        channels=channels,
        config_digest=digest,
        extractor_descriptor=descriptor,
        training_meta=meta,
    )


# ----------------------------------------------------------------------------
# Box regression
# ----------------------------------------------------------------------------


def train_bbox_regressor(
    pairs: Sequence[tuple[np.ndarray, Rect, Rect]],
    ridge_lambda: float = 1000.0,
    component_id: int = 0,
) -> BBoxRegressor:
    """Ridge-fit window features to box-correction targets.

    ``pairs`` holds (window feature, detected box, ground-truth box). Solved
    in closed form by the normal equations with the intercept left
    unpenalized; ridge_lambda == 0 falls back to least squares.
    """
    if not pairs:
        raise ValueError("train_bbox_regressor needs at least one pair")
    if ridge_lambda < 0:
        raise ValueError(f"ridge_lambda must be >= 0, got {ridge_lambda}")
    X = np.stack([p[0] for p in pairs]).astype(np.float64)
    T = np.stack([regression_targets(det, gt) for _, det, gt in pairs])
    n, d = X.shape
    A = np.hstack([X, np.ones((n, 1))])
    if ridge_lambda > 0:
        reg = np.eye(d + 1) * ridge_lambda
        reg[d, d] = 0.0  # intercept unpenalized
        coef = np.linalg.solve(A.T @ A + reg, A.T @ T)
    else:
        coef, *_ = np.linalg.lstsq(A, T, rcond=None)
    return BBoxRegressor(
        weights=coef[:d].T.copy(),
        intercepts=coef[d].copy(),
        ridge_lambda=float(ridge_lambda),
        component_id=component_id,
    )
