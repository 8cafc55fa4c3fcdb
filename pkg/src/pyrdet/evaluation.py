"""Detection evaluation: greedy matching, credited sweeps, curves, and AP.

Detections are matched once, greedily in descending score order, each taking
the unmatched same-image ground truth of highest IOU when that IOU clears
``iou_min``. Credits are 1 per match under the discrete protocol or the match
IOU under the continuous protocol; threshold sweeps then produce
precision/recall, ROC (TPR vs false-positive count), and TPR vs
false-positives-per-image curves, with average precision read off the
precision envelope.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .annotations import Annotation
from .boxes import Rect, iou
from .model import Detection

PROTOCOLS = ("discrete", "continuous")


@dataclass(frozen=True)
class MatchedPair:
    detection: Detection
    annotation: Annotation
    iou: float


@dataclass(frozen=True)
class ImageMatches:
    matched: tuple[MatchedPair, ...]
    false_positives: tuple[Detection, ...]
    unmatched_gts: tuple[Annotation, ...]


@dataclass(frozen=True)
class MatchResult:
    per_image: dict[str, ImageMatches]
    iou_min: float

    @property
    def matched(self) -> list[MatchedPair]:
        return [m for im in self.per_image.values() for m in im.matched]

    @property
    def false_positives(self) -> list[Detection]:
        return [d for im in self.per_image.values() for d in im.false_positives]

    @property
    def unmatched_gts(self) -> list[Annotation]:
        return [g for im in self.per_image.values() for g in im.unmatched_gts]


def match_detections(
    detections: Sequence[Detection],
    annotations: Sequence[Annotation],
    iou_min: float = 0.5,
) -> MatchResult:
    """Greedy one-to-one matching of detections to same-image ground truth.

    Detections are visited by descending score (ties keep input order; the
    sort is defensive, pre-sorted input changes nothing). Each takes the
    unmatched gt with the highest IOU if that IOU >= iou_min, else counts as
    a false positive. Equal-IOU ties go to the earlier annotation.
    """
    if not 0.0 < iou_min <= 1.0:
        raise ValueError(f"iou_min must be in (0, 1], got {iou_min}")
    gts_by_image: dict[str, list[Annotation]] = {}
    for a in annotations:
        gts_by_image.setdefault(a.image_id, []).append(a)
    dets_by_image: dict[str, list[Detection]] = {}
    for d in sorted(detections, key=lambda d: -d.score):
        dets_by_image.setdefault(d.image_id, []).append(d)

    per_image: dict[str, ImageMatches] = {}
    for image_id in sorted(set(gts_by_image) | set(dets_by_image)):
        gts = gts_by_image.get(image_id, [])
        dets = dets_by_image.get(image_id, [])
        taken = [False] * len(gts)
        matched: list[MatchedPair] = []
        fps: list[Detection] = []
        for det in dets:
            best_i = -1
            best_iou = 0.0
            for i, gt in enumerate(gts):
                if taken[i]:
                    continue
                v = iou(det.box, gt.rect)
                if v > best_iou:
                    best_iou = v
                    best_i = i
            if best_i >= 0 and best_iou >= iou_min:
                taken[best_i] = True
                matched.append(MatchedPair(det, gts[best_i], best_iou))
            else:
                fps.append(det)
        unmatched = tuple(g for g, t in zip(gts, taken) if not t)
        per_image[image_id] = ImageMatches(tuple(matched), tuple(fps), unmatched)
    return MatchResult(per_image=per_image, iou_min=iou_min)


@dataclass(frozen=True)
class ScoredDetection:
    """One detection with its sweep credit; matched is the discrete verdict."""

    detection: Detection
    credit: float
    matched: bool

    @property
    def score(self) -> float:
        return self.detection.score


def score_matches(result: MatchResult, protocol: str) -> list[ScoredDetection]:
    """Per-detection credit under a protocol: 1 per match, or the match IOU."""
    if protocol not in PROTOCOLS:
        raise ValueError(f"protocol must be one of {PROTOCOLS}, got {protocol!r}")
    out: list[ScoredDetection] = []
    for im in result.per_image.values():
        for pair in im.matched:
            credit = 1.0 if protocol == "discrete" else pair.iou
            out.append(ScoredDetection(pair.detection, credit, True))
        for det in im.false_positives:
            out.append(ScoredDetection(det, 0.0, False))
    return out


@dataclass(frozen=True)
class Curve:
    """Sweep curve: (threshold, x, y) points, thresholds strictly decreasing."""

    kind: str
    points: tuple[tuple[float, float, float], ...]


@dataclass(frozen=True)
class CurveSet:
    pr: Curve
    roc: Curve
    tpr_fppi: Curve
    ap: float
    protocol: str


def _precision_envelope_ap(recalls: np.ndarray, precisions: np.ndarray) -> float:
    """Area under precision/recall using the all-points precision envelope."""
    order = np.argsort(recalls, kind="stable")
    r = recalls[order]
    p = precisions[order]
    # envelope: best precision at or beyond each recall
    env = np.maximum.accumulate(p[::-1])[::-1]
    ap = 0.0
    prev_r = 0.0
    for ri, pi in zip(r, env):
        if ri > prev_r:
            ap += (ri - prev_r) * pi
            prev_r = ri
    return ap


def sweep_curves(
    scored: Sequence[ScoredDetection],
    total_gts: int,
    total_images: int,
    protocol: str,
) -> CurveSet:
    """Sweep the threshold over distinct scores (descending) and build curves.

    At each threshold t, detections scoring >= t are kept. Precision is the
    credit sum over kept count, recall/TPR the credit sum over total_gts, and
    the false-positive count is the kept detections that are not matches.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"protocol must be one of {PROTOCOLS}, got {protocol!r}")
    if total_gts < 1:
        raise ValueError(f"total_gts must be >= 1, got {total_gts}")
    if total_images < 1:
        raise ValueError(f"total_images must be >= 1, got {total_images}")

    ordered = sorted(scored, key=lambda s: -s.score)
    scores = np.array([s.score for s in ordered])
    credits = np.array([s.credit for s in ordered])
    matched = np.array([s.matched for s in ordered], dtype=bool)
    roc_kind = f"ROC-{protocol}"
    if len(ordered) == 0:
        empty = ()
        return CurveSet(
            pr=Curve("PR", empty),
            roc=Curve(roc_kind, empty),
            tpr_fppi=Curve("TPR-FPPI", empty),
            ap=0.0,
            protocol=protocol,
        )

    credit_cum = np.cumsum(credits)
    match_cum = np.cumsum(matched)
    kept = np.arange(1, len(ordered) + 1)
    # last position of each distinct score = the cut containing all >= t
    is_last = np.ones(len(ordered), dtype=bool)
    is_last[:-1] = scores[:-1] != scores[1:]
    cuts = np.nonzero(is_last)[0]

    thresholds = scores[cuts]
    precision = credit_cum[cuts] / kept[cuts]
    recall = credit_cum[cuts] / total_gts
    fp_count = kept[cuts] - match_cum[cuts]
    fppi = fp_count / total_images

    pr_points = tuple(zip(thresholds.tolist(), recall.tolist(), precision.tolist()))
    roc_points = tuple(
        zip(thresholds.tolist(), fp_count.astype(float).tolist(), recall.tolist())
    )
    fppi_points = tuple(zip(thresholds.tolist(), fppi.tolist(), recall.tolist()))
    ap = _precision_envelope_ap(recall, precision)
    return CurveSet(
        pr=Curve("PR", pr_points),
        roc=Curve(roc_kind, roc_points),
        tpr_fppi=Curve("TPR-FPPI", fppi_points),
        ap=ap,
        protocol=protocol,
    )


def evaluate(
    detections: Sequence[Detection],
    annotations: Sequence[Annotation],
    protocol: str = "discrete",
    iou_min: float = 0.5,
    total_images: int | None = None,
) -> CurveSet:
    """Match, credit, and sweep in one call."""
    if not annotations:
        raise ValueError("evaluation needs at least one ground-truth annotation")
    result = match_detections(detections, annotations, iou_min=iou_min)
    scored = score_matches(result, protocol)
    if total_images is None:
        total_images = len({a.image_id for a in annotations} | {d.image_id for d in detections})
    return sweep_curves(scored, len(annotations), total_images, protocol)


# ----------------------------------------------------------------------------
# Text formats
# ----------------------------------------------------------------------------

_AXES = {
    "PR": ("recall", "precision"),
    "ROC-discrete": ("false_positives", "tpr"),
    "ROC-continuous": ("false_positives", "tpr"),
    "TPR-FPPI": ("fppi", "tpr"),
}


def write_detections(
    path: str | Path, detections: Iterable[Detection], header: str | None = None
) -> None:
    """Write ``image_id,x,y,w,h,score,component`` lines with a '#' header."""
    lines = []
    if header:
        lines.append(f"# {header}")
    lines.append("# image_id,x,y,w,h,score,component")
    for d in detections:
        lines.append(
            f"{d.image_id},{d.box.x:.4f},{d.box.y:.4f},{d.box.w:.4f},{d.box.h:.4f},"
            f"{d.score:.6f},{d.component_id}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_detections(path: str | Path) -> list[Detection]:
    out: list[Detection] = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = [p.strip() for p in stripped.split(",")]
        if len(parts) != 7:
            raise ValueError(f"{path}:{lineno}: expected 7 fields, got {len(parts)}")
        try:
            x, y, w, h, score = (float(p) for p in parts[1:6])
            component = int(parts[6])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: malformed detection line: {exc}") from exc
        out.append(
            Detection(
                image_id=parts[0],
                box=Rect(x, y, w, h),
                score=score,
                component_id=component,
                level_index=0,
            )
        )
    return out


def write_curve_csv(path: str | Path, curve: Curve, header: str | None = None) -> None:
    """CSV with a header row naming the axis semantics for the curve kind."""
    x_name, y_name = _AXES[curve.kind]
    lines = []
    if header:
        lines.append(f"# {header}")
    lines.append(f"threshold,{x_name},{y_name}")
    for t, x, y in curve.points:
        lines.append(f"{t:.6f},{x:.6f},{y:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
