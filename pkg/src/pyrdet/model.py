"""Root-filter models: scoring, detection, box regression, and model files.

Scoring is a valid (unpadded) cross-correlation of each root filter with a
normalized feature map plus a bias; detection thresholds the score maps over
all (level, component) pairs, maps hits to input-image boxes, applies greedy
NMS jointly across components, then box regression when the model carries a
regressor for the component.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np

from .boxes import Rect, nms
from .errors import DataError, IncompatibilityError, PipelineOrderError
from .features import FeatureMap, FeaturePyramid, Stage
from .pyramid import level_box_to_image_box

MODEL_MAGIC = b"DPMF"
MODEL_VERSION = 1


class ModelFormatError(ValueError):
    """Model file failed to parse."""


@dataclass(frozen=True)
class RootFilter:
    """One component's linear template over (channels, h, w) cells plus bias."""

    component_id: int
    weights: np.ndarray  # (channels, h, w) float32
    bias: float

    def __post_init__(self) -> None:
        if self.weights.ndim != 3:
            raise ValueError(f"filter weights must be 3-D (C, h, w), got {self.weights.shape}")
        if self.weights.dtype != np.float32:
            raise ValueError(f"filter weights must be float32, got {self.weights.dtype}")
        if min(self.weights.shape[1:]) < 1:
            raise ValueError(f"filter dims must be >= 1, got {self.weights.shape}")
        if not np.isfinite(self.weights).all() or not np.isfinite(self.bias):
            raise DataError("filter weights/bias must be finite")

    @property
    def channels(self) -> int:
        return self.weights.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.weights.shape[1], self.weights.shape[2])


@dataclass(frozen=True)
class ScoreMap:
    """Dense window scores for one (level, component) pair."""

    level_index: int
    component_id: int
    scores: np.ndarray  # (rows - h + 1, cols - w + 1) float64, possibly empty

    @property
    def dims(self) -> tuple[int, int]:
        return self.scores.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class Detection:
    image_id: str
    box: Rect
    score: float
    component_id: int
    level_index: int


@dataclass(frozen=True)
class BBoxRegressor:
    """Ridge regressors from window features to box-correction targets.

    One weight vector per target (tx, ty, tw, th) over the h*w*C channel-major
    window feature, plus unpenalized intercepts. Tied to one component because
    the feature length is shape-dependent.
    """

    weights: np.ndarray  # (4, h*w*C) float64
    intercepts: np.ndarray  # (4,) float64
    ridge_lambda: float
    component_id: int = 0

    def __post_init__(self) -> None:
        if self.weights.shape[0] != 4 or self.weights.ndim != 2:
            raise ValueError(f"regressor weights must be (4, d), got {self.weights.shape}")
        if self.intercepts.shape != (4,):
            raise ValueError(f"regressor intercepts must be (4,), got {self.intercepts.shape}")
        if self.ridge_lambda < 0:
            raise ValueError(f"ridge_lambda must be >= 0, got {self.ridge_lambda}")

    @property
    def feature_len(self) -> int:
        return self.weights.shape[1]

    def predict(self, feature: np.ndarray) -> np.ndarray:
        if feature.shape != (self.feature_len,):
            raise ValueError(
                f"feature length {feature.shape} does not match regressor ({self.feature_len},)"
            )
        return self.weights @ feature.astype(np.float64) + self.intercepts


@dataclass(frozen=True)
class DpmModel:
    """Trained detector: root filters plus provenance and optional regressors."""

    components: tuple[RootFilter, ...]
    channels: int
    config_digest: str
    extractor_descriptor: str
    regressors: tuple[BBoxRegressor, ...] = ()
    default_threshold: float = 0.0
    training_meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if not self.components:
            raise ValueError("model must have at least one component")
        for filt in self.components:
            if filt.channels != self.channels:
                raise ValueError(
                    f"component {filt.component_id} has {filt.channels} channels, "
                    f"model declares {self.channels}"
                )

    def regressor_for(self, component_id: int) -> BBoxRegressor | None:
        for reg in self.regressors:
            if reg.component_id == component_id:
                return reg
        return None


def score_level(fm: FeatureMap, filt: RootFilter) -> np.ndarray:
    """Valid cross-correlation of the filter with one level's features.

    Output dims are (rows - h + 1, cols - w + 1); empty when the filter
    exceeds the level. score[r, c] = sum_{c,y,x} w[c,y,x] * fm[c, r+y, c+x]
    + bias, accumulated in float64.
    """
    if fm.channels != filt.channels:
        raise IncompatibilityError(
            f"feature map has {fm.channels} channels, filter expects {filt.channels}"
        )
    h, w = filt.shape
    out_r = fm.rows - h + 1
    out_c = fm.cols - w + 1
    if out_r <= 0 or out_c <= 0:
        return np.zeros((max(0, out_r), max(0, out_c)), dtype=np.float64)
    windows = np.lib.stride_tricks.sliding_window_view(fm.data, (h, w), axis=(1, 2))
    scores = np.einsum("cijyx,cyx->ij", windows, filt.weights.astype(np.float64))
    return scores + float(filt.bias)


def window_feature(fm: FeatureMap, r: int, c: int, h: int, w: int) -> np.ndarray:
    """Flat channel-major feature of the h x w cell window at (r, c)."""
    if r < 0 or c < 0 or r + h > fm.rows or c + w > fm.cols:
        raise IndexError(
            f"window ({r},{c},{h},{w}) outside feature map {fm.rows}x{fm.cols}"
        )
    return np.ascontiguousarray(fm.data[:, r : r + h, c : c + w]).ravel()


def regression_targets(det_box: Rect, gt_box: Rect) -> np.ndarray:
    """Center/size correction targets mapping a detected box onto its truth."""
    if det_box.w <= 0 or det_box.h <= 0 or gt_box.w <= 0 or gt_box.h <= 0:
        raise DataError("regression targets need positive box dims")
    dx, dy = det_box.center
    gx, gy = gt_box.center
    t = np.array(
        [
            (gx - dx) / det_box.w,
            (gy - dy) / det_box.h,
            np.log(gt_box.w / det_box.w),
            np.log(gt_box.h / det_box.h),
        ]
    )
    if not np.isfinite(t).all():
        raise DataError(f"non-finite regression targets {t}")
    return t


def apply_bbox_regression(det: Detection, feature: np.ndarray, reg: BBoxRegressor) -> Detection:
    """Apply the inverse target parameterization to refine a detection's box."""
    tx, ty, tw, th = reg.predict(feature)
    cx, cy = det.box.center
    px = cx + det.box.w * tx
    py = cy + det.box.h * ty
    pw = det.box.w * np.exp(tw)
    ph = det.box.h * np.exp(th)
    new_box = Rect(px - pw / 2.0, py - ph / 2.0, pw, ph)
    return Detection(
        image_id=det.image_id,
        box=new_box,
        score=det.score,
        component_id=det.component_id,
        level_index=det.level_index,
    )


@dataclass(frozen=True)
class _Hit:
    """Internal pre-NMS candidate; carries its cell window for regression."""

    box: Rect
    score: float
    component_id: int
    level_index: int
    row: int
    col: int


def detect(
    fp: FeaturePyramid,
    model: DpmModel,
    threshold: float | None = None,
    nms_iou: float = 0.3,
) -> list[Detection]:
    """Run the full detection pass over a norm5 feature pyramid.

    Scores every (level, component) pair, keeps windows scoring strictly above
    the threshold (model default when None), maps them to input-image boxes,
    merges candidates in (level, component, row, col) order, applies greedy
    NMS jointly across components, then per-component box regression. Output
    is sorted by descending score.
    """
    if fp.stage != Stage.NORM5:
        raise PipelineOrderError(f"detect expects norm5 features, got {fp.stage.label}")
    if fp.config_digest is not None and fp.config_digest != model.config_digest:
        raise IncompatibilityError(
            f"feature config digest {fp.config_digest[:12]}... does not match "
            f"model digest {model.config_digest[:12]}..."
        )
    if (
        fp.extractor_descriptor is not None
        and fp.extractor_descriptor != model.extractor_descriptor
    ):
        raise IncompatibilityError(
            f"feature extractor {fp.extractor_descriptor!r} does not match "
            f"model extractor {model.extractor_descriptor!r}"
        )
    for _, fm in fp.levels:
        if fm.channels != model.channels:
            raise IncompatibilityError(
                f"features have {fm.channels} channels, model expects {model.channels}"
            )
    if threshold is None:
        threshold = model.default_threshold

    hits: list[_Hit] = []
    for geom, fm in fp.levels:
        for filt in model.components:
            scores = score_level(fm, filt)
            if scores.size == 0:
                continue
            rs, cs = np.nonzero(scores > threshold)
            h, w = filt.shape
            for r, c in zip(rs.tolist(), cs.tolist()):
                cell_box = Rect(float(c), float(r), float(w), float(h))
                box = level_box_to_image_box(cell_box, geom)
                hits.append(
                    _Hit(
                        box=box,
                        score=float(scores[r, c]),
                        component_id=filt.component_id,
                        level_index=geom.level_index,
                        row=r,
                        col=c,
                    )
                )
    # Deterministic merge order regardless of how levels were traversed.
    hits.sort(key=lambda t: (t.level_index, t.component_id, t.row, t.col))
    survivors = nms(hits, nms_iou)

    out: list[Detection] = []
    for hit in survivors:
        det = Detection(
            image_id=fp.image_id,
            box=hit.box,
            score=hit.score,
            component_id=hit.component_id,
            level_index=hit.level_index,
        )
        reg = model.regressor_for(hit.component_id)
        if reg is not None:
            filt = model.components[
                [f.component_id for f in model.components].index(hit.component_id)
            ]
            h, w = filt.shape
            _, fm = fp.level(hit.level_index)
            feat = window_feature(fm, hit.row, hit.col, h, w)
            det = apply_bbox_regression(det, feat, reg)
        out.append(det)
    out.sort(key=lambda d: -d.score)
    return out


def save_model(model: DpmModel, sink: BinaryIO | str | Path) -> None:
    """Serialize a model. Little-endian throughout; filter weights as f32."""
    if isinstance(sink, (str, Path)):
        with open(sink, "wb") as f:
            save_model(model, f)
        return
    f = sink
    f.write(MODEL_MAGIC)
    f.write(struct.pack("<I", MODEL_VERSION))
    f.write(struct.pack("<II", model.channels, len(model.components)))
    for filt in model.components:
        h, w = filt.shape
        f.write(struct.pack("<IIf", h, w, float(filt.bias)))
        f.write(np.ascontiguousarray(filt.weights, dtype="<f4").tobytes())
    desc = model.extractor_descriptor.encode("utf-8")
    f.write(struct.pack("<I", len(desc)))
    f.write(desc)
    digest = bytes.fromhex(model.config_digest)
    if len(digest) != 32:
        raise ValueError("config digest must be a 64-char SHA-256 hex string")
    f.write(digest)
    f.write(struct.pack("<I", len(model.regressors)))
    for reg in model.regressors:
        f.write(struct.pack("<IdI", reg.component_id, reg.ridge_lambda, reg.feature_len))
        f.write(np.ascontiguousarray(reg.intercepts, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(reg.weights, dtype="<f8").tobytes())


def load_model(source: BinaryIO | str | Path | bytes) -> DpmModel:
    """Parse a model file written by save_model."""
    if isinstance(source, (str, Path)):
        with open(source, "rb") as f:
            return load_model(f)
    if isinstance(source, bytes):
        import io

        return load_model(io.BytesIO(source))
    f = source

    def need(n: int, what: str) -> bytes:
        data = f.read(n)
        if len(data) != n:
            raise ModelFormatError(f"truncated model file while reading {what}")
        return data

    if need(4, "magic") != MODEL_MAGIC:
        raise ModelFormatError("bad model magic")
    (version,) = struct.unpack("<I", need(4, "version"))
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    channels, n_comp = struct.unpack("<II", need(8, "header"))
    if channels < 1 or n_comp < 1 or n_comp > 4096:
        raise ModelFormatError(f"implausible header: channels={channels}, components={n_comp}")
    comps: list[RootFilter] = []
    for i in range(n_comp):
        h, w, bias = struct.unpack("<IIf", need(12, f"component {i} header"))
        if h < 1 or w < 1 or h > 4096 or w > 4096:
            raise ModelFormatError(f"component {i}: implausible dims {h}x{w}")
        payload = need(channels * h * w * 4, f"component {i} weights")
        weights = np.frombuffer(payload, dtype="<f4").reshape(channels, h, w)
        comps.append(RootFilter(component_id=i, weights=weights.copy(), bias=float(bias)))
    (desc_len,) = struct.unpack("<I", need(4, "descriptor length"))
    if desc_len > (1 << 20):
        raise ModelFormatError(f"implausible descriptor length {desc_len}")
    descriptor = need(desc_len, "descriptor").decode("utf-8")
    digest = need(32, "config digest").hex()
    (n_reg,) = struct.unpack("<I", need(4, "regressor count"))
    if n_reg > 4096:
        raise ModelFormatError(f"implausible regressor count {n_reg}")
    regs: list[BBoxRegressor] = []
    for i in range(n_reg):
        comp_id, lam, feat_len = struct.unpack("<IdI", need(16, f"regressor {i} header"))
        if feat_len < 1 or feat_len > (1 << 28):
            raise ModelFormatError(f"regressor {i}: implausible feature length {feat_len}")
        intercepts = np.frombuffer(need(32, f"regressor {i} intercepts"), dtype="<f8").copy()
        weights = np.frombuffer(
            need(4 * feat_len * 8, f"regressor {i} weights"), dtype="<f8"
        ).reshape(4, feat_len)
        regs.append(
            BBoxRegressor(
                weights=weights.copy(),
                intercepts=intercepts,
                ridge_lambda=float(lam),
                component_id=comp_id,
            )
        )
    if f.read(1):
        raise ModelFormatError("trailing bytes after model content")
    return DpmModel(
        components=tuple(comps),
        channels=channels,
        config_digest=digest,
        extractor_descriptor=descriptor,
        regressors=tuple(regs),
    )
