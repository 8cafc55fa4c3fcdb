"""Run configuration: declarative file, defaults, and compatibility digest.

A run is configured by one JSON file (any section may be omitted) plus CLI
flag overrides. Compatibility between features and models is decided by a
SHA-256 digest over the canonical JSON of the pyramid config and the
extractor descriptor; the digest travels inside model files and feature-dump
manifests.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .pyramid import PyramidConfig


def canonical_config_json(pyramid: PyramidConfig, extractor_descriptor: str) -> str:
    """Canonical JSON (sorted keys, no whitespace) of the compatibility config."""
    payload = {
        "extractor": extractor_descriptor,
        "pyramid": {
            "num_levels": pyramid.num_levels,
            "scale_step": pyramid.scale_step,
            "canvas_side": pyramid.canvas_side,
            "stride": pyramid.stride,
            "receptive_field": pyramid.receptive_field,
            "filter_scaledown": pyramid.filter_scaledown,
        },
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def config_digest(pyramid: PyramidConfig, extractor_descriptor: str) -> str:
    """SHA-256 hex digest of the canonical compatibility config."""
    return hashlib.sha256(
        canonical_config_json(pyramid, extractor_descriptor).encode("utf-8")
    ).hexdigest()


@dataclass(frozen=True)
class TrainConfig:
    """Knobs for SVM training and hard negative mining."""

    svm_cost: float = 0.01
    mining_rounds: int = 5
    negatives_per_image: int = 40
    neg_iou_max: float = 0.3
    hard_threshold: float = -1.0
    easy_prune_threshold: float = -1.1
    convergence_tol: float = 1e-3
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.svm_cost <= 0:
            raise ValueError(f"svm_cost must be > 0, got {self.svm_cost}")
        if self.mining_rounds < 1:
            raise ValueError(f"mining_rounds must be >= 1, got {self.mining_rounds}")
        if self.negatives_per_image < 0:
            raise ValueError(f"negatives_per_image must be >= 0, got {self.negatives_per_image}")
        if not 0.0 <= self.neg_iou_max <= 1.0:
            raise ValueError(f"neg_iou_max must be in [0, 1], got {self.neg_iou_max}")
        if self.convergence_tol <= 0:
            raise ValueError(f"convergence_tol must be > 0, got {self.convergence_tol}")


@dataclass
class RunConfig:
    """Everything a CLI run needs; exactly one extractor source at a time."""

    pyramid: PyramidConfig = field(default_factory=PyramidConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    extractor_seed: int = 0
    extractor_channels: int = 64
    extractor_mid_channels: int = 32
    components: int = 1
    ridge_lambda: float = 1000.0
    bbox_regression: bool = True
    threshold: float | None = None
    nms_iou: float = 0.3
    protocol: str = "discrete"
    match_iou: float = 0.5
    stage: str = "norm5"
    images: str | None = None
    annotations: str | None = None
    model_path: str | None = None
    features_dir: str | None = None
    detections: str | None = None
    out: str | None = None

    def __post_init__(self) -> None:
        if self.protocol not in ("discrete", "continuous"):
            raise ValueError(f"protocol must be 'discrete' or 'continuous', got {self.protocol!r}")
        if self.stage not in ("conv5", "norm5"):
            raise ValueError(f"stage must be 'conv5' or 'norm5', got {self.stage!r}")
        if not 0.0 <= self.nms_iou <= 1.0:
            raise ValueError(f"nms_iou must be in [0, 1], got {self.nms_iou}")
        if self.components < 1:
            raise ValueError(f"components must be >= 1, got {self.components}")


def _build_section(cls, data: dict, section: str):
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ValueError(f"unknown key(s) in '{section}' section: {sorted(unknown)}")
    return cls(**data)


_TOP_LEVEL_KEYS = {
    "pyramid",
    "train",
    "extractor",
    "paths",
    "components",
    "ridge_lambda",
    "bbox_regression",
    "threshold",
    "nms_iou",
    "protocol",
    "match_iou",
    "stage",
}

_EXTRACTOR_KEYS = {"seed", "channels", "mid_channels"}
_PATH_KEYS = {"images", "annotations", "model", "features_dir", "detections", "out"}


def load_run_config(path: str | Path) -> RunConfig:
    """Parse a JSON run config; unknown keys are errors, not typos to ignore."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config root must be a JSON object")
    unknown = set(raw) - _TOP_LEVEL_KEYS
    if unknown:
        raise ValueError(f"{path}: unknown top-level key(s): {sorted(unknown)}")

    pyramid = _build_section(PyramidConfig, raw.get("pyramid", {}), "pyramid")
    train = _build_section(TrainConfig, raw.get("train", {}), "train")

    ex = raw.get("extractor", {})
    unknown = set(ex) - _EXTRACTOR_KEYS
    if unknown:
        raise ValueError(f"{path}: unknown key(s) in 'extractor' section: {sorted(unknown)}")

    paths = raw.get("paths", {})
    unknown = set(paths) - _PATH_KEYS
    if unknown:
        raise ValueError(f"{path}: unknown key(s) in 'paths' section: {sorted(unknown)}")

    scalars = {
        k: raw[k]
        for k in (
            "components",
            "ridge_lambda",
            "bbox_regression",
            "threshold",
            "nms_iou",
            "protocol",
            "match_iou",
            "stage",
        )
        if k in raw
    }
    return RunConfig(
        pyramid=pyramid,
        train=train,
        extractor_seed=ex.get("seed", 0),
        extractor_channels=ex.get("channels", 64),
        extractor_mid_channels=ex.get("mid_channels", 32),
        images=paths.get("images"),
        annotations=paths.get("annotations"),
        model_path=paths.get("model"),
        features_dir=paths.get("features_dir"),
        detections=paths.get("detections"),
        out=paths.get("out"),
        **scalars,
    )
