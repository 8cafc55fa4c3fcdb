"""Multi-scale sliding-window object detection over deep feature pyramids.

The package is organized around one data flow: an image becomes a 7-level
half-octave image pyramid, each level is run through a pluggable convolutional
feature extractor, the resulting feature maps are max-filtered and z-score
normalized, and root filters are slid over every level to produce scored
windows. Windows survive greedy suppression, are optionally refined by linear
box regression, and are finally matched against ground truth to draw
precision-recall, ROC, and miss-rate curves.
"""
from .annotations import Annotation, read_annotations, write_annotations
from .boxes import Rect, iou, nms
from .config import (
    RunConfig,
    TrainConfig,
    canonical_config_json,
    config_digest,
    load_run_config,
)
from .errors import (
    DataError,
    DegenerateClusterError,
    DegenerateTrainingError,
    ExtractionError,
    IncompatibilityError,
    PipelineOrderError,
    SamplingExhaustedError,
)
from .evaluation import (
    Curve,
    CurveSet,
    MatchResult,
    ScoredDetection,
    evaluate,
    match_detections,
    read_detections,
    score_matches,
    sweep_curves,
    write_curve_csv,
    write_detections,
)
from .features import (
    FeatureExtractor,
    FeatureMap,
    FeaturePyramid,
    NormStats,
    SeededConvFeatures,
    Stage,
    extract_features,
    max_filter_pyramid,
    max_pool_3x3,
    zscore_normalize,
)
from .fpd_io import (
    DimOverflowError,
    FeatureDumpError,
    MagicError,
    TrailingBytesError,
    TruncatedError,
    VersionError,
    read_feature_dump,
    write_feature_dump,
)
from .model import (
    BBoxRegressor,
    Detection,
    DpmModel,
    ModelFormatError,
    RootFilter,
    apply_bbox_regression,
    detect,
    load_model,
    regression_targets,
    save_model,
    score_level,
    window_feature,
)
from .pyramid import (
    ImagePyramid,
    LevelGeometry,
    PyramidConfig,
    PyramidLevel,
    build_image_pyramid,
    cell_to_pixel,
    image_box_to_level_box,
    level_box_to_image_box,
    resize_bilinear,
)
from .training import (
    SampleSource,
    TrainImage,
    TrainingSample,
    argmin_shape_cost,
    assign_components,
    extract_positive,
    fit_linear_svm,
    hard_negative_mine,
    sample_negatives,
    select_level,
    svm_objective,
    train_bbox_regressor,
    train_svm,
)

__version__ = "0.1.0"

__all__ = [
    "Annotation",
    "BBoxRegressor",
    "Curve",
    "CurveSet",
    "DataError",
    "DegenerateClusterError",
    "DegenerateTrainingError",
    "Detection",
    "DimOverflowError",
    "DpmModel",
    "ExtractionError",
    "FeatureDumpError",
    "FeatureExtractor",
    "FeatureMap",
    "FeaturePyramid",
    "ImagePyramid",
    "IncompatibilityError",
    "LevelGeometry",
    "MagicError",
    "MatchResult",
    "ModelFormatError",
    "NormStats",
    "PipelineOrderError",
    "PyramidConfig",
    "PyramidLevel",
    "Rect",
    "RootFilter",
    "RunConfig",
    "SampleSource",
    "SamplingExhaustedError",
    "ScoredDetection",
    "SeededConvFeatures",
    "Stage",
    "TrailingBytesError",
    "TrainConfig",
    "TrainImage",
    "TrainingSample",
    "TruncatedError",
    "VersionError",
    "apply_bbox_regression",
    "argmin_shape_cost",
    "assign_components",
    "build_image_pyramid",
    "canonical_config_json",
    "cell_to_pixel",
    "config_digest",
    "detect",
    "evaluate",
    "extract_features",
    "extract_positive",
    "fit_linear_svm",
    "hard_negative_mine",
    "image_box_to_level_box",
    "iou",
    "level_box_to_image_box",
    "load_model",
    "load_run_config",
    "match_detections",
    "max_filter_pyramid",
    "max_pool_3x3",
    "nms",
    "read_annotations",
    "read_detections",
    "read_feature_dump",
    "regression_targets",
    "resize_bilinear",
    "sample_negatives",
    "save_model",
    "score_level",
    "score_matches",
    "select_level",
    "svm_objective",
    "sweep_curves",
    "train_bbox_regressor",
    "train_svm",
    "window_feature",
    "write_annotations",
    "write_curve_csv",
    "write_detections",
    "write_feature_dump",
    "zscore_normalize",
]
