"""Command-line front end: extract, train, detect, eval.

Exit codes: 0 success, 1 internal error, 2 bad input, 3 incompatible
artifacts (config digest or extractor mismatch). Every subcommand accepts a
JSON config file (--config, all sections optional) plus flag overrides;
outputs embed the compatibility digest (model files natively, feature dumps
via a run manifest.json, detections files in their '#' header).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Callable

import numpy as np

from .annotations import Annotation, read_annotations
from .boxes import Rect
from .config import RunConfig, config_digest, load_run_config
from .errors import IncompatibilityError
from .evaluation import evaluate, read_detections, write_curve_csv, write_detections
from .features import (
    FeaturePyramid,
    SeededConvFeatures,
    Stage,
    extract_features,
    max_filter_pyramid,
    zscore_normalize,
)
from .fpd_io import read_feature_dump, write_feature_dump
from .model import DpmModel, detect, load_model, save_model
from .pyramid import build_image_pyramid, level_box_to_image_box
from .training import (
    TrainImage,
    assign_components,
    extract_positive,
    hard_negative_mine,
    train_bbox_regressor,
)

logger = logging.getLogger("pyrdet")

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def _atomic(path: Path, writer: Callable[[Path], None]) -> None:
    """Write through a temp file and rename, so readers never see partials."""
    tmp = path.with_name(path.name + ".tmp")
    writer(tmp)
    os.replace(tmp, path)


def _load_image(path: Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def _list_images(directory: Path) -> list[Path]:
    if not directory.is_dir():
        raise FileNotFoundError(f"image directory not found: {directory}")
    files = sorted(
        p for p in directory.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES
    )
    if not files:
        raise FileNotFoundError(f"no images (png/jpg) in {directory}")
    return files


def _make_extractor(cfg: RunConfig) -> SeededConvFeatures:
    return SeededConvFeatures(
        seed=cfg.extractor_seed,
        channels=cfg.extractor_channels,
        mid_channels=cfg.extractor_mid_channels,
    )


def _norm5_from_image(
    cfg: RunConfig, extractor: SeededConvFeatures, path: Path
) -> FeaturePyramid:
    pyr = build_image_pyramid(_load_image(path), cfg.pyramid)
    conv = extract_features(pyr, extractor, image_id=path.stem)
    normed, _ = zscore_normalize(max_filter_pyramid(conv))
    return normed


def _norm5_from_dump(path: Path) -> FeaturePyramid:
    """Load a feature dump and finish the pipeline if it was saved early."""
    fp = read_feature_dump(path)
    if fp.stage == Stage.CONV5:
        fp = max_filter_pyramid(fp)
    if fp.stage == Stage.MAX5:
        fp, _ = zscore_normalize(fp)
    return fp


def _read_features_manifest(directory: Path) -> dict:
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"feature directory has no manifest.json: {directory}")
    return json.loads(manifest_path.read_text(encoding="utf-8"))


def _check_feature_digest(manifest: dict, digest: str, what: str) -> None:
    found = manifest.get("config_digest")
    if found != digest:
        raise IncompatibilityError(
            f"feature dump digest {str(found)[:12]}... does not match {what} "
            f"digest {digest[:12]}..."
        )


# ---------------------------------------------------------------- extract


def cmd_extract(cfg: RunConfig) -> int:
    if not cfg.images:
        raise FileNotFoundError("extract needs an image directory (--images)")
    out_dir = Path(cfg.out or "features")
    out_dir.mkdir(parents=True, exist_ok=True)
    extractor = _make_extractor(cfg)
    digest = config_digest(cfg.pyramid, extractor.descriptor)
    files: dict[str, str] = {}
    failures: dict[str, str] = {}
    for path in _list_images(Path(cfg.images)):
        try:
            pyr = build_image_pyramid(_load_image(path), cfg.pyramid)
            fp = extract_features(pyr, extractor, image_id=path.stem)
            if cfg.stage == "norm5":
                fp, _ = zscore_normalize(max_filter_pyramid(fp))
            out_path = out_dir / f"{path.stem}.fpd"
            _atomic(out_path, lambda p: write_feature_dump(fp, p))
            files[path.stem] = out_path.name
        except Exception as exc:  # noqa: BLE001 - keep going, report per file
            failures[path.name] = str(exc)
            logger.error("extract failed for %s: %s", path.name, exc)
    manifest = {
        "format": "FPD1",
        "stage": cfg.stage,
        "extractor": extractor.descriptor,
        "config_digest": digest,
        "files": files,
        "failures": failures,
    }
    _atomic(
        out_dir / "manifest.json",
        lambda p: p.write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        ),
    )
    print(f"extracted {len(files)} image(s) to {out_dir} (digest {digest[:12]}...)")
    return 1 if failures else 0


# ------------------------------------------------------------------ train


def _group_annotations(annotations: list[Annotation]) -> dict[str, list[Annotation]]:
    grouped: dict[str, list[Annotation]] = {}
    for a in annotations:
        grouped.setdefault(a.image_id, []).append(a)
    return grouped


def _to_train_image(
    fp: FeaturePyramid, anns: list[Annotation], labels: dict[int, int]
) -> TrainImage:
    return TrainImage(
        fp=fp,
        gt_boxes=tuple(a.rect for a in anns),
        gt_components=tuple(labels[id(a)] for a in anns),
    )


def _attach_regressors(
    model: DpmModel,
    train_images: list[TrainImage],
    shapes: list[tuple[int, int]],
    ridge_lambda: float,
) -> DpmModel:
    """Fit one box regressor per component from the positive training windows."""
    regressors = []
    for comp_id, (h, w) in enumerate(shapes):
        pairs = []
        for img in train_images:
            for box, comp in zip(img.gt_boxes, img.gt_components):
                if comp != comp_id:
                    continue
                sample = extract_positive(img.fp, box, (h, w), component_id=comp_id)
                if sample is None:
                    continue
                src = sample.source
                geom, _ = img.fp.level(src.level_index)
                det_box = level_box_to_image_box(
                    Rect(float(src.col), float(src.row), float(src.w), float(src.h)),
                    geom,
                )
                pairs.append((sample.feature, det_box, box))
        if pairs:
            regressors.append(
                train_bbox_regressor(pairs, ridge_lambda=ridge_lambda, component_id=comp_id)
            )
    return dataclasses.replace(model, regressors=tuple(regressors))


def cmd_train(cfg: RunConfig) -> int:
    if not cfg.annotations:
        raise FileNotFoundError("train needs an annotations file (--annotations)")
    if cfg.features_dir and cfg.images:
        raise ValueError("train takes --images or --features-dir, not both")
    annotations = read_annotations(cfg.annotations)
    if not annotations:
        raise ValueError(f"no annotations in {cfg.annotations}")
    grouped = _group_annotations(annotations)

    labels, shapes = assign_components(
        [a.rect for a in annotations],
        cfg.components,
        filter_scaledown=cfg.pyramid.filter_scaledown,
        rng_seed=cfg.train.rng_seed,
    )
    label_by_ann = {id(a): lab for a, lab in zip(annotations, labels)}

    train_images: list[TrainImage] = []
    skipped: list[str] = []
    if cfg.features_dir:
        # The dump directory is the extractor source: its recorded digest and
        # descriptor become the model's provenance.
        feat_dir = Path(cfg.features_dir)
        manifest = _read_features_manifest(feat_dir)
        digest = manifest.get("config_digest")
        if not isinstance(digest, str) or len(digest) != 64:
            raise ValueError(f"{feat_dir}/manifest.json has no valid config_digest")
        descriptor = manifest.get("extractor")
        if not descriptor:
            raise ValueError(f"{feat_dir}/manifest.json has no extractor descriptor")
        for image_id, anns in sorted(grouped.items()):
            fpd = feat_dir / f"{image_id}.fpd"
            if not fpd.is_file():
                skipped.append(image_id)
                logger.warning("no dump for %s; skipping", image_id)
                continue
            train_images.append(_to_train_image(_norm5_from_dump(fpd), anns, label_by_ann))
    else:
        if not cfg.images:
            raise FileNotFoundError("train needs --images or --features-dir")
        extractor = _make_extractor(cfg)
        digest = config_digest(cfg.pyramid, extractor.descriptor)
        descriptor = extractor.descriptor
        image_dir = Path(cfg.images)
        if not image_dir.is_dir():
            raise FileNotFoundError(f"image directory not found: {image_dir}")
        for image_id, anns in sorted(grouped.items()):
            path = next(
                (
                    image_dir / f"{image_id}{suf}"
                    for suf in _IMAGE_SUFFIXES
                    if (image_dir / f"{image_id}{suf}").is_file()
                ),
                None,
            )
            if path is None:
                skipped.append(image_id)
                logger.warning("no image for %s; skipping", image_id)
                continue
            train_images.append(
                _to_train_image(_norm5_from_image(cfg, extractor, path), anns, label_by_ann)
            )
    if not train_images:
        raise ValueError("no training images found for the given annotations")

    model = hard_negative_mine(
        train_images,
        shapes,
        cfg.train,
        model_digest=digest,
        extractor_descriptor=descriptor,
    )
    if cfg.bbox_regression:
        model = _attach_regressors(model, train_images, shapes, cfg.ridge_lambda)

    out_path = Path(cfg.out or cfg.model_path or "model.dpmf")
    if out_path.parent != Path():
        out_path.parent.mkdir(parents=True, exist_ok=True)
    _atomic(out_path, lambda p: save_model(model, p))
    n_pos = sum(len(t.gt_boxes) for t in train_images)
    print(
        f"trained {len(model.components)} component(s) on {len(train_images)} image(s) "
        f"({n_pos} boxes, {len(skipped)} skipped); model -> {out_path}"
    )
    return 0


# ----------------------------------------------------------------- detect


def cmd_detect(cfg: RunConfig) -> int:
    if not cfg.model_path:
        raise FileNotFoundError("detect needs a model file (--model)")
    if cfg.features_dir and cfg.images:
        raise ValueError("detect takes --images or --features-dir, not both")
    model = load_model(cfg.model_path)
    detections = []
    if cfg.features_dir:
        feat_dir = Path(cfg.features_dir)
        _check_feature_digest(_read_features_manifest(feat_dir), model.config_digest, "model")
        sources = sorted(feat_dir.glob("*.fpd"))
        if not sources:
            raise FileNotFoundError(f"no .fpd files in {feat_dir}")
        for fpd in sources:
            fp = _norm5_from_dump(fpd)
            detections.extend(detect(fp, model, cfg.threshold, nms_iou=cfg.nms_iou))
    else:
        if not cfg.images:
            raise FileNotFoundError("detect needs --images or --features-dir")
        extractor = _make_extractor(cfg)
        digest = config_digest(cfg.pyramid, extractor.descriptor)
        if digest != model.config_digest:
            raise IncompatibilityError(
                f"run config digest {digest[:12]}... does not match model digest "
                f"{model.config_digest[:12]}..."
            )
        for path in _list_images(Path(cfg.images)):
            fp = _norm5_from_image(cfg, extractor, path)
            detections.extend(detect(fp, model, cfg.threshold, nms_iou=cfg.nms_iou))
    thr = model.default_threshold if cfg.threshold is None else cfg.threshold
    out_path = Path(cfg.out or "detections.txt")
    if out_path.parent != Path():
        out_path.parent.mkdir(parents=True, exist_ok=True)
    header = f"config_digest={model.config_digest} threshold={thr} nms_iou={cfg.nms_iou}"
    _atomic(out_path, lambda p: write_detections(p, detections, header=header))
    print(f"wrote {len(detections)} detection(s) to {out_path}")
    return 0


# ------------------------------------------------------------------- eval


def cmd_eval(cfg: RunConfig) -> int:
    if not cfg.detections:
        raise FileNotFoundError("eval needs a detections file (--detections)")
    if not cfg.annotations:
        raise FileNotFoundError("eval needs an annotations file (--annotations)")
    detections = read_detections(cfg.detections)
    annotations = read_annotations(cfg.annotations)
    curves = evaluate(
        detections, annotations, protocol=cfg.protocol, iou_min=cfg.match_iou
    )
    out_dir = Path(cfg.out or "eval")
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, curve in (
        ("pr.csv", curves.pr),
        ("roc.csv", curves.roc),
        ("tpr_fppi.csv", curves.tpr_fppi),
    ):
        _atomic(out_dir / name, lambda p, c=curve: write_curve_csv(p, c))
    report = {
        "protocol": curves.protocol,
        "match_iou": cfg.match_iou,
        "average_precision": curves.ap,
        "num_detections": len(detections),
        "num_annotations": len(annotations),
    }
    _atomic(
        out_dir / "report.json",
        lambda p: p.write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        ),
    )
    print(f"AP ({curves.protocol}) = {curves.ap:.6f}; curves -> {out_dir}")
    return 0


# ------------------------------------------------------------ arg parsing


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config file")
    p.add_argument("--seed", type=int, help="extractor weight seed")
    p.add_argument("--channels", type=int, help="extractor output channels")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pyrdet",
        description="Multi-scale sliding-window detection over pyramid features.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="write feature dumps for a directory of images")
    _add_common(p)
    p.add_argument("--images", help="input image directory")
    p.add_argument("--stage", choices=["conv5", "norm5"], help="pipeline stage to save")
    p.add_argument("--out", help="output directory for .fpd files")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train a detector from annotated images")
    _add_common(p)
    p.add_argument("--images", help="input image directory")
    p.add_argument("--features-dir", help="precomputed feature dump directory")
    p.add_argument("--annotations", help="ground-truth boxes file")
    p.add_argument("--components", type=int, help="number of mixture components")
    p.add_argument("--no-bbox-regression", action="store_true",
                   help="skip fitting box regressors")
    p.add_argument("--out", help="output model file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="run a model over images or feature dumps")
    _add_common(p)
    p.add_argument("--images", help="input image directory")
    p.add_argument("--features-dir", help="precomputed feature dump directory")
    p.add_argument("--model", help="model file")
    p.add_argument("--threshold", type=float, help="score threshold (exclusive)")
    p.add_argument("--nms-iou", type=float, help="overlap threshold for suppression")
    p.add_argument("--out", help="output detections file")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="score detections against ground truth")
    p.add_argument("--config", help="JSON run config file")
    p.add_argument("--detections", help="detections file")
    p.add_argument("--annotations", help="ground-truth boxes file")
    p.add_argument("--protocol", choices=["discrete", "continuous"],
                   help="credit protocol for matches")
    p.add_argument("--match-iou", type=float, help="minimum overlap for a match")
    p.add_argument("--out", help="output directory for curves and report")
    p.set_defaults(func=cmd_eval)

    return parser


_FLAG_TO_FIELD = {
    "seed": "extractor_seed",
    "channels": "extractor_channels",
    "images": "images",
    "features_dir": "features_dir",
    "annotations": "annotations",
    "model": "model_path",
    "detections": "detections",
    "out": "out",
    "stage": "stage",
    "components": "components",
    "threshold": "threshold",
    "nms_iou": "nms_iou",
    "protocol": "protocol",
    "match_iou": "match_iou",
}


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    overrides = {}
    for flag, fld in _FLAG_TO_FIELD.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[fld] = value
    if getattr(args, "no_bbox_regression", False):
        overrides["bbox_regression"] = False
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config_from_args(args)
        return args.func(cfg)
    except IncompatibilityError as exc:
        print(f"error: incompatible artifacts: {exc}", file=sys.stderr)
        return 3
    except (FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - last resort, distinct exit code
        logger.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
