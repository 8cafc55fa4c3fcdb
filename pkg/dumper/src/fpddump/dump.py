"""Offline feature dumping: image files in, FPD1 files plus manifests out.

Per input image the dumper writes ``<stem>.fpd`` (the feature pyramid) and a
``<stem>.json`` sidecar recording provenance. A job-level ``manifest.json``
lists every written file and every failure in the exact shape the detection
engine's ``--features-dir`` option consumes. All writes go through a
temporary file and an atomic rename so readers never see partial output.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .digest import config_digest
from .fpd import STAGE_CONV5, DumpLevel, serialize
from .network import LAYER_NAME, PyramidNet
from .pyramid import PyramidSpec, plan_levels

PREPROCESSING = (
    "convert to RGB; resize each pyramid level directly from the input with "
    "PIL bilinear; pixels to float32 as x/255 - 0.5, channel-first"
)


class DimensionMismatchError(RuntimeError):
    """Network output grid disagrees with the planned level geometry."""


@dataclass
class DumpJob:
    """One dumping run: which images, where to, and under what config."""

    images: Sequence[str | Path]
    out_dir: str | Path
    spec: PyramidSpec = field(default_factory=PyramidSpec)
    seed: int = 0
    channels: int = 256


@dataclass
class DumpReport:
    """What a job produced: per-image files written and per-image failures."""

    out_dir: Path
    config_digest: str
    written: dict[str, str]
    failures: dict[str, str]


def _load_rgb(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def _resize(image: np.ndarray, height: int, width: int) -> np.ndarray:
    if image.shape[:2] == (height, width):
        return image
    resized = Image.fromarray(image).resize((width, height), Image.BILINEAR)
    return np.asarray(resized, dtype=np.uint8)


def _atomic_write(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def dump_image(image: np.ndarray, image_id: str, net: PyramidNet, spec: PyramidSpec) -> bytes:
    """FPD1 bytes for one image: plan levels, resize, run the net, serialize."""
    if net.stride != spec.stride:
        raise DimensionMismatchError(
            f"network stride {net.stride} does not match pyramid stride {spec.stride}"
        )
    h, w = np.asarray(image).shape[:2]
    levels = []
    for plan in plan_levels(h, w, spec):
        feats = net.features(_resize(image, plan.height, plan.width))
        want = (plan.height // spec.stride, plan.width // spec.stride)
        if feats.shape[1:] != want:
            raise DimensionMismatchError(
                f"level {plan.index}: network produced grid {feats.shape[1:]}, "
                f"plan requires {want} for a {plan.height}x{plan.width} level"
            )
        levels.append(DumpLevel(index=plan.index, scale=plan.scale, stride=spec.stride, data=feats))
    return serialize(image_id, levels, stage=STAGE_CONV5)


def dump_features(job: DumpJob) -> DumpReport:
    """Run a dump job; bad input files are recorded and skipped.

    A geometry disagreement between the network and the level plan is a bug,
    not a bad input, so it aborts the whole job instead of being swallowed.
    """
    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    net = PyramidNet(seed=job.seed, channels=job.channels)
    digest = config_digest(job.spec, net.descriptor)
    written: dict[str, str] = {}
    failures: dict[str, str] = {}
    for raw in job.images:
        path = Path(raw)
        try:
            payload = dump_image(_load_rgb(path), path.stem, net, job.spec)
        except DimensionMismatchError:
            raise
        except Exception as exc:  # noqa: BLE001 - keep going, report per file
            failures[path.name] = str(exc)
            continue
        fpd_name = f"{path.stem}.fpd"
        _atomic_write(out_dir / fpd_name, payload)
        sidecar = {
            "image": path.name,
            "network": net.descriptor,
            "layer": LAYER_NAME,
            "preprocessing": PREPROCESSING,
            "config_digest": digest,
        }
        _atomic_write(
            out_dir / f"{path.stem}.json",
            (json.dumps(sidecar, indent=2, sort_keys=True) + "\n").encode("utf-8"),
        )
        written[path.stem] = fpd_name
    manifest = {
        "format": "FPD1",
        "stage": "conv5",
        "extractor": net.descriptor,
        "config_digest": digest,
        "files": written,
        "failures": failures,
    }
    _atomic_write(
        out_dir / "manifest.json",
        (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8"),
    )
    return DumpReport(out_dir=out_dir, config_digest=digest, written=written, failures=failures)
