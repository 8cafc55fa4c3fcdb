"""Offline convolutional feature dumper.

Runs every input image through a stride-16 convolutional network at each
level of a half-octave image pyramid and writes the resulting feature maps
as FPD1 files, one per image, plus provenance sidecars and a job manifest.
The files are consumed by the sliding-window detection engine, which talks
to this package only through the FPD1 format, the manifest, and the shared
configuration digest; neither package imports the other.
"""
from .digest import canonical_json, config_digest
from .dump import (
    PREPROCESSING,
    DimensionMismatchError,
    DumpJob,
    DumpReport,
    dump_features,
    dump_image,
)
from .fpd import MAGIC, STAGE_CONV5, STAGE_MAX5, STAGE_NORM5, VERSION, DumpLevel, serialize
from .network import LAYER_NAME, PyramidNet
from .pyramid import LevelPlan, PyramidSpec, plan_levels

__version__ = "0.1.0"

__all__ = [
    "DimensionMismatchError",
    "DumpJob",
    "DumpLevel",
    "DumpReport",
    "LAYER_NAME",
    "LevelPlan",
    "MAGIC",
    "PREPROCESSING",
    "PyramidNet",
    "PyramidSpec",
    "STAGE_CONV5",
    "STAGE_MAX5",
    "STAGE_NORM5",
    "VERSION",
    "canonical_json",
    "config_digest",
    "dump_features",
    "dump_image",
    "plan_levels",
    "serialize",
]
