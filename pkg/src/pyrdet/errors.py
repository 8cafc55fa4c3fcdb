"""Error types shared across the pipeline.

Everything derives from ValueError so callers that only care about "bad input"
can catch one type, while the CLI can map the finer classes to exit codes.
"""
from __future__ import annotations


class PipelineOrderError(ValueError):
    """A stage-tagged pyramid was fed to an operation expecting another stage."""


class IncompatibilityError(ValueError):
    """Model and features disagree on config digest, extractor, or channels."""


class ExtractionError(ValueError):
    """Feature extraction failed or produced maps with unexpected dims."""


class DataError(ValueError):
    """Numerically invalid data (non-finite values, impossible targets)."""


class DegenerateTrainingError(ValueError):
    """Training input cannot support the requested fit (single class, ...)."""


class DegenerateClusterError(ValueError):
    """More components requested than distinct aspect ratios available."""


class SamplingExhaustedError(ValueError):
    """Negative sampling found nothing within its attempt budget."""
