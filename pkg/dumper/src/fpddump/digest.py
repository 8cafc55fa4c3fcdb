"""Compatibility digest shared with the detection engine.

Both sides hash the same canonical JSON document, so equal pyramid geometry
plus an equal network descriptor yields the same digest string, and the
engine can refuse feature dumps produced under a different configuration.
"""
from __future__ import annotations

import hashlib
import json

from .pyramid import PyramidSpec


def canonical_json(spec: PyramidSpec, network_descriptor: str) -> str:
    """Canonical JSON (sorted keys, no whitespace) of the compatibility config."""
    payload = {"extractor": network_descriptor, "pyramid": spec.as_dict()}
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def config_digest(spec: PyramidSpec, network_descriptor: str) -> str:
    """SHA-256 hex digest of the canonical compatibility config."""
    return hashlib.sha256(canonical_json(spec, network_descriptor).encode("utf-8")).hexdigest()
