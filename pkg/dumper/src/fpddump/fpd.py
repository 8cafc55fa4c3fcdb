"""FPD1 binary serialization (writer side only).

Layout, all little-endian:

    magic "FPD1" | version u32 (= 1) | image_id_len u32 | image_id UTF-8
    | stage u8 (0 = conv5, 1 = max5, 2 = norm5) | num_levels u32
    then per level:
    level_index u32 | scale f64 | stride u32 | channels u32 | rows u32
    | cols u32 | payload channels*rows*cols f32, channel-major

No trailing bytes. The consumer parses this strictly, so the writer validates
everything it is handed before committing a single byte.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

MAGIC = b"FPD1"
VERSION = 1

STAGE_CONV5 = 0
STAGE_MAX5 = 1
STAGE_NORM5 = 2
_STAGES = (STAGE_CONV5, STAGE_MAX5, STAGE_NORM5)


@dataclass(frozen=True)
class DumpLevel:
    """One level's wire fields: geometry plus a (C, rows, cols) float32 map."""

    index: int
    scale: float
    stride: int
    data: np.ndarray

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ValueError(f"level index must be >= 1, got {self.index}")
        if not self.scale > 0.0:
            raise ValueError(f"level scale must be > 0, got {self.scale}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.data.ndim != 3:
            raise ValueError(f"level data must be 3-D (C, rows, cols), got {self.data.shape}")
        if self.data.dtype != np.float32:
            raise ValueError(f"level data must be float32, got {self.data.dtype}")


def serialize(image_id: str, levels: Sequence[DumpLevel], stage: int = STAGE_CONV5) -> bytes:
    """Serialize one image's levels to FPD1 bytes, in the given order."""
    if stage not in _STAGES:
        raise ValueError(f"unknown stage tag {stage}")
    ident = image_id.encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<I", len(ident)))
    buf.write(ident)
    buf.write(struct.pack("<BI", stage, len(levels)))
    for level in levels:
        channels, rows, cols = level.data.shape
        buf.write(
            struct.pack("<IdIIII", level.index, level.scale, level.stride, channels, rows, cols)
        )
        buf.write(np.ascontiguousarray(level.data, dtype="<f4").tobytes())
    return buf.getvalue()
