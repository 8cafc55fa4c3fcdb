"""Binary feature-dump format (FPD1), written and parsed strictly.

Layout, all little-endian:

    magic "FPD1" | version u32 (= 1) | image_id_len u32 | image_id UTF-8
    | stage u8 (0 = conv5, 1 = max5, 2 = norm5) | num_levels u32
    then per level:
    level_index u32 | scale f64 | stride u32 | channels u32 | rows u32
    | cols u32 | payload channels*rows*cols f32, channel-major

No trailing bytes are allowed. Parse failures raise distinct error types so
callers can tell a wrong file from a damaged one.
"""
from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .features import FeatureMap, FeaturePyramid, Stage
from .pyramid import LevelGeometry

MAGIC = b"FPD1"
VERSION = 1

# Guard rails for declared dims: any single dim above this, or a payload over
# 2**40 bytes, is treated as nonsense rather than attempted.
_MAX_DIM = 1 << 31
_MAX_PAYLOAD_BYTES = 1 << 40


class FeatureDumpError(ValueError):
    """Base class for FPD1 parse/write failures."""


class MagicError(FeatureDumpError):
    """Stream does not start with the FPD1 magic."""


class VersionError(FeatureDumpError):
    """Unsupported format version."""


class TruncatedError(FeatureDumpError):
    """Stream ended before the declared content."""


class DimOverflowError(FeatureDumpError):
    """Declared dimensions are out of any plausible range."""


class TrailingBytesError(FeatureDumpError):
    """Extra bytes follow the last declared level."""


def _read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise TruncatedError(f"truncated stream while reading {what} ({len(data)}/{n} bytes)")
    return data


def write_feature_dump(fp: FeaturePyramid, sink: BinaryIO | str | Path) -> None:
    """Serialize a feature pyramid; accepts a path or a binary file object."""
    if isinstance(sink, (str, Path)):
        with open(sink, "wb") as f:
            write_feature_dump(fp, f)
        return
    f = sink
    ident = fp.image_id.encode("utf-8")
    f.write(MAGIC)
    f.write(struct.pack("<I", VERSION))
    f.write(struct.pack("<I", len(ident)))
    f.write(ident)
    f.write(struct.pack("<BI", int(fp.stage), len(fp.levels)))
    for geom, fm in fp.levels:
        f.write(
            struct.pack(
                "<IdIIII",
                geom.level_index,
                geom.scale,
                geom.stride,
                fm.channels,
                fm.rows,
                fm.cols,
            )
        )
        f.write(np.ascontiguousarray(fm.data, dtype="<f4").tobytes())


def read_feature_dump(source: BinaryIO | str | Path | bytes) -> FeaturePyramid:
    """Parse an FPD1 stream back into a feature pyramid.

    Geometry is reconstructed from the format-carried fields; the receptive
    field is not part of the format, so levels come back with the default.
    Provenance fields are None (see FeaturePyramid).
    """
    if isinstance(source, (str, Path)):
        with open(source, "rb") as f:
            return read_feature_dump(f)
    if isinstance(source, bytes):
        return read_feature_dump(io.BytesIO(source))
    f = source

    magic = _read_exact(f, 4, "magic")
    if magic != MAGIC:
        raise MagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
    if version != VERSION:
        raise VersionError(f"unsupported version {version}, expected {VERSION}")
    (id_len,) = struct.unpack("<I", _read_exact(f, 4, "image id length"))
    if id_len > (1 << 20):
        raise DimOverflowError(f"implausible image id length {id_len}")
    try:
        image_id = _read_exact(f, id_len, "image id").decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FeatureDumpError(f"image id is not valid UTF-8: {exc}") from exc
    stage_byte, num_levels = struct.unpack("<BI", _read_exact(f, 5, "stage/level count"))
    try:
        stage = Stage(stage_byte)
    except ValueError as exc:
        raise FeatureDumpError(f"unknown stage tag {stage_byte}") from exc
    if num_levels > 10_000:
        raise DimOverflowError(f"implausible level count {num_levels}")

    levels: list[tuple[LevelGeometry, FeatureMap]] = []
    for i in range(num_levels):
        header = struct.unpack("<IdIIII", _read_exact(f, 28, f"level {i} header"))
        level_index, scale, stride, channels, rows, cols = header
        if max(channels, rows, cols) >= _MAX_DIM:
            raise DimOverflowError(
                f"level {level_index}: dims {channels}x{rows}x{cols} out of range"
            )
        count = channels * rows * cols
        if count * 4 > _MAX_PAYLOAD_BYTES:
            raise DimOverflowError(
                f"level {level_index}: payload of {count} floats is implausible"
            )
        payload = _read_exact(f, count * 4, f"level {level_index} payload")
        data = np.frombuffer(payload, dtype="<f4").reshape(channels, rows, cols)
        geom = LevelGeometry(
            level_index=level_index,
            scale=scale,
            stride=stride,
            feature_dims=(rows, cols),
        )
        levels.append((geom, FeatureMap(np.ascontiguousarray(data))))

    if f.read(1):
        raise TrailingBytesError("trailing bytes after the last declared level")
    return FeaturePyramid(image_id=image_id, levels=tuple(levels), stage=stage)
