"""Feature pyramids: extraction stages, max filtering, and normalization.

Per-level feature maps move through three tagged stages: raw convolutional
maps (conv5), the 3x3 stride-1 max-filtered maps (max5), and the per-level
per-channel z-scored maps (norm5). Stage transitions only ever go
conv5 -> max5 -> norm5; operations check the tag and raise
PipelineOrderError otherwise.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .config import config_digest
from .errors import DataError, ExtractionError, PipelineOrderError
from .pyramid import ImagePyramid, LevelGeometry

SIGMA_FLOOR = 1e-6


class Stage(enum.IntEnum):
    """Pipeline stage tag; values match the feature dump wire format."""

    CONV5 = 0
    MAX5 = 1
    NORM5 = 2

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class FeatureMap:
    """One level's features: float32 array of shape (channels, rows, cols)."""

    data: np.ndarray

    def __post_init__(self) -> None:
        if self.data.ndim != 3:
            raise ValueError(f"feature map must be 3-D (C, rows, cols), got {self.data.shape}")
        if self.data.dtype != np.float32:
            raise ValueError(f"feature map must be float32, got {self.data.dtype}")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def rows(self) -> int:
        return self.data.shape[1]

    @property
    def cols(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class FeaturePyramid:
    """Stage-tagged per-level feature maps for one image.

    ``extractor_descriptor`` and ``config_digest`` record provenance when the
    pyramid was produced in-process; pyramids parsed from bare dumps carry
    None and compatibility is then checked at the file/manifest layer.
    """

    image_id: str
    levels: tuple[tuple[LevelGeometry, FeatureMap], ...]
    stage: Stage
    extractor_descriptor: str | None = None
    config_digest: str | None = None

    def level(self, index: int) -> tuple[LevelGeometry, FeatureMap]:
        for geom, fm in self.levels:
            if geom.level_index == index:
                return geom, fm
        raise IndexError(f"no feature level with index {index}")

    @property
    def channels(self) -> int:
        return self.levels[0][1].channels if self.levels else 0


@dataclass(frozen=True)
class LevelNormStats:
    level_index: int
    mu: np.ndarray  # (channels,) float64
    sigma: np.ndarray  # (channels,) float64, floored at SIGMA_FLOOR


@dataclass(frozen=True)
class NormStats:
    levels: tuple[LevelNormStats, ...]

    def level(self, index: int) -> LevelNormStats:
        for st in self.levels:
            if st.level_index == index:
                return st
        raise IndexError(f"no norm stats for level {index}")


@runtime_checkable
class FeatureExtractor(Protocol):
    """Deterministic map from a level image to a (channels, H//stride, W//stride) array."""

    descriptor: str
    channels: int
    stride: int

    def extract(self, image: np.ndarray) -> np.ndarray: ...


def _he_weights(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(np.float32)


class SeededConvFeatures:
    """Built-in extractor: fixed two-layer strided conv stack, seeded weights.

    Layer 1 is an 8x8 stride-8 convolution (3 -> mid channels), layer 2 a 2x2
    stride-2 convolution (mid -> channels), with a ReLU between, so output
    dims are exactly floor(input/16) on each axis. Weights come from a seeded
    PRNG and are fully determined by the descriptor.
    """

    stride = 16

    def __init__(self, seed: int = 0, channels: int = 64, mid_channels: int = 32) -> None:
        if channels < 1 or mid_channels < 1:
            raise ValueError("channel counts must be >= 1")
        self.seed = int(seed)
        self.channels = int(channels)
        self.mid_channels = int(mid_channels)
        rng = np.random.default_rng(self.seed)
        self.w1 = _he_weights(rng, (mid_channels, 3, 8, 8), fan_in=3 * 8 * 8)
        self.b1 = rng.normal(0.0, 0.1, size=mid_channels).astype(np.float32)
        self.w2 = _he_weights(rng, (channels, mid_channels, 2, 2), fan_in=mid_channels * 4)
        self.b2 = rng.normal(0.0, 0.1, size=channels).astype(np.float32)
        self.descriptor = f"seeded-conv2:seed={self.seed},mid={mid_channels},channels={channels}"

    def extract(self, image: np.ndarray) -> np.ndarray:
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError(f"expected HxWx3 image, got shape {image.shape}")
        x = image.astype(np.float32) / 255.0
        # floor(n/8)//2 == floor(n/16), so output dims track the level geometry
        out_h, out_w = image.shape[0] // 16, image.shape[1] // 16
        if out_h == 0 or out_w == 0:
            return np.zeros((self.channels, out_h, out_w), dtype=np.float32)
        h1, w1 = image.shape[0] // 8, image.shape[1] // 8
        blocks = x[: h1 * 8, : w1 * 8].reshape(h1, 8, w1, 8, 3)
        mid = np.einsum("yaxbc,mcab->myx", blocks, self.w1) + self.b1[:, None, None]
        np.maximum(mid, 0.0, out=mid)
        h2, w2 = h1 // 2, w1 // 2
        blocks2 = mid[:, : h2 * 2, : w2 * 2].reshape(self.mid_channels, h2, 2, w2, 2)
        out = np.einsum("myaxb,nmab->nyx", blocks2, self.w2) + self.b2[:, None, None]
        return np.ascontiguousarray(out, dtype=np.float32)


def extract_features(
    pyr: ImagePyramid, extractor: FeatureExtractor, image_id: str = ""
) -> FeaturePyramid:
    """Run the extractor over every level; returns a conv5-stage pyramid.

    Each level's map must come out with dims equal to the level geometry's
    feature_dims; a mismatch or an extractor failure raises ExtractionError
    naming the level.
    """
    if extractor.channels < 1:
        raise ExtractionError(f"extractor reports {extractor.channels} channels")
    if extractor.stride != pyr.config.stride:
        raise ExtractionError(
            f"extractor stride {extractor.stride} != config stride {pyr.config.stride}"
        )
    out: list[tuple[LevelGeometry, FeatureMap]] = []
    for lvl in pyr.levels:
        geom = pyr.geometry(lvl.index)
        try:
            arr = extractor.extract(lvl.image)
        except Exception as exc:  # noqa: BLE001 - re-tag with the level index
            raise ExtractionError(f"level {lvl.index}: extraction failed: {exc}") from exc
        expected = (extractor.channels, *geom.feature_dims)
        if arr.shape != expected:
            raise ExtractionError(
                f"level {lvl.index}: extractor returned shape {arr.shape}, expected {expected}"
            )
        out.append((geom, FeatureMap(np.ascontiguousarray(arr, dtype=np.float32))))
    return FeaturePyramid(
        image_id=image_id,
        levels=tuple(out),
        stage=Stage.CONV5,
        extractor_descriptor=extractor.descriptor,
        config_digest=config_digest(pyr.config, extractor.descriptor),
    )


def _max_filter_3x3(data: np.ndarray) -> np.ndarray:
    """Per-channel 3x3 max filter, windows clipped at the borders."""
    out = data.copy()
    rows, cols = data.shape[1], data.shape[2]
    if rows == 0 or cols == 0:
        return out
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            ys = slice(max(0, dy), rows + min(0, dy))
            xs = slice(max(0, dx), cols + min(0, dx))
            yd = slice(max(0, -dy), rows + min(0, -dy))
            xd = slice(max(0, -dx), cols + min(0, -dx))
            np.maximum(out[:, yd, xd], data[:, ys, xs], out=out[:, yd, xd])
    return out


def max_pool_3x3(fm: FeatureMap) -> FeatureMap:
    """3x3 stride-1 max filter preserving dims (clipped at borders)."""
    return FeatureMap(_max_filter_3x3(fm.data))


def max_filter_pyramid(fp: FeaturePyramid) -> FeaturePyramid:
    """Apply the 3x3 max filter to every level of a conv5 pyramid."""
    if fp.stage != Stage.CONV5:
        raise PipelineOrderError(f"max filter expects conv5 input, got {fp.stage.label}")
    levels = tuple((geom, max_pool_3x3(fm)) for geom, fm in fp.levels)
    return FeaturePyramid(
        image_id=fp.image_id,
        levels=levels,
        stage=Stage.MAX5,
        extractor_descriptor=fp.extractor_descriptor,
        config_digest=fp.config_digest,
    )


def zscore_normalize(fp: FeaturePyramid) -> tuple[FeaturePyramid, NormStats]:
    """Per-level per-channel z-scoring of a max5 pyramid.

    For each level i and channel c, output = (x - mu_ic) / sigma_ic with
    mu/sigma the per-channel mean and population std over that level's cells,
    sigma floored at SIGMA_FLOOR (constant channels map to zeros). Non-finite
    input raises DataError naming the level and channel.
    """
    if fp.stage != Stage.MAX5:
        raise PipelineOrderError(f"z-score expects max5 input, got {fp.stage.label}")
    out_levels: list[tuple[LevelGeometry, FeatureMap]] = []
    stats: list[LevelNormStats] = []
    for geom, fm in fp.levels:
        flat = fm.data.reshape(fm.channels, -1).astype(np.float64)
        finite = np.isfinite(flat).all(axis=1)
        if not finite.all():
            bad = int(np.nonzero(~finite)[0][0])
            raise DataError(
                f"non-finite feature values at level {geom.level_index}, channel {bad}"
            )
        if flat.shape[1] == 0:
            mu = np.zeros(fm.channels)
            sigma = np.full(fm.channels, SIGMA_FLOOR)
            normed = fm.data.copy()
        else:
            mu = flat.mean(axis=1)
            sigma = np.maximum(flat.std(axis=1), SIGMA_FLOOR)
            normed = (
                (fm.data.astype(np.float64) - mu[:, None, None]) / sigma[:, None, None]
            ).astype(np.float32)
        out_levels.append((geom, FeatureMap(normed)))
        stats.append(LevelNormStats(level_index=geom.level_index, mu=mu, sigma=sigma))
    normed_fp = FeaturePyramid(
        image_id=fp.image_id,
        levels=tuple(out_levels),
        stage=Stage.NORM5,
        extractor_descriptor=fp.extractor_descriptor,
        config_digest=fp.config_digest,
    )
    return normed_fp, NormStats(levels=tuple(stats))
