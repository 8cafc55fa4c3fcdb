"""Image pyramid construction and cell/pixel coordinate geometry.

A pyramid has ``num_levels`` levels indexed 1..num_levels. The top level holds
the input image (pre-shrunk if its long side exceeds ``canvas_side``); every
step down divides both dims by ``scale_step``. Feature cells later sit on a
``stride``-spaced grid over each level, so all geometry here is exact integer
floor arithmetic: for the default step sqrt(2), dims are computed with integer
isqrt so that e.g. floor(16 / sqrt(2)**6) == 2 even where IEEE floats land on
1.999...; custom steps fall back to float floors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .boxes import Rect

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class PyramidConfig:
    """Geometry knobs shared by pyramid construction, features, and training."""

    num_levels: int = 7
    scale_step: float = SQRT2
    canvas_side: int = 1713
    stride: int = 16
    receptive_field: int = 163
    filter_scaledown: int = 8

    def __post_init__(self) -> None:
        if self.num_levels < 1:
            raise ValueError(f"num_levels must be >= 1, got {self.num_levels}")
        if not self.scale_step > 1.0:
            raise ValueError(f"scale_step must be > 1, got {self.scale_step}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.canvas_side < self.stride:
            raise ValueError(
                f"canvas_side must be >= stride, got {self.canvas_side} < {self.stride}"
            )
        if self.receptive_field < 1:
            raise ValueError(f"receptive_field must be >= 1, got {self.receptive_field}")
        if self.filter_scaledown < 1:
            raise ValueError(f"filter_scaledown must be >= 1, got {self.filter_scaledown}")


@dataclass(frozen=True)
class LevelGeometry:
    """Feature-grid geometry of one pyramid level.

    ``feature_dims`` is (rows, cols) = floor(level image dims / stride).
    ``scale`` is the resize ratio of this level relative to the input image.
    """

    level_index: int
    scale: float
    stride: int
    feature_dims: tuple[int, int]
    receptive_field: int = 163

    @property
    def rows(self) -> int:
        return self.feature_dims[0]

    @property
    def cols(self) -> int:
        return self.feature_dims[1]


@dataclass(frozen=True)
class PyramidLevel:
    index: int
    image: np.ndarray  # HxWx3 uint8
    scale: float


@dataclass(frozen=True)
class ImagePyramid:
    """Ordered levels (index ascending, smallest image first) plus config."""

    levels: tuple[PyramidLevel, ...]
    config: PyramidConfig

    def level(self, index: int) -> PyramidLevel:
        for lvl in self.levels:
            if lvl.index == index:
                return lvl
        raise IndexError(f"no pyramid level with index {index}")

    def geometry(self, index: int) -> LevelGeometry:
        lvl = self.level(index)
        h, w = lvl.image.shape[:2]
        return LevelGeometry(
            level_index=lvl.index,
            scale=lvl.scale,
            stride=self.config.stride,
            feature_dims=(h // self.config.stride, w // self.config.stride),
            receptive_field=self.config.receptive_field,
        )

    @property
    def geometries(self) -> tuple[LevelGeometry, ...]:
        return tuple(self.geometry(lvl.index) for lvl in self.levels)


def _floor_shrink(n: int, p: int, q: int, steps: int, scale_step: float) -> int:
    """floor(n * (p/q) / scale_step**steps), exact for the sqrt(2) default.

    For scale_step == sqrt(2): the target is N / (q * 2**(steps/2)) with
    N = n*p. Even steps divide by an integer directly; odd steps use
    N/sqrt(2**steps) = N*sqrt(2)/2**((steps+1)/2) and the identity
    floor(x/M) == floor(floor(x)/M) for integer M, with floor(N*sqrt(2))
    computed as isqrt(2*N*N).
    """
    num = n * p
    if scale_step == SQRT2:
        if steps % 2 == 0:
            return num // (q * (1 << (steps // 2)))
        m = q * (1 << ((steps + 1) // 2))
        return math.isqrt(2 * num * num) // m
    return math.floor((num / q) * scale_step ** (-steps))


def _interp_axis(arr: np.ndarray, out_len: int, axis: int) -> np.ndarray:
    """Linear interpolation along one axis with center-aligned sampling."""
    in_len = arr.shape[axis]
    if out_len == in_len:
        return arr
    pos = (np.arange(out_len, dtype=np.float64) + 0.5) * (in_len / out_len) - 0.5
    base = np.floor(pos)
    frac = (pos - base).astype(np.float32)
    i0 = np.clip(base, 0, in_len - 1).astype(np.intp)
    i1 = np.clip(base + 1, 0, in_len - 1).astype(np.intp)
    a = np.take(arr, i0, axis=axis)
    b = np.take(arr, i1, axis=axis)
    shape = [1] * arr.ndim
    shape[axis] = out_len
    f = frac.reshape(shape)
    return a * (1.0 - f) + b * f


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of an HxWx3 uint8 image to exact output dims.

    Separable two-pass interpolation in float32, rounded to uint8 once at the
    end. Sampling is center-aligned with edge clamping; no antialias filter.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output dims must be >= 1, got {out_h}x{out_w}")
    work = image.astype(np.float32)
    work = _interp_axis(work, out_h, axis=0)
    work = _interp_axis(work, out_w, axis=1)
    return np.clip(np.rint(work), 0, 255).astype(np.uint8)


def build_image_pyramid(image: np.ndarray, config: PyramidConfig | None = None) -> ImagePyramid:
    """Build the scale_step pyramid for an HxWx3 uint8 image.

    The top level is the input itself when it fits the canvas, else the input
    pre-shrunk so its long side equals canvas_side (aspect preserved, recorded
    in scale). Each lower level is the next one resized down by scale_step;
    target dims always come from the exact floor formula against the input
    dims so repeated resampling cannot drift, and are clamped to >= 1 pixel.
    """
    config = config or PyramidConfig()
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 image, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("empty image")
    if arr.dtype != np.uint8:
        raise ValueError(f"expected uint8 pixels, got {arr.dtype}")

    in_h, in_w = arr.shape[:2]
    long_side = max(in_h, in_w)
    if long_side > config.canvas_side:
        p, q = config.canvas_side, long_side
    else:
        p, q = 1, 1

    n = config.num_levels
    dims: dict[int, tuple[int, int]] = {}
    scales: dict[int, float] = {}
    for index in range(n, 0, -1):
        steps = n - index
        th = max(1, _floor_shrink(in_h, p, q, steps, config.scale_step))
        tw = max(1, _floor_shrink(in_w, p, q, steps, config.scale_step))
        dims[index] = (th, tw)
        scales[index] = (p / q) * config.scale_step ** (index - n)

    levels: list[PyramidLevel] = []
    prev: np.ndarray | None = None
    for index in range(n, 0, -1):
        th, tw = dims[index]
        if index == n:
            img = arr if (th, tw) == (in_h, in_w) else resize_bilinear(arr, th, tw)
        else:
            assert prev is not None
            img = prev if (th, tw) == prev.shape[:2] else resize_bilinear(prev, th, tw)
        levels.append(PyramidLevel(index=index, image=img, scale=scales[index]))
        prev = img

    levels.reverse()
    return ImagePyramid(levels=tuple(levels), config=config)


def cell_to_pixel(
    level: LevelGeometry, j: int, k: int
) -> tuple[tuple[int, int], Rect]:
    """Map feature cell (row j, col k) to its level pixel and receptive rect.

    Returns ((y, x) in level pixel coords, receptive square in input-image
    coords). The square is receptive_field pixels on a side, centered on the
    cell's pixel, clipped to the extent covered by the feature grid, then
    divided by the level scale.
    """
    rows, cols = level.feature_dims
    if not (0 <= j < rows and 0 <= k < cols):
        raise IndexError(f"cell ({j}, {k}) outside feature grid {rows}x{cols}")
    py = level.stride * j
    px = level.stride * k
    half = level.receptive_field // 2
    ext_y = rows * level.stride
    ext_x = cols * level.stride
    y0 = max(0.0, py - half)
    x0 = max(0.0, px - half)
    y1 = min(float(ext_y), py - half + level.receptive_field)
    x1 = min(float(ext_x), px - half + level.receptive_field)
    s = level.scale
    rect = Rect(x0 / s, y0 / s, (x1 - x0) / s, (y1 - y0) / s)
    return (py, px), rect


def image_box_to_level_box(box: Rect, level: LevelGeometry) -> Rect:
    """Input-image box -> fractional feature-cell box at this level."""
    if box.w <= 0 or box.h <= 0:
        raise ValueError(f"degenerate box: w={box.w}, h={box.h}")
    f = level.scale / level.stride
    return Rect(box.x * f, box.y * f, box.w * f, box.h * f)


def level_box_to_image_box(box: Rect, level: LevelGeometry) -> Rect:
    """Fractional feature-cell box at this level -> input-image box."""
    if box.w <= 0 or box.h <= 0:
        raise ValueError(f"degenerate box: w={box.w}, h={box.h}")
    f = level.stride / level.scale
    return Rect(box.x * f, box.y * f, box.w * f, box.h * f)
