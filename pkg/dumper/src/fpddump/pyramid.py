"""Pyramid level planning: exact integer geometry, no pixels touched here.

The plan mirrors the detection engine's geometry contract. A pyramid has
``num_levels`` levels indexed 1..num_levels; the top level holds the input
(pre-shrunk when its long side exceeds ``canvas_side``) and every step down
divides both dims by ``scale_step``. Dims use exact integer floor arithmetic
for the sqrt(2) default so both sides of the file format agree bit for bit on
every level size.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class PyramidSpec:
    """Geometry knobs, field for field the engine's compatibility config."""

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

    def as_dict(self) -> dict[str, int | float]:
        return {
            "num_levels": self.num_levels,
            "scale_step": self.scale_step,
            "canvas_side": self.canvas_side,
            "stride": self.stride,
            "receptive_field": self.receptive_field,
            "filter_scaledown": self.filter_scaledown,
        }


@dataclass(frozen=True)
class LevelPlan:
    """Target pixel dims and resize ratio for one pyramid level."""

    index: int
    height: int
    width: int
    scale: float


def _floor_shrink(n: int, p: int, q: int, steps: int, scale_step: float) -> int:
    """floor(n * (p/q) / scale_step**steps), exact for the sqrt(2) default.

    Even step counts divide N = n*p by an integer. Odd counts use
    N / sqrt(2**steps) = N*sqrt(2) / 2**((steps+1)/2) together with
    floor(x/M) == floor(floor(x)/M) for integer M, where floor(N*sqrt(2))
    is isqrt(2*N*N).
    """
    num = n * p
    if scale_step == SQRT2:
        if steps % 2 == 0:
            return num // (q * (1 << (steps // 2)))
        m = q * (1 << ((steps + 1) // 2))
        return math.isqrt(2 * num * num) // m
    return math.floor((num / q) * scale_step ** (-steps))


def plan_levels(height: int, width: int, spec: PyramidSpec | None = None) -> tuple[LevelPlan, ...]:
    """Level dims and scales for an input image, smallest level first.

    Targets always come from the exact floor formula against the input dims,
    clamped to >= 1 pixel per axis.
    """
    spec = spec or PyramidSpec()
    if height < 1 or width < 1:
        raise ValueError(f"image dims must be >= 1, got {height}x{width}")
    long_side = max(height, width)
    if long_side > spec.canvas_side:
        p, q = spec.canvas_side, long_side
    else:
        p, q = 1, 1
    plans = []
    for index in range(1, spec.num_levels + 1):
        steps = spec.num_levels - index
        th = max(1, _floor_shrink(height, p, q, steps, spec.scale_step))
        tw = max(1, _floor_shrink(width, p, q, steps, spec.scale_step))
        scale = (p / q) * spec.scale_step ** (index - spec.num_levels)
        plans.append(LevelPlan(index=index, height=th, width=tw, scale=scale))
    return tuple(plans)
