"""Synthetic detection corpora: noise backgrounds with one planted texture.

Used by the demos and the end-to-end tests. Each image is low-contrast noise
with a single procedurally textured square patch planted at a random size
(spanning two octaves, skewed toward the small end) and position; the patch
rect is the ground truth.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .annotations import Annotation, write_annotations
from .boxes import Rect


def textured_patch(side: int) -> np.ndarray:
    """Deterministic high-contrast texture, side x side x 3 uint8.

    A fixed plaid of sinusoids plus a dark ring; the pattern is analytic in
    normalized coordinates, so the same motif appears at every size.
    """
    if side < 1:
        raise ValueError(f"side must be >= 1, got {side}")
    u = (np.arange(side) + 0.5) / side
    uu, vv = np.meshgrid(u, u, indexing="xy")
    tau = 2.0 * np.pi
    r = np.hypot(uu - 0.5, vv - 0.5)
    ring = np.exp(-(((r - 0.32) / 0.07) ** 2))
    red = 0.55 + 0.35 * np.sin(tau * 3.0 * uu) * np.sin(tau * 3.0 * vv)
    green = 0.50 + 0.40 * np.sin(tau * 5.0 * uu + 1.0) * np.cos(tau * 2.0 * vv)
    blue = 0.45 + 0.35 * np.cos(tau * 4.0 * (uu + vv))
    img = np.stack([red * (1.0 - 0.6 * ring), green * (1.0 - 0.5 * ring), blue], axis=-1)
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class SyntheticImage:
    image: np.ndarray  # HxWx3 uint8
    gt: Rect


def make_image(
    rng: np.random.Generator,
    side: int = 256,
    min_patch: int = 48,
    octaves: float = 2.0,
    noise_sigma: float = 20.0,
) -> SyntheticImage:
    """One noise image with a planted patch; size skewed toward min_patch."""
    background = rng.normal(128.0, noise_sigma, size=(side, side, 3))
    img = np.clip(np.rint(background), 0, 255).astype(np.uint8)
    # Quadratic skew keeps most patches near the small end while the size
    # range still spans the full octave budget.
    t = octaves * float(rng.random()) ** 2
    patch_side = int(round(min_patch * 2.0**t))
    patch_side = min(patch_side, side - 4)
    patch = textured_patch(patch_side)
    x = int(rng.integers(2, side - patch_side - 1))
    y = int(rng.integers(2, side - patch_side - 1))
    img[y : y + patch_side, x : x + patch_side] = patch
    return SyntheticImage(image=img, gt=Rect(float(x), float(y), float(patch_side), float(patch_side)))


def make_corpus(
    n: int,
    seed: int = 0,
    side: int = 256,
    min_patch: int = 48,
    octaves: float = 2.0,
) -> list[SyntheticImage]:
    rng = np.random.default_rng(seed)
    return [make_image(rng, side=side, min_patch=min_patch, octaves=octaves) for _ in range(n)]


def write_corpus(
    directory: str | Path,
    images: list[SyntheticImage],
    prefix: str = "img",
) -> list[Annotation]:
    """Write PNGs plus an annotations.txt; returns the annotations."""
    from PIL import Image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    annotations = []
    for i, item in enumerate(images):
        image_id = f"{prefix}{i:04d}"
        Image.fromarray(item.image).save(directory / f"{image_id}.png")
        annotations.append(Annotation(image_id=image_id, rect=item.gt))
    write_annotations(directory / "annotations.txt", annotations)
    return annotations
