"""Walk through the image pyramid geometry on one synthetic image.

Every later stage (features, filters, detections) lives on the grid built
here, so this demo prints the numbers worth internalizing: per-level pixel
dims, the exact scale ratios, feature-grid sizes, and how a feature cell
maps back to input-image pixels.
"""
import numpy as np

from pyrdet import PyramidConfig, build_image_pyramid, cell_to_pixel
from pyrdet.synthetic import make_corpus

image = make_corpus(1, seed=0, side=500)[0].image
config = PyramidConfig()
pyramid = build_image_pyramid(image, config)

print(f"input {image.shape[0]}x{image.shape[1]}, "
      f"{config.num_levels} levels, stride {config.stride}")
print(f"{'level':>5} {'pixels':>12} {'scale':>10} {'cells':>10}")
for lvl in pyramid.levels:
    h, w = lvl.image.shape[:2]
    geom = pyramid.geometry(lvl.index)
    print(f"{lvl.index:>5} {h:>6}x{w:<5} {lvl.scale:>10.4f} "
          f"{geom.rows:>5}x{geom.cols:<4}")

# Adjacent levels shrink by sqrt(2); the dims above are exact integer floors
# of side / sqrt(2)**k, so repeated resizing never drifts.
sides = [lvl.image.shape[0] for lvl in pyramid.levels]
ratios = [b / a for a, b in zip(sides, sides[1:])]
print("\nadjacent side ratios:", " ".join(f"{r:.4f}" for r in ratios))

# A feature cell covers a receptive-field square of input pixels. Map the
# center cell of the top level and of the coarsest level back to the image.
for index in (config.num_levels, 1):
    geom = pyramid.geometry(index)
    j, k = geom.rows // 2, geom.cols // 2
    (py, px), rect = cell_to_pixel(geom, j, k)
    print(f"\nlevel {index} cell ({j},{k}) sits at level pixel ({py},{px})")
    print(f"  receptive square in input coords: "
          f"x={rect.x:.0f} y={rect.y:.0f} w={rect.w:.0f} h={rect.h:.0f}")

# At full canvas size the whole pyramid holds a fixed window budget; every
# cell is one sliding-window position for a 1x1 filter.
canvas = np.zeros((config.canvas_side, config.canvas_side, 3), np.uint8)
total = sum(g.rows * g.cols for g in build_image_pyramid(canvas, config).geometries)
print(f"\ncanvas {config.canvas_side}x{config.canvas_side} -> {total} feature cells")
