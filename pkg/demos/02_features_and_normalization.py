"""Follow one image through the feature pipeline: conv5 -> max5 -> norm5.

The detector never sees raw convolution outputs. Each level is first run
through a 3x3 stride-1 max filter (small translation tolerance), then every
channel is z-scored within its level so all levels and channels score on a
comparable footing. This demo prints the distribution before and after.
"""
import numpy as np

from pyrdet import (
    SeededConvFeatures,
    build_image_pyramid,
    extract_features,
    max_filter_pyramid,
    zscore_normalize,
)
from pyrdet.synthetic import make_corpus

image = make_corpus(1, seed=1, side=300)[0].image
pyramid = build_image_pyramid(image)
extractor = SeededConvFeatures(seed=0, channels=32, mid_channels=16)
print(f"extractor: {extractor.descriptor}")

conv5 = extract_features(pyramid, extractor, image_id="demo")
max5 = max_filter_pyramid(conv5)
norm5, stats = zscore_normalize(max5)

print(f"\nstages: {conv5.stage.name} -> {max5.stage.name} -> {norm5.stage.name}")
print(f"{'level':>5} {'grid':>8} {'conv5 mean/std':>20} {'norm5 mean/std':>20}")
for (geom, raw), (_, normed) in zip(conv5.levels, norm5.levels):
    if raw.data.size == 0:
        continue
    print(f"{geom.level_index:>5} {geom.rows:>4}x{geom.cols:<3} "
          f"{raw.data.mean():>10.3f}/{raw.data.std():<8.3f} "
          f"{normed.data.mean():>10.3f}/{normed.data.std():<8.3f}")

# The max filter is clipped at level borders: corners pool 4 cells, edges 6,
# interior cells the full 9. A peak therefore spreads to its neighbors but
# never leaves the grid.
top = conv5.levels[-1]
probe = np.zeros_like(top[1].data)
probe[0, 5, 5] = 1.0
from pyrdet import FeatureMap, FeaturePyramid, Stage  # noqa: E402

single = FeaturePyramid(image_id="probe", levels=((top[0], FeatureMap(probe)),),
                        stage=Stage.CONV5)
pooled = max_filter_pyramid(single).levels[0][1].data
ys, xs = np.nonzero(pooled[0])
print(f"\nunit spike at (5,5) pools to rows {ys.min()}..{ys.max()}, "
      f"cols {xs.min()}..{xs.max()}")

# Normalization stats are per level and per channel; a few sigmas:
geom, _ = norm5.levels[-1]
level_stats = stats.level(geom.level_index)
print(f"level {geom.level_index} first 4 channel sigmas: "
      + " ".join(f"{s:.3f}" for s in level_stats.sigma[:4]))
