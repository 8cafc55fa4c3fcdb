"""Train a one-component detector on synthetic images and run it.

The corpus plants one bright square patch per noise image, so the learning
problem is easy enough to watch end to end in seconds: pick a filter shape
from the box statistics, mine hard negatives until the SVM stops finding
new false positives, fit the box regressor, then detect on held-out images.
"""
import dataclasses

from pyrdet import (
    PyramidConfig,
    Rect,
    SeededConvFeatures,
    TrainConfig,
    TrainImage,
    assign_components,
    build_image_pyramid,
    config_digest,
    detect,
    extract_features,
    extract_positive,
    hard_negative_mine,
    iou,
    level_box_to_image_box,
    max_filter_pyramid,
    train_bbox_regressor,
    zscore_normalize,
)
from pyrdet.synthetic import make_corpus

pcfg = PyramidConfig(filter_scaledown=16)
extractor = SeededConvFeatures(seed=0, channels=32, mid_channels=16)


def norm5(image, image_id):
    fp = extract_features(build_image_pyramid(image, pcfg), extractor, image_id=image_id)
    return zscore_normalize(max_filter_pyramid(fp))[0]


corpus = make_corpus(16, seed=4)
fps = [norm5(item.image, f"img{i:04d}") for i, item in enumerate(corpus)]
train, held_out = list(zip(fps, corpus))[:12], list(zip(fps, corpus))[12:]

# One component; its filter shape comes from the median training box scaled
# down to feature cells.
labels, shapes = assign_components([it.gt for _, it in train], 1, filter_scaledown=16)
print(f"component filter shape: {shapes[0][0]}x{shapes[0][1]} cells")

images = [TrainImage(fp=fp, gt_boxes=(it.gt,), gt_components=(0,)) for fp, it in train]
cfg = TrainConfig(negatives_per_image=15)
model = hard_negative_mine(
    images, shapes, cfg,
    model_digest=config_digest(pcfg, extractor.descriptor),
    extractor_descriptor=extractor.descriptor,
)

meta = model.training_meta["components"][0]
print(f"positives: {meta['positives']}, mining rounds: {meta['rounds']}, "
      f"converged: {meta['converged']}")
print(f"hard negatives added per round: {meta['added_per_round']}")
print(f"svm objective per round: "
      + " ".join(f"{v:.4f}" for v in meta["objective_per_round"]))

# Box regressor: learn to nudge the snapped window onto the exact box.
pairs = []
for fp, item in train:
    s = extract_positive(fp, item.gt, shapes[0], component_id=0)
    if s is None:
        continue
    geom, _ = fp.level(s.source.level_index)
    det_box = level_box_to_image_box(
        Rect(float(s.source.col), float(s.source.row), float(s.source.w), float(s.source.h)),
        geom,
    )
    pairs.append((s.feature, det_box, item.gt))
regressor = train_bbox_regressor(pairs, ridge_lambda=1000.0, component_id=0)
refined_model = dataclasses.replace(model, regressors=(regressor,))

print("\nheld-out detections (top score per image):")
print(f"{'image':>8} {'score':>7} {'iou plain':>10} {'iou refined':>12}")
for fp, item in held_out:
    plain = detect(fp, model, threshold=-1.0)
    refined = detect(fp, refined_model, threshold=-1.0)
    if not plain:
        print(f"{fp.image_id:>8}    (no detection above threshold)")
        continue
    print(f"{fp.image_id:>8} {plain[0].score:>7.2f} "
          f"{iou(plain[0].box, item.gt):>10.3f} {iou(refined[0].box, item.gt):>12.3f}")
