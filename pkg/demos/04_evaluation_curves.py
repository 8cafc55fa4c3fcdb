"""Score detections against ground truth and sweep the threshold.

Uses a hand-built set of detections over two images so every number in the
output can be checked mentally: which detection matches which box, how the
precision/recall point moves as the threshold drops, and what the two
scoring protocols (discrete vs continuous credit) do to average precision.
"""
from pathlib import Path
from tempfile import TemporaryDirectory

from pyrdet import Annotation, Detection, Rect, evaluate, match_detections
from pyrdet.evaluation import write_curve_csv

annotations = [
    Annotation("a", Rect(10, 10, 40, 40)),
    Annotation("a", Rect(100, 10, 40, 40)),
    Annotation("b", Rect(20, 20, 50, 50)),
]
detections = [
    # Near-perfect hit, slightly shifted hit, far miss, and a second-image hit.
    Detection("a", Rect(12, 10, 40, 40), 0.95, 0, 7),
    Detection("a", Rect(105, 15, 40, 40), 0.60, 0, 7),
    Detection("a", Rect(200, 200, 40, 40), 0.40, 0, 7),
    Detection("b", Rect(25, 25, 50, 50), 0.80, 0, 7),
]

result = match_detections(detections, annotations, iou_min=0.5)
print("matched pairs (one-to-one, best score first):")
for pair in result.matched:
    print(f"  {pair.detection.image_id} score={pair.detection.score:.2f} "
          f"iou={pair.iou:.3f}")
print("false positives:", [f"{d.image_id}@{d.score:.2f}" for d in result.false_positives])

# AP uses the precision envelope, so the low-scored miss at the tail cannot
# pull it down once full recall was already reached at precision 1.
curves = evaluate(detections, annotations, protocol="discrete", iou_min=0.5)
print(f"\ndiscrete AP: {curves.ap:.4f}")
print(f"{'thresh':>8} {'recall':>8} {'precision':>10}")
for t, x, y in curves.pr.points:
    print(f"{t:>8.2f} {x:>8.3f} {y:>10.3f}")

# Continuous credit pays each match its IOU instead of a full point, so AP
# drops unless every match is pixel-perfect.
cont = evaluate(detections, annotations, protocol="continuous", iou_min=0.5)
print(f"continuous AP: {cont.ap:.4f}")

# The same sweep also yields ROC-style and miss-rate curves; all three land
# in CSV files ready for plotting.
with TemporaryDirectory() as td:
    for name, curve in [("pr", curves.pr), ("roc", curves.roc),
                        ("tpr_fppi", curves.tpr_fppi)]:
        path = Path(td) / f"{name}.csv"
        write_curve_csv(path, curve)
        first = path.read_text().splitlines()[:2]
        print(f"{name}.csv: {first[0]}  |  {first[1]}")
