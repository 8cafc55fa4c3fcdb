"""Run the two-package pipeline: dump features offline, then train on them.

The fpddump package writes per-image FPD1 feature pyramids with its own
convolutional network; the engine consumes the directory through the
--features-dir option without ever constructing an extractor of its own.
The glue is three file contracts: the FPD1 format, the manifest, and the
configuration digest embedded in every downstream artifact.
"""
import json
from pathlib import Path
from tempfile import TemporaryDirectory

from fpddump.cli import main as fpddump_main
from pyrdet.cli import main as pyrdet_main
from pyrdet.synthetic import make_corpus, write_corpus

with TemporaryDirectory() as td:
    root = Path(td)
    images = root / "images"
    write_corpus(images, make_corpus(4, seed=2, side=192))

    # Step 1: offline dump. 24 channels keeps the demo quick; a real run
    # would use the default 256.
    features = root / "features"
    rc = fpddump_main(["--images", str(images), "--out", str(features),
                       "--seed", "0", "--channels", "24"])
    assert rc == 0
    manifest = json.loads((features / "manifest.json").read_text())
    print(f"dumped {len(manifest['files'])} pyramids, stage {manifest['stage']}")
    print(f"network: {manifest['extractor']}")
    print(f"digest:  {manifest['config_digest'][:16]}...")

    # Step 2: the engine trains straight off the dump and adopts its digest
    # and network descriptor as the model's provenance.
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps({
        "pyramid": {"filter_scaledown": 16},
        "train": {"negatives_per_image": 10, "mining_rounds": 2},
    }), encoding="utf-8")
    model = root / "model.dpmf"
    rc = pyrdet_main(["train", "--config", str(cfg),
                      "--features-dir", str(features),
                      "--annotations", str(images / "annotations.txt"),
                      "--out", str(model)])
    assert rc == 0

    # Step 3: detection over the same dump. The digest in the detections
    # header ties the output back to the exact feature configuration.
    dets = root / "detections.txt"
    rc = pyrdet_main(["detect", "--features-dir", str(features),
                      "--model", str(model), "--threshold", "-1.0",
                      "--out", str(dets)])
    assert rc == 0
    lines = dets.read_text().splitlines()
    print(f"\ndetections header: {lines[0]}")
    for line in lines[1:4]:
        print(f"  {line}")

    # A dump made under any other network seed carries a different digest,
    # and the engine refuses it outright (exit code 3).
    other = root / "other"
    fpddump_main(["--images", str(images), "--out", str(other),
                  "--seed", "1", "--channels", "24"])
    rc = pyrdet_main(["detect", "--features-dir", str(other),
                      "--model", str(model), "--threshold", "-1.0",
                      "--out", str(root / "d2.txt")])
    print(f"\ndetect on a seed-1 dump with the seed-0 model: exit code {rc}")
