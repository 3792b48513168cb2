"""Tiny end-to-end run: dataset, pretraining, Sketch-DETR, evaluation and T2B.

Finishes in well under a minute; the numbers are meaningless at this size.
Usage: python3 demos/quickstart.py [out_dir]
"""

import json
import sys
import tempfile
from pathlib import Path

from sgol import runs

GEN = {"train_scenes": 24, "test_scenes": 8, "train_sketches_per_class": 3, "test_sketches_per_class": 2}
MODEL = {"d": 16, "num_queries": 6, "heads": 2, "enc_layers": 1, "dec_layers": 1, "ffn_dim": 16,
         "backbone_channels": [4, 8, 8], "sketch_channels": [4, 8, 8], "mask_hidden": 4}
TRAIN = {"epochs": 3, "pretrain_epochs": 3, "classifier_epochs": 5, "model": MODEL}


def main(root: Path) -> None:
    ds = str(root / "dataset")
    print(json.dumps(runs.run("gen", None, dict(GEN, out=ds))["scenes"]))
    runs.run("train", None, dict(TRAIN, dataset=ds, out=str(root / "concat"), pretrain_first=True))
    det = str(root / "concat/pretrain/detector/model")
    clf = str(root / "concat/pretrain/classifier/model")
    runs.run("eval", None, dict(dataset=ds, checkpoint=str(root / "concat/model"), out=str(root / "eval")))
    runs.run("t2b", None, dict(dataset=ds, checkpoint=det, classifier=clf, out=str(root / "t2b")))
    for name in ("eval", "t2b"):
        box = runs.load_report(root / name)["metrics"]["box"]
        print(f"{name:5s} mAP {box['mAP']:.4f} AP50 {box['AP50']:.4f}")


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="sgol_")))
