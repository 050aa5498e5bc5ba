"""Regenerate the bundled fixtures under src/polypdet/data/.

* ``loss_fixture.json`` -- a 4x4 grid, 3 anchors, two occupied anchors.
  Confidence errors dominate, as they do early in training.
* ``model_comparison/<model>/`` -- ten 640x640 label files with one 200x200 polyp each
  and a detections file whose true-positive IoUs average to the model's
  reported value (0.71 / 0.82 / 0.86). Each detection keeps the ground-truth
  width and covers ``iou * 200`` px of its height, so IoU is exact.

Run from the repository root: ``python tools/make_fixtures.py``.
"""

from pathlib import Path

import numpy as np

from polypdet.geometry import NormBox, PixelBox, pixel_to_norm
from polypdet.losses import GridTarget, LossWeights, save_fixture
from polypdet.annotations import AnnotationRecord, write_label_file
from polypdet.metrics import Detection, write_detections

DATA = Path(__file__).resolve().parents[1] / "src" / "polypdet" / "data"
MODEL_IOU = {"YOLOv5s": 0.71, "YOLOv5m": 0.82, "YOLOv5l": 0.86}
OFFSETS = (-0.09, -0.05, -0.03, -0.01, 0.0, 0.0, 0.01, 0.03, 0.05, 0.09)


def loss_fixture() -> None:
    rng = np.random.default_rng(20240501)
    s, b = 4, 3
    obj = np.zeros((s * s, b), dtype=bool)
    obj[5, 0] = obj[10, 2] = True
    boxes = np.zeros((s * s, b, 4))
    boxes[obj] = np.column_stack([rng.uniform(0.2, 0.8, (2, 2)), rng.uniform(0.2, 0.5, (2, 2))])
    tgt = GridTarget(obj, boxes)
    pred = np.zeros((s * s, b, 5))
    pred[..., :4] = boxes + np.where(obj[..., None], rng.uniform(-0.05, 0.05, (s * s, b, 4)), 0.0)
    pred[..., 4] = np.where(obj, rng.uniform(0.4, 0.6, (s * s, b)), rng.uniform(0.05, 0.4, (s * s, b)))
    save_fixture(DATA / "loss_fixture.json", np.round(pred, 6), tgt, LossWeights())


def comparison_fixtures() -> None:
    gt = PixelBox(200.0, 200.0, 400.0, 400.0)
    norm = pixel_to_norm(gt, 640, 640)
    for model, target in MODEL_IOU.items():
        root = DATA / "model_comparison" / model
        (root / "labels").mkdir(parents=True, exist_ok=True)
        dets = []
        for k, off in enumerate(OFFSETS):
            image_id = f"polyp_{k:03d}"
            (root / "labels" / f"{image_id}.txt").write_text(
                write_label_file([AnnotationRecord(0, NormBox(*norm.as_tuple()))]))
            v = round(target + off, 2)
            dets.append(Detection(image_id, 0, PixelBox(200.0, 200.0, 400.0, 200.0 + 200.0 * v), 0.9))
            if k % 3 == 0:
                # stray low-confidence box far from the polyp
                dets.append(Detection(image_id, 0, PixelBox(10.0, 10.0, 60.0, 60.0), 0.3))
        (root / "detections.txt").write_text(write_detections(dets))


if __name__ == "__main__":
    loss_fixture()
    comparison_fixtures()
