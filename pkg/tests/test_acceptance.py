"""Acceptance gate: one test per criterion, each at its stated tolerance and time budget.

Every test appends a PASS/FAIL line to ``RESULTS``; ``conftest.py`` prints them
in the terminal summary. Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import itertools
import json
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import write_marker_dataset, write_stub_dataset
from oracles import brute_force_nms, dense_grid_ap, raster_iou
from polypdet import kernels
from polypdet.annotations import AnnotationRecord, parse_label_file, scan_dataset, write_label_file
from polypdet.augmentation import (
    AugmentPlan,
    FlipHorizontal,
    FlipVertical,
    Rotate,
    Scale,
    ShiftHeight,
    ShiftWidth,
    Translate,
    apply_affine_to_bbox,
    apply_affine_to_image,
    augment_dataset,
    op_to_affine,
)
from polypdet.augmentation import ROTATE_RANGE, SCALE_RANGE, SHIFT_RANGE, TRANSLATE_RANGE
from polypdet.cli import bundled_path, main
from polypdet.decoder import DecoderConfig, decode_all, nms, zero_volumes
from polypdet.geometry import NormBox, PixelBox, giou, iou, norm_to_pixel, pixel_to_norm
from polypdet.losses import (
    GridTarget,
    LossWeights,
    analytic_gradient,
    box_loss,
    fit_boxes_demo,
    load_fixture,
    numeric_gradient,
    objectness_loss,
)
from polypdet.metrics import Detection, GroundTruth, ap_11point, mean_average_precision
from polypdet.raster import make_marker_image, tight_bbox_of_color

RESULTS: list[str] = []


def verdict(n: int, title: str, ok: bool, detail: str, elapsed: float, limit: float | None = None) -> None:
    if limit is not None and elapsed >= limit:
        ok = False
        detail += f"; over the {limit:g} s budget"
    budget = f" < {limit:g} s" if limit is not None else ""
    line = f"{'PASS' if ok else 'FAIL'} [{n:2d}] {title}: {detail} ({elapsed:.2f} s{budget})"
    RESULTS.append(line)
    print(line)
    assert ok, line


# 1 ------------------------------------------------------------------------------

def test_01_box_count_invariant():
    t = time.perf_counter()
    counts = {}
    for size in (640, 320):
        cfg = DecoderConfig(input_size=size)
        counts[size] = len(decode_all(zero_volumes(cfg), cfg))
    elapsed = time.perf_counter() - t
    verdict(1, "decode_all box count", counts == {640: 25200, 320: 6300},
            f"640 -> {counts[640]}, 320 -> {counts[320]}", elapsed, 1.0)


# 2 ------------------------------------------------------------------------------

def _ranked(pattern, n_gt):
    gts = [GroundTruth("i", 0, PixelBox(300 * k, 0, 300 * k + 100, 100)) for k in range(n_gt)]
    dets, used = [], 0
    for rank, hit in enumerate(pattern):
        conf = 1.0 - rank / 100
        if hit:
            dets.append(Detection("i", 0, gts[used].box, conf))
            used += 1
        else:
            dets.append(Detection("i", 0, PixelBox(5000 + 10 * rank, 5000, 5005 + 10 * rank, 5005), conf))
    return dets, gts


def test_02_ap_oracle_equivalence():
    t = time.perf_counter()
    worst, cases = 0.0, 0
    for n_gt in range(0, 4):
        for n in range(0, 7):
            for pattern in itertools.product((False, True), repeat=n):
                if sum(pattern) > n_gt:
                    continue
                dets, gts = _ranked(pattern, n_gt)
                worst = max(worst, abs(ap_11point(dets, gts).value - dense_grid_ap(pattern, n_gt)))
                cases += 1
    elapsed = time.perf_counter() - t
    verdict(2, "11-point AP vs dense-grid oracle", worst <= 1e-12,
            f"{cases} ranking patterns, max |diff| {worst:.1e} (tol 1e-12)", elapsed, 10.0)


# 3 ------------------------------------------------------------------------------

def test_03_iou_giou_correctness():
    t = time.perf_counter()
    rng = np.random.default_rng(3)
    mismatches = giou_violations = 0
    for _ in range(10_000):
        boxes = []
        for _ in range(2):
            x = np.sort(rng.choice(65, 2, replace=False))
            y = np.sort(rng.choice(65, 2, replace=False))
            boxes.append(PixelBox(float(x[0]), float(y[0]), float(x[1]), float(y[1])))
        a, b = boxes
        v = iou(a, b)
        if v != float(raster_iou(a.as_tuple(), b.as_tuple(), 64)):
            mismatches += 1
        if giou(a, b) > v:
            giou_violations += 1
    elapsed = time.perf_counter() - t
    verdict(3, "IoU exact vs pixel count, GIoU <= IoU", mismatches == 0 and giou_violations == 0,
            f"10000 pairs, {mismatches} IoU mismatches, {giou_violations} GIoU violations", elapsed, 5.0)


# 4 ------------------------------------------------------------------------------

def test_04_gradient_check():
    t = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        s, b = int(rng.choice([2, 4, 8])), int(rng.choice([1, 3]))
        tgt = GridTarget(rng.uniform(size=(s * s, b)) < 0.4, rng.uniform(0, 1, (s * s, b, 4)))
        pred = rng.uniform(0, 1, (s * s, b, 5))
        w = LossWeights(*rng.uniform(0.01, 1, 3))
        a, n = analytic_gradient(pred, tgt, w), numeric_gradient(pred, tgt, w, step=1e-5)
        den = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        worst = max(worst, float((np.abs(a - n) / den).max()))
    elapsed = time.perf_counter() - t
    verdict(4, "analytic vs finite-difference gradient", worst < 1e-4,
            f"100 instances, max rel err {worst:.2e} (tol 1e-4)", elapsed, 10.0)


# 5 ------------------------------------------------------------------------------

def test_05_loss_fixtures():
    t = time.perf_counter()
    box_tgt = GridTarget(np.array([[True]]), np.array([[[0.4, 0.5, 0.5, 0.5]]]))
    box_pred = np.array([[[0.5, 0.5, 0.5, 0.5, 1.0]]])
    bl = box_loss(box_pred, box_tgt, LossWeights(lambda_coord=0.05))
    obj_tgt = GridTarget(np.array([[True], [False]]), np.zeros((2, 1, 4)))
    obj_pred = np.array([[[0, 0, 0, 0, 0.8]], [[0, 0, 0, 0, 0.1]]], dtype=float)
    ol = objectness_loss(obj_pred, obj_tgt, LossWeights(lambda_obj=1.0, lambda_noobj=0.5))
    elapsed = time.perf_counter() - t
    ok = abs(bl - 0.000875) <= 1e-12 and abs(ol - 0.045) <= 1e-12
    verdict(5, "loss hand cases", ok, f"box {bl!r} (want 0.000875), objectness {ol!r} (want 0.045)", elapsed)


# 6 ------------------------------------------------------------------------------

def _signed(rng, lo, hi):
    return float(rng.choice([-1.0, 1.0]) * rng.uniform(lo, hi))


FAMILIES = {
    "rotate": lambda rng: Rotate(_signed(rng, *ROTATE_RANGE)),
    "shift": lambda rng: (ShiftWidth if rng.uniform() < 0.5 else ShiftHeight)(_signed(rng, *SHIFT_RANGE)),
    "scale": lambda rng: Scale(float(rng.uniform(*SCALE_RANGE))),
    "translate": lambda rng: Translate(_signed(rng, *TRANSLATE_RANGE), _signed(rng, *TRANSLATE_RANGE)),
    "flip": lambda rng: FlipHorizontal() if rng.uniform() < 0.5 else FlipVertical(),
}


def test_06_augmentation_consistency():
    t = time.perf_counter()
    rng = np.random.default_rng(6)
    size, red = 640, (255, 0, 0)
    worst = {}
    involution_failures = 0
    for name, make in FAMILIES.items():
        worst[name] = 0.0
        for _ in range(50):
            w, h = rng.integers(40, 260, 2)
            x1, y1 = rng.integers(100, size - 100 - w), rng.integers(100, size - 100 - h)
            marker = PixelBox(float(x1), float(y1), float(x1 + w), float(y1 + h))
            img = make_marker_image(size, size, marker, red)
            tf = op_to_affine(make(rng), size, size)
            out = apply_affine_to_image(img, tf, "bilinear")
            emitted = norm_to_pixel(apply_affine_to_bbox(pixel_to_norm(marker, size, size), tf, size, size),
                                    size, size)
            recovered = tight_bbox_of_color(out, red)
            worst[name] = max(worst[name], max(abs(p - q) for p, q in zip(emitted.as_tuple(), recovered.as_tuple())))
            if name == "flip":
                twice = apply_affine_to_image(apply_affine_to_image(img, tf, "nearest"), tf, "nearest")
                involution_failures += twice != img
    elapsed = time.perf_counter() - t
    ok = max(worst.values()) <= 2.0 and involution_failures == 0
    detail = ", ".join(f"{k} {v:.2f} px" for k, v in worst.items())
    verdict(6, f"augmentation bbox vs marker pixels [{kernels.BACKEND}]", ok,
            f"50 fixtures/family, max side error {detail} (tol 2 px); "
            f"{involution_failures} flip involution failures", elapsed, 30.0)


# 7 ------------------------------------------------------------------------------

def _tree(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name != "resolved_config.json"}


def test_07_determinism_and_round_trips(tmp_path):
    t = time.perf_counter()
    rng = np.random.default_rng(7)
    bad_round_trips = 0
    for _ in range(500):
        recs = []
        for _ in range(int(rng.integers(0, 6))):
            cx, cy = np.round(rng.uniform(0, 1, 2), 6)
            w, h = np.maximum(np.round(rng.uniform(0, 1, 2), 6), 1e-6)
            recs.append(AnnotationRecord(int(rng.integers(0, 3)), NormBox(cx, cy, w, h)))
        text = write_label_file(recs)
        bad_round_trips += write_label_file(parse_label_file(text)) != text

    data = write_stub_dataset(tmp_path / "stub", 1800)
    codes = [main(["split", "--dataset", str(data), "--seed", "11", "--out", str(tmp_path / f"split{k}")])
             for k in range(2)]
    sizes = json.loads((tmp_path / "split0" / "manifest.json").read_text())["sizes"]
    split_same = _tree(tmp_path / "split0") == _tree(tmp_path / "split1")

    src = scan_dataset(write_marker_dataset(tmp_path / "markers", 8), (64, 64))
    plan = AugmentPlan(seed=5, target_count=40, max_ops_per_job=2)
    augment_dataset(src, plan, tmp_path / "aug0")
    augment_dataset(src, plan, tmp_path / "aug1")
    aug_same = _tree(tmp_path / "aug0") == _tree(tmp_path / "aug1")
    elapsed = time.perf_counter() - t
    ok = (bad_round_trips == 0 and codes == [0, 0] and split_same and aug_same
          and (sizes["train"], sizes["val"], sizes["test"]) == (1152, 288, 360))
    verdict(7, "determinism and round-trips", ok,
            f"{bad_round_trips}/500 label round-trip mismatches; split 1800 -> "
            f"{sizes['train']}/{sizes['val']}/{sizes['test']}; split rerun identical {split_same}; "
            f"augment rerun identical {aug_same}", elapsed)


# 8 ------------------------------------------------------------------------------

def test_08_nms_oracle():
    t = time.perf_counter()
    rng = np.random.default_rng(8)
    mismatches = not_idempotent = 0
    for _ in range(1000):
        dets = []
        for _ in range(int(rng.integers(0, 11))):
            x1, y1 = rng.integers(0, 40, 2)
            w, h = rng.integers(5, 30, 2)
            conf = float(rng.choice([0.3, 0.6, 0.9])) if rng.uniform() < 0.3 else float(rng.uniform())
            dets.append(Detection("i", int(rng.integers(0, 2)), PixelBox(x1, y1, x1 + w, y1 + h), conf))
        got = nms(dets, iou_threshold=0.45)
        ref = brute_force_nms([d.box.as_tuple() for d in dets], [d.confidence for d in dets],
                              [d.class_id for d in dets], 0.45)
        mismatches += {id(d) for d in got} != {id(dets[i]) for i in ref}
        not_idempotent += nms(got, iou_threshold=0.45) != got
    elapsed = time.perf_counter() - t
    verdict(8, f"greedy NMS vs brute force [{kernels.BACKEND}]", mismatches == 0 and not_idempotent == 0,
            f"1000 sets, {mismatches} survivor-set mismatches, {not_idempotent} idempotence failures", elapsed)


# 9 ------------------------------------------------------------------------------

def test_09_loss_demo():
    t = time.perf_counter()
    pred, tgt, w = load_fixture(bundled_path("loss_fixture.json"))
    short = fit_boxes_demo(pred, tgt, w, learning_rate=0.01, steps=100)
    long = fit_boxes_demo(pred, tgt, w, learning_rate=0.01, steps=500)
    ratio = long.losses[-1] / long.losses[0]
    elapsed = time.perf_counter() - t
    verdict(9, "loss demo on bundled fixture", short.strictly_decreasing and ratio < 0.01,
            f"strictly decreasing over 100 steps {short.strictly_decreasing}; "
            f"final/initial after 500 steps {ratio:.2e} (< 1e-2)", elapsed)


# 10 -----------------------------------------------------------------------------

def test_10_report_fidelity(tmp_path, capsys):
    t = time.perf_counter()
    want = {"YOLOv5s": 0.71, "YOLOv5m": 0.82, "YOLOv5l": 0.86}
    got, single_class_ok, dirs = {}, True, []
    for model in want:
        src = bundled_path("model_comparison", model)
        out = tmp_path / model
        code = main(["evaluate", "--gt", str(src), "--detections", str(src / "detections.txt"),
                     "--name", model, "--out", str(out)])
        rep = json.loads((out / "report.json").read_text())
        got[model] = rep["average_iou"] if code == 0 else None
        single_class_ok &= rep["map50"] == rep["ap"]["0"]
        dirs.append(str(out))
    capsys.readouterr()
    main(["report", *dirs])
    table = capsys.readouterr().out.splitlines()
    rows = [line.split()[:2] for line in table[1:]]

    rng = np.random.default_rng(10)
    for _ in range(50):
        gts = [GroundTruth("i", 0, PixelBox(100 * k, 0, 100 * k + 50, 50)) for k in range(4)]
        dets = [Detection("i", 0, PixelBox(100 * k + s, 0, 100 * k + 50 + s, 50), float(c))
                for k, s, c in zip(range(4), rng.integers(0, 30, 4), rng.uniform(size=4))]
        single_class_ok &= mean_average_precision({0: (dets, gts)}) == ap_11point(dets, gts).value
    elapsed = time.perf_counter() - t
    ok = got == want and single_class_ok and rows == [[m, f"{v:.2f}"] for m, v in want.items()]
    verdict(10, "reference average-IoU rows and single-class mAP == AP", ok,
            f"rows {' / '.join(f'{m} {v}' for m, v in got.items())}; mAP == AP exactly {single_class_ok}",
            elapsed)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
