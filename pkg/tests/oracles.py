"""Brute-force reference implementations used only by the tests.

None of these share code paths with the package implementations they check.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np


def raster_iou(a, b, size: int = 64) -> Fraction:
    """IoU by counting unit pixels of integer-corner boxes on a ``size`` grid."""
    ma = np.zeros((size, size), dtype=bool)
    mb = np.zeros((size, size), dtype=bool)
    ma[int(a[1]):int(a[3]), int(a[0]):int(a[2])] = True
    mb[int(b[1]):int(b[3]), int(b[0]):int(b[2])] = True
    return Fraction(int((ma & mb).sum()), int((ma | mb).sum()))


def raster_giou(a, b, size: int = 64) -> Fraction:
    ma = np.zeros((size, size), dtype=bool)
    mb = np.zeros((size, size), dtype=bool)
    ma[int(a[1]):int(a[3]), int(a[0]):int(a[2])] = True
    mb[int(b[1]):int(b[3]), int(b[0]):int(b[2])] = True
    union = int((ma | mb).sum())
    ys, xs = np.nonzero(ma | mb)
    enclose = (xs.max() + 1 - xs.min()) * (ys.max() + 1 - ys.min())
    return raster_iou(a, b, size) - Fraction(int(enclose) - union, int(enclose))


def pair_iou(a, b) -> float:
    """Plain-tuple IoU with the same float operation order as the package."""
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def brute_force_nms(boxes, scores, classes, threshold: float) -> list[int]:
    """O(n^2) reference: a box survives iff no surviving higher-ranked same-class box overlaps it."""
    ranked = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    alive = []
    for i in ranked:
        if all(classes[k] != classes[i] or pair_iou(boxes[k], boxes[i]) <= threshold for k in alive):
            alive.append(i)
    return alive


def dense_grid_ap(pattern, n_gt: int, resolution: int = 1000) -> float:
    """11-point AP from a TP/FP ranking via a dense recall envelope in exact arithmetic.

    The envelope ``P(r) = max{prec_k : rec_k >= r}`` is tabulated at
    ``resolution + 1`` recall values and then sampled at the eleven points.
    """
    if n_gt == 0:
        return 0.0
    prec, rec = [], []
    tp = 0
    for k, hit in enumerate(pattern, start=1):
        tp += bool(hit)
        prec.append(Fraction(tp, k))
        rec.append(Fraction(tp, n_gt))
    envelope = []
    for j in range(resolution + 1):
        r = Fraction(j, resolution)
        cands = [p for p, rr in zip(prec, rec) if rr >= r]
        envelope.append(max(cands) if cands else Fraction(0))
    step = resolution // 10
    return float(sum(envelope[k * step] for k in range(11)) / 11)


def best_assignment_tp(ious, confidences, threshold: float):
    """Exhaustive search over one-to-one detection->GT assignments.

    Among assignments respecting the threshold, returns the TP flags of the one
    that is lexicographically best when detections are read in descending
    confidence (i.e. higher-confidence detections claim first).
    """
    n_det, n_gt = ious.shape
    order = sorted(range(n_det), key=lambda i: (-confidences[i], i))
    best = None
    for choice in itertools.product(range(-1, n_gt), repeat=n_det):
        used = [c for c in choice if c >= 0]
        if len(used) != len(set(used)):
            continue
        if any(c >= 0 and ious[d, c] < threshold for d, c in enumerate(choice)):
            continue
        key = tuple(choice[d] >= 0 for d in order)
        if best is None or key > best[0]:
            best = (key, choice)
    return [c >= 0 for c in best[1]]


def scalar_box_loss(pred, tgt_boxes, obj, lambda_coord: float) -> float:
    total = 0.0
    for i in range(obj.shape[0]):
        for j in range(obj.shape[1]):
            if not obj[i, j]:
                continue
            x, y, w, h = pred[i, j, :4]
            tx, ty, tw, th = tgt_boxes[i, j]
            total += (2 - w * h) * ((x - tx) ** 2 + (y - ty) ** 2 + (w - tw) ** 2 + (h - th) ** 2)
    return lambda_coord * total


def scalar_objectness_loss(pred, obj, lambda_obj: float, lambda_noobj: float) -> float:
    total = 0.0
    for i in range(obj.shape[0]):
        for j in range(obj.shape[1]):
            c, target = pred[i, j, 4], float(obj[i, j])
            total += (lambda_obj if obj[i, j] else lambda_noobj) * (c - target) ** 2
    return total
