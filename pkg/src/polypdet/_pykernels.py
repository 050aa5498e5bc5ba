"""numpy fallback for ``_ckernels``; same arithmetic, same results."""

from __future__ import annotations

import numpy as np


def warp_affine(src: np.ndarray, inv: np.ndarray, bilinear: bool, fill: np.ndarray) -> np.ndarray:
    h, w = src.shape[:2]
    a, b, c, d, e, f = (float(v) for v in inv)
    x = np.arange(w, dtype=np.float64)[None, :]
    y = np.arange(h, dtype=np.float64)[:, None]
    sx = (a * x + b * y + c).ravel()
    sy = (d * x + e * y + f).ravel()
    valid = np.flatnonzero((sx >= -0.5) & (sx < w - 0.5) & (sy >= -0.5) & (sy < h - 0.5))
    out = np.empty((h * w, 3), dtype=np.uint8)
    out[...] = fill
    sx, sy = sx[valid], sy[valid]
    if not bilinear:
        x0 = np.minimum(np.floor(sx + 0.5).astype(np.intp), w - 1)
        y0 = np.minimum(np.floor(sy + 0.5).astype(np.intp), h - 1)
        # gather whole pixels as opaque 3-byte items
        pixels = np.ascontiguousarray(src).reshape(-1).view("V3")
        out.reshape(-1).view("V3")[valid] = pixels[y0 * w + x0]
        return out.reshape(h, w, 3)
    fx0 = np.floor(sx)
    fy0 = np.floor(sy)
    fx = sx - fx0
    fy = sy - fy0
    gx, gy = 1.0 - fx, 1.0 - fy
    x0 = fx0.astype(np.intp)
    y0 = fy0.astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x0 = np.maximum(x0, 0)
    y0 = np.maximum(y0, 0)
    i00, i01, i10, i11 = y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1
    for k in range(3):
        plane = np.ascontiguousarray(src[..., k]).ravel()
        v = gy * (gx * plane[i00] + fx * plane[i01]) + fy * (gx * plane[i10] + fx * plane[i11])
        out[valid, k] = np.floor(v + 0.5).astype(np.uint8)
    return out.reshape(h, w, 3)


def greedy_nms(boxes: np.ndarray, classes: np.ndarray, order: np.ndarray, threshold: float) -> np.ndarray:
    boxes = boxes[order]
    classes = classes[order]
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    alive = np.ones(len(order), dtype=bool)
    keep = []
    for p in range(len(order)):
        if not alive[p]:
            continue
        keep.append(order[p])
        rest = np.flatnonzero(alive[p + 1:]) + p + 1
        rest = rest[classes[rest] == classes[p]]
        if rest.size == 0:
            continue
        bi, br = boxes[p], boxes[rest]
        iw = np.minimum(bi[2], br[:, 2]) - np.maximum(bi[0], br[:, 0])
        ih = np.minimum(bi[3], br[:, 3]) - np.maximum(bi[1], br[:, 1])
        hit = (iw > 0.0) & (ih > 0.0)
        inter = iw * ih
        with np.errstate(invalid="ignore", divide="ignore"):
            ov = inter / (areas[p] + areas[rest] - inter)
        alive[rest[hit & (ov > threshold)]] = False
    return np.asarray(keep, dtype=np.int64)
