# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: affine resampling and greedy NMS.

Must stay numerically identical to ``_pykernels``; both evaluate the same
expressions in the same order.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def warp_affine(const cnp.uint8_t[:, :, ::1] src, double[::1] inv,
                bint bilinear, const cnp.uint8_t[::1] fill):
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1]
    out = np.empty((h, w, 3), dtype=np.uint8)
    cdef cnp.uint8_t[:, :, ::1] dst = out
    cdef double a = inv[0], b = inv[1], c = inv[2]
    cdef double d = inv[3], e = inv[4], f = inv[5]
    cdef double sx, sy, fx, fy, x, y, v
    cdef Py_ssize_t i, j, k, x0, y0, x1, y1
    cdef double lo_x = -0.5, lo_y = -0.5, hi_x = w - 0.5, hi_y = h - 0.5
    with nogil:
        for i in range(h):
            y = <double>i
            for j in range(w):
                x = <double>j
                sx = a * x + b * y + c
                sy = d * x + e * y + f
                if sx < lo_x or sx >= hi_x or sy < lo_y or sy >= hi_y:
                    for k in range(3):
                        dst[i, j, k] = fill[k]
                    continue
                if not bilinear:
                    x0 = <Py_ssize_t>floor(sx + 0.5)
                    y0 = <Py_ssize_t>floor(sy + 0.5)
                    if x0 > w - 1:
                        x0 = w - 1
                    if y0 > h - 1:
                        y0 = h - 1
                    for k in range(3):
                        dst[i, j, k] = src[y0, x0, k]
                    continue
                x0 = <Py_ssize_t>floor(sx)
                y0 = <Py_ssize_t>floor(sy)
                fx = sx - x0
                fy = sy - y0
                x1 = x0 + 1
                y1 = y0 + 1
                if x0 < 0:
                    x0 = 0
                if y0 < 0:
                    y0 = 0
                if x1 > w - 1:
                    x1 = w - 1
                if y1 > h - 1:
                    y1 = h - 1
                for k in range(3):
                    v = ((1.0 - fy) * ((1.0 - fx) * src[y0, x0, k] + fx * src[y0, x1, k])
                         + fy * ((1.0 - fx) * src[y1, x0, k] + fx * src[y1, x1, k]))
                    dst[i, j, k] = <cnp.uint8_t>floor(v + 0.5)
    return out


def greedy_nms(const double[:, ::1] boxes, const cnp.int64_t[::1] classes,
               const cnp.int64_t[::1] order, double threshold):
    cdef Py_ssize_t n = order.shape[0], p, q, i, j
    cdef cnp.uint8_t[::1] dead = np.zeros(n, dtype=np.uint8)
    keep = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] kv = keep
    cdef Py_ssize_t nkeep = 0
    cdef double iw, ih, inter, area_i, area_j
    with nogil:
        for p in range(n):
            if dead[p]:
                continue
            i = order[p]
            kv[nkeep] = i
            nkeep += 1
            area_i = (boxes[i, 2] - boxes[i, 0]) * (boxes[i, 3] - boxes[i, 1])
            for q in range(p + 1, n):
                if dead[q]:
                    continue
                j = order[q]
                if classes[j] != classes[i]:
                    continue
                iw = min(boxes[i, 2], boxes[j, 2]) - max(boxes[i, 0], boxes[j, 0])
                ih = min(boxes[i, 3], boxes[j, 3]) - max(boxes[i, 1], boxes[j, 1])
                if iw <= 0.0 or ih <= 0.0:
                    continue
                inter = iw * ih
                area_j = (boxes[j, 2] - boxes[j, 0]) * (boxes[j, 3] - boxes[j, 1])
                if inter / (area_i + area_j - inter) > threshold:
                    dead[q] = 1
    return keep[:nkeep].copy()
