"""Box representations, coordinate conversions and overlap measures.

Two box forms are used throughout the package:

* :class:`NormBox` -- YOLO label form, center/size as fractions of the image.
* :class:`PixelBox` -- absolute corner form ``(x1, y1, x2, y2)`` in pixels.

Pixel coordinates are continuous: pixel ``(i, j)`` covers ``[i, i+1) x [j, j+1)``.
"""

from __future__ import annotations

from dataclasses import dataclass


class ZeroAreaBoxError(ValueError):
    """Raised when a box would have zero or negative area."""


@dataclass(frozen=True)
class NormBox:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise ValueError(f"center ({self.cx}, {self.cy}) outside [0, 1]")
        if not (0.0 < self.w <= 1.0 and 0.0 < self.h <= 1.0):
            if self.w <= 0.0 or self.h <= 0.0:
                raise ZeroAreaBoxError(f"size ({self.w}, {self.h}) must be positive")
            raise ValueError(f"size ({self.w}, {self.h}) outside (0, 1]")

    def corners(self) -> tuple[float, float, float, float]:
        """Normalized ``(x1, y1, x2, y2)``; may leave [0, 1] for unclipped boxes."""
        return (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h)


@dataclass(frozen=True)
class PixelBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ZeroAreaBoxError(
                f"degenerate box ({self.x1}, {self.y1}, {self.x2}, {self.y2})"
            )

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


def norm_to_pixel(b: NormBox, img_w: float, img_h: float) -> PixelBox:
    if img_w <= 0 or img_h <= 0:
        raise ValueError("image dimensions must be positive")
    x1, y1, x2, y2 = b.corners()
    return PixelBox(x1 * img_w, y1 * img_h, x2 * img_w, y2 * img_h)


def pixel_to_norm(b: PixelBox, img_w: float, img_h: float) -> NormBox:
    if img_w <= 0 or img_h <= 0:
        raise ValueError("image dimensions must be positive")
    return NormBox(
        (b.x1 + b.x2) / 2.0 / img_w,
        (b.y1 + b.y2) / 2.0 / img_h,
        (b.x2 - b.x1) / img_w,
        (b.y2 - b.y1) / img_h,
    )


def clip_pixel_box(b: PixelBox, img_w: float, img_h: float) -> PixelBox | None:
    """Clip to ``[0, img_w] x [0, img_h]``; ``None`` if nothing remains."""
    x1, x2 = max(0.0, b.x1), min(float(img_w), b.x2)
    y1, y2 = max(0.0, b.y1), min(float(img_h), b.y2)
    if x1 >= x2 or y1 >= y2:
        return None
    return PixelBox(x1, y1, x2, y2)


def intersection_area(a: PixelBox, b: PixelBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    return iw * ih


def iou(a: PixelBox, b: PixelBox) -> float:
    """Intersection area divided by union area."""
    inter = intersection_area(a, b)
    return inter / (a.area + b.area - inter)


def giou(a: PixelBox, b: PixelBox) -> float:
    """Generalized IoU: ``IoU - (C - U) / C`` with ``C`` the enclosing-box area."""
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    enclose = (max(a.x2, b.x2) - min(a.x1, b.x1)) * (max(a.y2, b.y2) - min(a.y1, b.y1))
    return inter / union - (enclose - union) / enclose
