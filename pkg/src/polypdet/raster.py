"""RGB image buffer with binary PPM (P6) I/O and marker-image helpers."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import PixelBox


class PixmapFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """Row-major ``(height, width, 3)`` uint8 pixels; the array is made read-only."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        px = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"expected (h, w, 3) pixels, got shape {px.shape}")
        if px is self.pixels:
            px = px.copy()
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    @classmethod
    def filled(cls, width: int, height: int, color) -> "ImageBuffer":
        px = np.empty((height, width, 3), dtype=np.uint8)
        px[...] = np.asarray(color, dtype=np.uint8)
        return cls(px)


# magic, then width/height/maxval separated by whitespace and optional comments
_HEADER = re.compile(rb"P6(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)\s")


def load_portable_pixmap(data: bytes) -> ImageBuffer:
    if not data.startswith(b"P6"):
        raise PixmapFormatError("bad magic: expected P6")
    m = _HEADER.match(data)
    if m is None:
        raise PixmapFormatError("malformed P6 header")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise PixmapFormatError(f"unsupported maxval {maxval}; only 255 is accepted")
    if w < 1 or h < 1:
        raise PixmapFormatError(f"bad dimensions {w}x{h}")
    payload = data[m.end():]
    need = w * h * 3
    if len(payload) < need:
        raise PixmapFormatError(f"truncated payload: {len(payload)} of {need} bytes")
    px = np.frombuffer(payload, dtype=np.uint8, count=need).reshape(h, w, 3)
    return ImageBuffer(px.copy())


def save_portable_pixmap(img: ImageBuffer) -> bytes:
    return f"P6\n{img.width} {img.height}\n255\n".encode("ascii") + img.pixels.tobytes()


def read_ppm(path) -> ImageBuffer:
    return load_portable_pixmap(Path(path).read_bytes())


def ppm_size(path) -> tuple[int, int]:
    """``(width, height)`` from the header alone."""
    with open(path, "rb") as fh:
        head = fh.read(256)
    m = _HEADER.match(head)
    if m is None:
        raise PixmapFormatError(f"{path}: malformed P6 header")
    return int(m.group(1)), int(m.group(2))


def _pixel_span(marker: PixelBox) -> tuple[int, int, int, int]:
    x1, y1, x2, y2 = (int(round(v)) for v in marker.as_tuple())
    if (x1, y1, x2, y2) != marker.as_tuple():
        raise ValueError(f"marker {marker} must have integer corners")
    return x1, y1, x2, y2


def make_marker_image(img_w: int, img_h: int, marker: PixelBox,
                      marker_color=(255, 0, 0), background_color=(0, 0, 0)) -> ImageBuffer:
    if tuple(marker_color) == tuple(background_color):
        raise ValueError("marker and background colors must differ")
    x1, y1, x2, y2 = _pixel_span(marker)
    if x1 < 0 or y1 < 0 or x2 > img_w or y2 > img_h:
        raise ValueError(f"marker {marker} outside {img_w}x{img_h} image")
    px = np.empty((img_h, img_w, 3), dtype=np.uint8)
    px[...] = np.asarray(background_color, dtype=np.uint8)
    px[y1:y2, x1:x2] = np.asarray(marker_color, dtype=np.uint8)
    return ImageBuffer(px)


def color_mask(img: ImageBuffer, color, tolerance: int = 30) -> np.ndarray:
    # per-channel bounds checked on the uint8 planes directly, no widening copy
    mask = np.ones(img.pixels.shape[:2], dtype=bool)
    for ch, c in enumerate(color):
        plane = img.pixels[..., ch]
        lo, hi = int(c) - tolerance, int(c) + tolerance
        if lo > 0:
            mask &= plane >= lo
        if hi < 255:
            mask &= plane <= hi
    return mask


def tight_bbox_of_color(img: ImageBuffer, color, tolerance: int = 30) -> PixelBox:
    """Smallest box covering every pixel within ``tolerance`` of ``color`` per channel."""
    mask = color_mask(img, color, tolerance)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise ValueError(f"no pixel matches color {tuple(color)} at tolerance {tolerance}")
    return PixelBox(float(cols[0]), float(rows[0]), float(cols[-1] + 1), float(rows[-1] + 1))
