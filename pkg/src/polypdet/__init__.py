"""Polyp-detection tooling around a YOLO-style single-class detector.

Modules: ``geometry`` (boxes, IoU/GIoU), ``annotations`` (label/config files,
splits), ``raster`` (PPM images), ``augmentation``, ``decoder`` (anchor grids,
NMS), ``losses``, ``metrics`` (P/R, AP, mAP, IoU reports) and ``cli``.
"""

__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: E402

__all__ = ["BACKEND", "__version__"]
