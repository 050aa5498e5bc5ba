"""Multi-scale anchor-grid decoding, confidence filtering and greedy NMS.

Per cell ``(row, col)`` and anchor ``(aw, ah)`` at stride ``s``::

    cx = (2*sig(tx) - 0.5 + col) * s        w = (2*sig(tw))**2 * aw
    cy = (2*sig(ty) - 0.5 + row) * s        h = (2*sig(th))**2 * ah
    conf = sig(t_conf)

Boxes are clipped to the square input frame. Output order: scale 1 before
2 before 3, row-major cells within a scale, anchor index minor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import kernels
from .geometry import PixelBox
from .metrics import Detection


class VolumeSchemaError(ValueError):
    pass


def _default_anchor_doc() -> dict:
    return json.loads(resources.files("polypdet").joinpath("data/anchors.json").read_text())


@dataclass(frozen=True)
class AnchorSet:
    """``per_scale[k]`` holds the ``(width, height)`` pixel anchors of scale ``k+1``."""

    per_scale: tuple[tuple[tuple[float, float], ...], ...]

    def __post_init__(self) -> None:
        for anchors in self.per_scale:
            for aw, ah in anchors:
                if aw <= 0 or ah <= 0:
                    raise ValueError(f"anchor ({aw}, {ah}) must be positive")

    @classmethod
    def default(cls) -> "AnchorSet":
        doc = _default_anchor_doc()
        return cls(tuple(tuple((float(w), float(h)) for w, h in s) for s in doc["anchors"]))


@dataclass(frozen=True)
class DecoderConfig:
    input_size: int = 640
    strides: tuple[int, ...] = (8, 16, 32)
    anchors: AnchorSet = field(default_factory=AnchorSet.default)
    confidence_threshold: float = 0.25
    nms_iou_threshold: float = 0.45
    # anchor/target assignment threshold used in training; not used when decoding
    iou_training_threshold: float = 0.20

    def __post_init__(self) -> None:
        for s in self.strides:
            if self.input_size % s:
                raise ValueError(f"input size {self.input_size} not divisible by stride {s}")
        if len(self.anchors.per_scale) != len(self.strides):
            raise ValueError("need one anchor group per stride")

    def grid(self, scale: int) -> int:
        return self.input_size // self.strides[scale - 1]


@dataclass(frozen=True, eq=False)
class HeadVolume:
    """Raw head output of one scale: ``data`` has shape ``(grid_h, grid_w, B, 5)``."""

    scale: int
    stride: int
    anchors: np.ndarray
    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        anchors = np.asarray(self.anchors, dtype=np.float64).reshape(-1, 2)
        if data.ndim != 4 or data.shape[3] != 5 or data.shape[2] != anchors.shape[0]:
            raise VolumeSchemaError(
                f"scale {self.scale}: data shape {data.shape} does not fit {anchors.shape[0]} anchors"
            )
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "anchors", anchors)

    @property
    def grid_h(self) -> int:
        return self.data.shape[0]

    @property
    def grid_w(self) -> int:
        return self.data.shape[1]

    @classmethod
    def zeros(cls, cfg: DecoderConfig, scale: int) -> "HeadVolume":
        anchors = np.asarray(cfg.anchors.per_scale[scale - 1])
        g = cfg.grid(scale)
        return cls(scale, cfg.strides[scale - 1], anchors, np.zeros((g, g, len(anchors), 5)))


def zero_volumes(cfg: DecoderConfig) -> list[HeadVolume]:
    return [HeadVolume.zeros(cfg, k + 1) for k in range(len(cfg.strides))]


def sigmoid(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def _clip_nondegenerate(lo: np.ndarray, hi: np.ndarray, limit: float):
    lo = np.clip(lo, 0.0, limit)
    hi = np.clip(hi, 0.0, limit)
    # boxes lying wholly off-frame collapse to a sliver on the nearest edge
    deg = hi <= lo
    top = deg & (lo >= limit)
    lo[top] = np.nextafter(limit, 0.0)
    rest = deg & ~top
    hi[rest] = np.nextafter(lo[rest], np.inf)
    return lo, hi


def decode_scale_arrays(v: HeadVolume, cfg: DecoderConfig) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised decode: ``(N, 4)`` corner boxes and ``(N,)`` confidences."""
    expect = cfg.grid(v.scale)
    if v.stride != cfg.strides[v.scale - 1] or (v.grid_h, v.grid_w) != (expect, expect):
        raise VolumeSchemaError(
            f"scale {v.scale}: got stride {v.stride}, grid {v.grid_h}x{v.grid_w}; "
            f"expected stride {cfg.strides[v.scale - 1]}, grid {expect}x{expect}"
        )
    s = float(v.stride)
    sig = sigmoid(v.data)
    rows = np.arange(v.grid_h, dtype=np.float64)[:, None, None]
    cols = np.arange(v.grid_w, dtype=np.float64)[None, :, None]
    cx = (2.0 * sig[..., 0] - 0.5 + cols) * s
    cy = (2.0 * sig[..., 1] - 0.5 + rows) * s
    bw = (2.0 * sig[..., 2]) ** 2 * v.anchors[:, 0]
    bh = (2.0 * sig[..., 3]) ** 2 * v.anchors[:, 1]
    x1, x2 = _clip_nondegenerate((cx - bw / 2).ravel(), (cx + bw / 2).ravel(), cfg.input_size)
    y1, y2 = _clip_nondegenerate((cy - bh / 2).ravel(), (cy + bh / 2).ravel(), cfg.input_size)
    return np.stack([x1, y1, x2, y2], axis=1), sig[..., 4].ravel()


def _to_detections(boxes: np.ndarray, conf: np.ndarray, image_id: str) -> list[Detection]:
    return [
        Detection(image_id, 0, PixelBox(*b), c)
        for b, c in zip(boxes.tolist(), conf.tolist())
    ]


def decode_scale(v: HeadVolume, cfg: DecoderConfig, image_id: str = "image") -> list[Detection]:
    return _to_detections(*decode_scale_arrays(v, cfg), image_id)


def decode_all(volumes, cfg: DecoderConfig, image_id: str = "image") -> list[Detection]:
    scales = sorted(v.scale for v in volumes)
    if scales != list(range(1, len(cfg.strides) + 1)):
        raise VolumeSchemaError(f"need exactly one volume per scale, got scales {scales}")
    out = []
    for v in sorted(volumes, key=lambda v: v.scale):
        out.extend(decode_scale(v, cfg, image_id))
    return out


def confidence_filter(dets, cfg: DecoderConfig | None = None, threshold: float | None = None) -> list[Detection]:
    """Keep detections with ``confidence >= threshold`` (inclusive), order preserved."""
    thr = threshold if threshold is not None else (cfg or DecoderConfig()).confidence_threshold
    return [d for d in dets if d.confidence >= thr]


def nms(dets, cfg: DecoderConfig | None = None, iou_threshold: float | None = None) -> list[Detection]:
    """Greedy per-class NMS; survivors returned by descending confidence.

    A candidate is removed when its IoU with a kept box of the same class is
    strictly above the threshold. Equal confidences keep input order.
    """
    thr = iou_threshold if iou_threshold is not None else (cfg or DecoderConfig()).nms_iou_threshold
    if not dets:
        return []
    boxes = np.array([d.box.as_tuple() for d in dets], dtype=np.float64)
    classes = np.array([d.class_id for d in dets], dtype=np.int64)
    conf = np.array([d.confidence for d in dets], dtype=np.float64)
    order = np.argsort(-conf, kind="stable").astype(np.int64)
    keep = kernels.greedy_nms(boxes, classes, order, float(thr))
    return [dets[i] for i in keep]


def load_head_volumes(path) -> tuple[list[HeadVolume], int]:
    """Read ``{input_size, scales: [{stride, grid, anchors, data}]}``.

    ``grid`` is an int or ``[h, w]``; ``data`` is a row-major list of
    ``(tx, ty, tw, th, t_conf)`` 5-tuples (or the same numbers flattened).
    Scale indices follow ascending stride unless a ``scale`` key is given.
    """
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise VolumeSchemaError(f"{path}: invalid JSON: {exc}") from None
    try:
        input_size = int(doc["input_size"])
        specs = list(doc["scales"])
        order = sorted(range(len(specs)), key=lambda i: int(specs[i]["stride"]))
        volumes = []
        for rank, i in enumerate(order, start=1):
            sp = specs[i]
            grid = sp["grid"]
            gh, gw = (grid, grid) if isinstance(grid, int) else (int(grid[0]), int(grid[1]))
            anchors = np.asarray(sp["anchors"], dtype=np.float64).reshape(-1, 2)
            data = np.asarray(sp["data"], dtype=np.float64)
            if data.size != gh * gw * len(anchors) * 5:
                raise VolumeSchemaError(
                    f"scale stride {sp['stride']}: {data.size} values, expected "
                    f"{gh}*{gw}*{len(anchors)}*5"
                )
            volumes.append(HeadVolume(int(sp.get("scale", rank)), int(sp["stride"]), anchors,
                                      data.reshape(gh, gw, len(anchors), 5)))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, VolumeSchemaError):
            raise
        raise VolumeSchemaError(f"{path}: schema violation: {exc!r}") from None
    return volumes, input_size


def dump_head_volumes(volumes, input_size: int) -> str:
    doc = {
        "input_size": input_size,
        "scales": [
            {"scale": v.scale, "stride": v.stride, "grid": [v.grid_h, v.grid_w],
             "anchors": v.anchors.tolist(), "data": v.data.reshape(-1, 5).tolist()}
            for v in sorted(volumes, key=lambda v: v.scale)
        ],
    }
    return json.dumps(doc, separators=(",", ":")) + "\n"


def config_for_volumes(volumes, input_size: int, **overrides) -> DecoderConfig:
    """Decoder config whose strides/anchors come from the volumes themselves."""
    vs = sorted(volumes, key=lambda v: v.scale)
    anchors = AnchorSet(tuple(tuple(map(tuple, v.anchors.tolist())) for v in vs))
    return DecoderConfig(input_size=input_size, strides=tuple(v.stride for v in vs),
                         anchors=anchors, **overrides)
