"""Box-regression and objectness losses with hand-derived gradients.

Prediction and target volumes have shape ``(S*S, B, 5)`` with the last axis
``(x, y, w, h, conf)``; the occupancy mask has shape ``(S*S, B)``.

    box  = l_coord * sum_obj (2 - w*h) * [(x-x^)^2 + (y-y^)^2 + (w-w^)^2 + (h-h^)^2]
    conf = l_noobj * sum_noobj (c-c^)^2 + l_obj * sum_obj (c-c^)^2

``w`` and ``h`` in the ``(2 - w*h)`` factor are the predicted values.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class NonFiniteLossError(FloatingPointError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step


@dataclass(frozen=True)
class LossWeights:
    lambda_coord: float = 0.05
    lambda_obj: float = 1.0
    lambda_noobj: float = 0.5

    def __post_init__(self) -> None:
        if min(self.lambda_coord, self.lambda_obj, self.lambda_noobj) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True, eq=False)
class GridTarget:
    obj: np.ndarray
    boxes: np.ndarray

    def __post_init__(self) -> None:
        obj = np.asarray(self.obj, dtype=bool)
        boxes = np.asarray(self.boxes, dtype=np.float64)
        if obj.ndim != 2 or boxes.shape != obj.shape + (4,):
            raise ValueError(f"target shapes disagree: obj {obj.shape}, boxes {boxes.shape}")
        object.__setattr__(self, "obj", obj)
        object.__setattr__(self, "boxes", boxes)

    @classmethod
    def from_volume(cls, volume: np.ndarray) -> "GridTarget":
        """Build from a ``(S*S, B, 5)`` volume whose confidence channel is the mask."""
        v = np.asarray(volume, dtype=np.float64)
        return cls(v[..., 4] > 0.5, v[..., :4])

    @property
    def shape(self) -> tuple[int, int]:
        return self.obj.shape

    @property
    def confidence(self) -> np.ndarray:
        return self.obj.astype(np.float64)

    def volume(self) -> np.ndarray:
        return np.concatenate([self.boxes, self.confidence[..., None]], axis=-1)


def _check(pred, tgt: GridTarget) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape != tgt.shape + (5,):
        raise ValueError(f"prediction shape {pred.shape} != target shape {tgt.shape + (5,)}")
    return pred


def box_loss(pred, tgt: GridTarget, w: LossWeights = LossWeights()) -> float:
    pred = _check(pred, tgt)
    scale = 2.0 - pred[..., 2] * pred[..., 3]
    sq = np.sum((pred[..., :4] - tgt.boxes) ** 2, axis=-1)
    return float(w.lambda_coord * np.sum(np.where(tgt.obj, scale * sq, 0.0)))


def objectness_loss(pred, tgt: GridTarget, w: LossWeights = LossWeights()) -> float:
    pred = _check(pred, tgt)
    sq = (pred[..., 4] - tgt.confidence) ** 2
    return float(w.lambda_noobj * np.sum(sq[~tgt.obj]) + w.lambda_obj * np.sum(sq[tgt.obj]))


def total_loss(pred, tgt: GridTarget, w: LossWeights = LossWeights()) -> float:
    return box_loss(pred, tgt, w) + objectness_loss(pred, tgt, w)


def analytic_gradient(pred, tgt: GridTarget, w: LossWeights = LossWeights()) -> np.ndarray:
    """d(total_loss)/d(pred), same shape as ``pred``."""
    pred = _check(pred, tgt)
    obj = tgt.obj.astype(np.float64)
    resid = pred[..., :4] - tgt.boxes
    sq = np.sum(resid ** 2, axis=-1)
    pw, ph = pred[..., 2], pred[..., 3]
    scale = 2.0 - pw * ph
    grad = np.zeros_like(pred)
    gated = w.lambda_coord * obj
    grad[..., :4] = (gated * 2.0 * scale)[..., None] * resid
    # product rule through the (2 - w*h) factor
    grad[..., 2] -= gated * ph * sq
    grad[..., 3] -= gated * pw * sq
    conf_w = np.where(tgt.obj, w.lambda_obj, w.lambda_noobj)
    grad[..., 4] = 2.0 * conf_w * (pred[..., 4] - tgt.confidence)
    return grad


def numeric_gradient(pred, tgt: GridTarget, w: LossWeights = LossWeights(), step: float = 1e-5) -> np.ndarray:
    """Central finite differences of ``total_loss``, one entry at a time."""
    pred = _check(pred, tgt).copy()
    grad = np.zeros_like(pred)
    flat, gflat = pred.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = total_loss(pred, tgt, w)
        flat[i] = orig - step
        down = total_loss(pred, tgt, w)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return grad


@dataclass
class FitResult:
    losses: list[float]
    pred: np.ndarray

    @property
    def strictly_decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.losses, self.losses[1:]))


def fit_boxes_demo(pred, tgt: GridTarget, w: LossWeights = LossWeights(),
                   learning_rate: float = 0.01, steps: int = 100) -> FitResult:
    """Plain gradient descent on ``total_loss``.

    ``losses[k]`` is the loss before update ``k``; the final entry is the loss
    after the last update, so there are ``steps + 1`` values.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if learning_rate < 0:
        raise ValueError("learning_rate must be >= 0")
    pred = _check(pred, tgt).copy()
    losses = []
    for step in range(steps + 1):
        # divergence is reported through NonFiniteLossError, not numpy warnings
        with np.errstate(over="ignore", invalid="ignore"):
            loss = total_loss(pred, tgt, w)
            if not math.isfinite(loss):
                raise NonFiniteLossError(step, loss)
            losses.append(loss)
            if step < steps:
                pred -= learning_rate * analytic_gradient(pred, tgt, w)
    return FitResult(losses, pred)


def load_fixture(path) -> tuple[np.ndarray, GridTarget, LossWeights]:
    """Read ``{grid, anchors, weights?, pred: [...], target: [...]}``.

    ``pred``/``target`` are flat row-major lists of ``(x, y, w, h, conf)``
    5-tuples in cell-major, anchor-minor order.
    """
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    s, b = int(doc["grid"]), int(doc["anchors"])
    shape = (s * s, b, 5)
    try:
        pred = np.asarray(doc["pred"], dtype=np.float64).reshape(shape)
        target = np.asarray(doc["target"], dtype=np.float64).reshape(shape)
    except ValueError as exc:
        raise ValueError(f"{path}: fixture volume does not match grid {s} x anchors {b}: {exc}") from None
    weights = LossWeights(**doc.get("weights", {}))
    return pred, GridTarget.from_volume(target), weights


def save_fixture(path, pred, tgt: GridTarget, w: LossWeights | None = None) -> None:
    s = int(round(math.sqrt(tgt.shape[0])))
    doc = {"grid": s, "anchors": tgt.shape[1],
           "pred": np.asarray(pred).reshape(-1, 5).tolist(),
           "target": tgt.volume().reshape(-1, 5).tolist()}
    if w is not None:
        doc["weights"] = {"lambda_coord": w.lambda_coord, "lambda_obj": w.lambda_obj,
                          "lambda_noobj": w.lambda_noobj}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
