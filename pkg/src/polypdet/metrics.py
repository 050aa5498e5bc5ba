"""Detection/ground-truth matching, precision, recall, 11-point AP, mAP and IoU reports."""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .annotations import atomic_write, read_label_path
from .geometry import PixelBox, iou, norm_to_pixel
from .raster import ppm_size

RECALL_POINTS = tuple(k / 10 for k in range(11))
COCO_SWEEP = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))


class DetectionsParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class Detection:
    image_id: str
    class_id: int
    box: PixelBox
    confidence: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class GroundTruth:
    image_id: str
    class_id: int
    box: PixelBox


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.5
    sweep: tuple[float, ...] = COCO_SWEEP

    def __post_init__(self) -> None:
        for t in (self.iou_threshold, *self.sweep):
            if not 0.0 < t <= 1.0:
                raise ValueError(f"IoU threshold {t} outside (0, 1]")


@dataclass(frozen=True)
class MatchResult:
    """Per-detection outcome in input order, plus per-ground-truth coverage.

    ``ranking`` lists detection indices in descending confidence (stable).
    """

    is_tp: tuple[bool, ...]
    matched_gt: tuple[int | None, ...]
    match_iou: tuple[float | None, ...]
    gt_matched: tuple[bool, ...]
    ranking: tuple[int, ...] = ()

    @property
    def tp(self) -> int:
        return sum(self.is_tp)

    @property
    def fp(self) -> int:
        return len(self.is_tp) - self.tp

    @property
    def fn(self) -> int:
        return len(self.gt_matched) - sum(self.gt_matched)

    def ranked_tp(self) -> list[bool]:
        return [self.is_tp[i] for i in self.ranking]


class Ratio(NamedTuple):
    value: float
    degenerate: bool = False


@dataclass(frozen=True)
class PRCurve:
    """(recall, precision) after each ranked detection; counts kept exact."""

    tp_cum: tuple[int, ...]
    n_gt: int

    @property
    def points(self) -> list[tuple[float, float]]:
        return [(tp / self.n_gt, tp / (i + 1)) for i, tp in enumerate(self.tp_cum)]

    def interpolated_precision(self, k: int) -> float:
        """Max precision over points with recall >= k/10 (0 when none)."""
        best = 0.0
        for i, tp in enumerate(self.tp_cum):
            if 10 * tp >= k * self.n_gt:
                best = max(best, tp / (i + 1))
        return best


class APResult(NamedTuple):
    value: float
    degenerate: bool
    curve: PRCurve


def rank_by_confidence(dets) -> list[int]:
    return sorted(range(len(dets)), key=lambda i: -dets[i].confidence)


def match_detections(dets, gts, cfg: EvalConfig = EvalConfig(), iou_threshold: float | None = None) -> MatchResult:
    """Greedy matching in descending confidence.

    Each detection takes its highest-IoU still-unmatched ground truth of the same
    image and class; IoU ties go to the lower ground-truth index. It is a true
    positive iff that IoU reaches the threshold.
    """
    thr = cfg.iou_threshold if iou_threshold is None else iou_threshold
    pool = defaultdict(list)
    for g, gt in enumerate(gts):
        pool[(gt.image_id, gt.class_id)].append(g)
    gt_matched = [False] * len(gts)
    is_tp = [False] * len(dets)
    matched_gt: list[int | None] = [None] * len(dets)
    match_iou: list[float | None] = [None] * len(dets)
    ranking = rank_by_confidence(dets)
    for d in ranking:
        det = dets[d]
        best, best_g = -1.0, None
        for g in pool.get((det.image_id, det.class_id), ()):
            if gt_matched[g]:
                continue
            v = iou(det.box, gts[g].box)
            if v > best:
                best, best_g = v, g
        if best_g is not None and best >= thr:
            gt_matched[best_g] = True
            is_tp[d] = True
            matched_gt[d] = best_g
            match_iou[d] = best
    return MatchResult(tuple(is_tp), tuple(matched_gt), tuple(match_iou), tuple(gt_matched), tuple(ranking))


def precision(m: MatchResult) -> Ratio:
    if m.tp + m.fp == 0:
        return Ratio(0.0, True)
    return Ratio(m.tp / (m.tp + m.fp))


def recall(m: MatchResult) -> Ratio:
    if m.tp + m.fn == 0:
        return Ratio(0.0, True)
    return Ratio(m.tp / (m.tp + m.fn))


def pr_curve(ranked_tp, n_gt: int) -> PRCurve:
    return PRCurve(tuple(int(v) for v in np.cumsum(np.asarray(ranked_tp, dtype=np.int64))), n_gt)


def ap_from_ranked(ranked_tp, n_gt: int) -> APResult:
    curve = pr_curve(ranked_tp, n_gt)
    if n_gt == 0:
        return APResult(0.0, True, curve)
    return APResult(sum(curve.interpolated_precision(k) for k in range(11)) / 11, False, curve)


def ap_11point(dets, gts, cfg: EvalConfig = EvalConfig(), iou_threshold: float | None = None) -> APResult:
    """Eleven-point interpolated AP for a single class."""
    m = match_detections(dets, gts, cfg, iou_threshold)
    return ap_from_ranked(m.ranked_tp(), len(gts))


def mean_average_precision(per_class_inputs, cfg: EvalConfig = EvalConfig(),
                           iou_threshold: float | None = None) -> float:
    """Mean of per-class AP; ``per_class_inputs`` maps class id to ``(dets, gts)``."""
    if not per_class_inputs:
        raise ValueError("mAP needs at least one class")
    aps = [ap_11point(d, g, cfg, iou_threshold).value for d, g in per_class_inputs.values()]
    return sum(aps) / len(aps)


def map_sweep(per_class_inputs, cfg: EvalConfig = EvalConfig(), thresholds=None) -> float:
    thresholds = cfg.sweep if thresholds is None else thresholds
    vals = [mean_average_precision(per_class_inputs, cfg, t) for t in thresholds]
    return sum(vals) / len(vals)


def average_iou(matches) -> float | None:
    """Mean achieved IoU over all true-positive pairs; ``None`` when there are none."""
    vals = [v for m in matches for v, tp in zip(m.match_iou, m.is_tp) if tp]
    if not vals:
        return None
    return sum(vals) / len(vals)


def split_by_class(dets, gts, classes=None) -> dict:
    if classes is None:
        classes = sorted({g.class_id for g in gts} | {d.class_id for d in dets}) or [0]
    out = {}
    for c in classes:
        out[c] = ([d for d in dets if d.class_id == c], [g for g in gts if g.class_id == c])
    return out


def evaluate(dets, gts, cfg: EvalConfig = EvalConfig(), conf_threshold: float = 0.25,
             classes=None, name: str = "run") -> dict:
    """Full report: operating-point P/R and average IoU, AP/mAP from the full ranking."""
    per_class = split_by_class(dets, gts, classes)
    op_dets = [d for d in dets if d.confidence >= conf_threshold]
    m = match_detections(op_dets, gts, cfg)
    p, r = precision(m), recall(m)
    aps = {str(c): ap_11point(d, g, cfg) for c, (d, g) in per_class.items()}
    avg = average_iou([m])
    return {
        "name": name,
        "iou_threshold": cfg.iou_threshold,
        "conf_threshold": conf_threshold,
        "num_detections": len(dets),
        "num_ground_truths": len(gts),
        "tp": m.tp,
        "fp": m.fp,
        "fn": m.fn,
        "precision": p.value,
        "precision_degenerate": p.degenerate,
        "recall": r.value,
        "recall_degenerate": r.degenerate,
        "ap": {c: a.value for c, a in aps.items()},
        "ap_degenerate": {c: a.degenerate for c, a in aps.items()},
        "map50": mean_average_precision(per_class, cfg),
        "map50_95": map_sweep(per_class, cfg),
        "map50_95_endpoints": map_sweep(per_class, cfg, (0.5, 0.95)),
        "average_iou": None if avg is None else round(avg, 2),
        "average_iou_raw": avg,
    }


_TEXT_ROWS = (
    ("precision", "Precision"),
    ("recall", "Recall"),
    ("map50", "mAP@0.5"),
    ("map50_95", "mAP@0.5:0.95"),
    ("map50_95_endpoints", "mAP@{0.5,0.95}"),
)


def render_report_text(report: dict) -> str:
    lines = [f"Run: {report['name']}"]
    rows = [("IoU threshold", f"{report['iou_threshold']:.2f}"),
            ("Confidence threshold", f"{report['conf_threshold']:.2f}"),
            ("Detections", str(report["num_detections"])),
            ("Ground truths", str(report["num_ground_truths"])),
            ("TP / FP / FN", f"{report['tp']} / {report['fp']} / {report['fn']}")]
    for key, label in _TEXT_ROWS:
        flag = " (degenerate)" if report.get(f"{key}_degenerate") else ""
        rows.append((label, f"{report[key]:.4f}{flag}"))
    for c, v in report["ap"].items():
        flag = " (degenerate)" if report["ap_degenerate"][c] else ""
        rows.append((f"AP class {c}", f"{v:.4f}{flag}"))
    avg = report["average_iou"]
    rows.append(("Average IoU", "absent" if avg is None else f"{avg:.2f}"))
    width = max(len(k) for k, _ in rows)
    lines += [f"{k.ljust(width)}  {v}" for k, v in rows]
    return "\n".join(lines) + "\n"


def write_report(report: dict, out_dir) -> None:
    out_dir = Path(out_dir)
    atomic_write(out_dir / "report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    atomic_write(out_dir / "report.txt", render_report_text(report))


COMPARISON_COLUMNS = (
    ("name", "Model"),
    ("average_iou", "Average Result(IoU)"),
    ("precision", "Precision"),
    ("recall", "Recall"),
    ("map50", "mAP@0.5"),
    ("map50_95", "mAP@0.5:0.95"),
)


def _cell(key: str, v) -> str:
    if v is None:
        return "absent"
    if key == "average_iou":
        return f"{v:.2f}"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def comparison_rows(reports) -> list[list[str]]:
    return [[_cell(k, r.get(k)) for k, _ in COMPARISON_COLUMNS] for r in reports]


def render_comparison_table(reports) -> str:
    header = [label for _, label in COMPARISON_COLUMNS]
    rows = comparison_rows(reports)
    widths = [max(len(x) for x in col) for col in zip(header, *rows)]
    fmt = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    return "\n".join([fmt(header), *(fmt(r) for r in rows)]) + "\n"


def render_comparison_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([label for _, label in COMPARISON_COLUMNS])
    w.writerows(comparison_rows(reports))
    return buf.getvalue()


def parse_detections(text: str) -> list[Detection]:
    """``image_id class conf x1 y1 x2 y2`` per line; blank lines ignored."""
    dets = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 7:
            raise DetectionsParseError(lineno, f"expected 7 fields, got {len(fields)}")
        try:
            cls = int(fields[1])
            conf, x1, y1, x2, y2 = (float(t) for t in fields[2:])
            dets.append(Detection(fields[0], cls, PixelBox(x1, y1, x2, y2), conf))
        except ValueError as exc:
            raise DetectionsParseError(lineno, str(exc)) from None
    return dets


def write_detections(dets) -> str:
    return "".join(
        f"{d.image_id} {d.class_id} {d.confidence:.6f} "
        f"{d.box.x1:.6f} {d.box.y1:.6f} {d.box.x2:.6f} {d.box.y2:.6f}\n"
        for d in dets
    )


def load_ground_truths(root, default_size: tuple[int, int] = (640, 640)) -> list[GroundTruth]:
    """Ground truths from ``root/labels`` (or ``root`` itself if it holds the .txt files).

    Image size comes from a sibling ``images/<stem>.ppm`` header when present.
    """
    root = Path(root)
    lbl_dir = root / "labels" if (root / "labels").is_dir() else root
    img_dir = root / "images"
    gts = []
    for path in sorted(lbl_dir.glob("*.txt")):
        w, h = default_size
        ppm = img_dir / (path.stem + ".ppm")
        if ppm.exists():
            w, h = ppm_size(ppm)
        for r in read_label_path(path):
            gts.append(GroundTruth(path.stem, r.class_id, norm_to_pixel(r.box, w, h)))
    return gts


@dataclass
class ImageMatches:
    """Per-image match sets, for reporting average IoU image by image."""

    per_image: dict = field(default_factory=dict)

    @classmethod
    def build(cls, dets, gts, cfg: EvalConfig = EvalConfig()) -> "ImageMatches":
        ids = sorted({d.image_id for d in dets} | {g.image_id for g in gts})
        return cls({i: match_detections([d for d in dets if d.image_id == i],
                                         [g for g in gts if g.image_id == i], cfg) for i in ids})

    def average_iou(self) -> float | None:
        return average_iou(self.per_image.values())
