"""Geometric, bbox-consistent augmentation.

Every op is lowered to a 2x3 affine matrix in pixel-index coordinates (pixel
``(i, j)`` has its center at ``(i, j)``). Images are resampled by inverse
mapping; boxes are moved by transforming their four corners and taking the
axis-aligned hull, then clipping to the frame.

Sign conventions: positive ``Rotate.angle`` turns the picture anticlockwise
as displayed; positive shifts move content right / down.
"""

from __future__ import annotations

import json
import math
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import kernels
from .annotations import (
    AnnotationRecord,
    DatasetEntry,
    DatasetIndex,
    atomic_write,
    read_label_path,
    write_label_file,
)
from .geometry import NormBox, PixelBox, clip_pixel_box, norm_to_pixel, pixel_to_norm
from .raster import ImageBuffer, read_ppm, save_portable_pixmap

ROTATE_RANGE = (2.0, 45.0)
SHIFT_RANGE = (0.06, 0.16)
SCALE_RANGE = (0.03, 0.16)
TRANSLATE_RANGE = (0.02, 0.09)
FLIP_PROBABILITY_RANGE = (0.3, 0.5)


class NonInvertibleTransformError(ValueError):
    pass


@dataclass(frozen=True)
class Rotate:
    angle: float
    name = "rotate"


@dataclass(frozen=True)
class ShiftWidth:
    fraction: float
    name = "shift_width"


@dataclass(frozen=True)
class ShiftHeight:
    fraction: float
    name = "shift_height"


@dataclass(frozen=True)
class Scale:
    shrink: float
    name = "scale"


@dataclass(frozen=True)
class Translate:
    dx: float
    dy: float
    name = "translate"


@dataclass(frozen=True)
class FlipHorizontal:
    name = "flip_horizontal"


@dataclass(frozen=True)
class FlipVertical:
    name = "flip_vertical"


AugmentOp = Rotate | ShiftWidth | ShiftHeight | Scale | Translate | FlipHorizontal | FlipVertical
_OPS = {cls.name: cls for cls in (Rotate, ShiftWidth, ShiftHeight, Scale, Translate,
                                  FlipHorizontal, FlipVertical)}


def op_to_dict(op: AugmentOp) -> dict:
    return {"op": op.name, **asdict(op)}


def op_from_dict(d: dict) -> AugmentOp:
    d = dict(d)
    cls = _OPS[d.pop("op")]
    return cls(**{f.name: float(d[f.name]) for f in fields(cls)})


@dataclass(frozen=True)
class AffineTransform:
    """``x' = a*x + b*y + c``, ``y' = d*x + e*y + f``."""

    a: float = 1.0
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0
    e: float = 1.0
    f: float = 0.0

    @property
    def coefficients(self) -> tuple[float, ...]:
        return (self.a, self.b, self.c, self.d, self.e, self.f)

    @property
    def determinant(self) -> float:
        return self.a * self.e - self.b * self.d

    def apply(self, x, y):
        return self.a * x + self.b * y + self.c, self.d * x + self.e * y + self.f

    def then(self, other: "AffineTransform") -> "AffineTransform":
        """Apply ``self`` first, then ``other``."""
        o = other
        return AffineTransform(
            o.a * self.a + o.b * self.d,
            o.a * self.b + o.b * self.e,
            o.a * self.c + o.b * self.f + o.c,
            o.d * self.a + o.e * self.d,
            o.d * self.b + o.e * self.e,
            o.d * self.c + o.e * self.f + o.f,
        )

    def inverse(self) -> "AffineTransform":
        det = self.determinant
        if abs(det) < 1e-12:
            raise NonInvertibleTransformError(f"singular transform (det={det})")
        a, b, d, e = self.e / det, -self.b / det, -self.d / det, self.a / det
        return AffineTransform(a, b, -(a * self.c + b * self.f), d, e, -(d * self.c + e * self.f))


def _about(cx: float, cy: float, a: float, b: float, d: float, e: float) -> AffineTransform:
    return AffineTransform(a, b, cx - a * cx - b * cy, d, e, cy - d * cx - e * cy)


def op_to_affine(op: AugmentOp, img_w: int, img_h: int) -> AffineTransform:
    cx, cy = (img_w - 1) / 2.0, (img_h - 1) / 2.0
    if isinstance(op, Rotate):
        t = math.radians(op.angle)
        cos, sin = math.cos(t), math.sin(t)
        return _about(cx, cy, cos, sin, -sin, cos)
    if isinstance(op, ShiftWidth):
        return AffineTransform(c=op.fraction * img_w)
    if isinstance(op, ShiftHeight):
        return AffineTransform(f=op.fraction * img_h)
    if isinstance(op, Translate):
        return AffineTransform(c=op.dx * img_w, f=op.dy * img_h)
    if isinstance(op, Scale):
        k = 1.0 - op.shrink
        return _about(cx, cy, k, 0.0, 0.0, k)
    if isinstance(op, FlipHorizontal):
        return AffineTransform(a=-1.0, c=img_w - 1.0)
    if isinstance(op, FlipVertical):
        return AffineTransform(e=-1.0, f=img_h - 1.0)
    raise TypeError(f"unknown augmentation op {op!r}")


def compose_ops(ops, img_w: int, img_h: int) -> AffineTransform:
    t = AffineTransform()
    for op in ops:
        t = t.then(op_to_affine(op, img_w, img_h))
    return t


def apply_affine_to_image(img: ImageBuffer, t: AffineTransform, interpolation: str = "bilinear",
                          fill_color=(0, 0, 0)) -> ImageBuffer:
    if interpolation not in ("nearest", "bilinear"):
        raise ValueError(f"unknown interpolation {interpolation!r}")
    inv = np.array(t.inverse().coefficients, dtype=np.float64)
    fill = np.asarray(fill_color, dtype=np.uint8)
    return ImageBuffer(kernels.warp_affine(img.pixels, inv, interpolation == "bilinear", fill))


def transform_pixel_box(b: PixelBox, t: AffineTransform) -> tuple[float, float, float, float]:
    """Axis-aligned hull of the transformed box, before clipping."""
    # corners live on pixel edges; shift to index coordinates and back
    xs = np.array([b.x1, b.x2, b.x2, b.x1]) - 0.5
    ys = np.array([b.y1, b.y1, b.y2, b.y2]) - 0.5
    tx, ty = t.apply(xs, ys)
    return (float(tx.min()) + 0.5, float(ty.min()) + 0.5,
            float(tx.max()) + 0.5, float(ty.max()) + 0.5)


def apply_affine_to_bbox(b: NormBox, t: AffineTransform, img_w: int, img_h: int,
                         min_frame_fraction: float = 0.01,
                         min_kept_fraction: float = 0.25) -> NormBox | None:
    """Move a label box through ``t``; ``None`` when it is pushed off-frame.

    The drop thresholds only apply to boxes that clipping actually cut:
    a box fully inside the frame is always kept.
    """
    hull = PixelBox(*transform_pixel_box(norm_to_pixel(b, img_w, img_h), t))
    clipped = clip_pixel_box(hull, img_w, img_h)
    if clipped is None:
        return None
    if clipped.area < hull.area and (
        clipped.area < min_frame_fraction * img_w * img_h
        or clipped.area < min_kept_fraction * hull.area
    ):
        return None
    nb = pixel_to_norm(clipped, img_w, img_h)
    # absorb round-off so clipped boxes stay within the unit frame
    return NormBox(*(min(max(v, 0.0), 1.0) for v in nb.as_tuple()))


@dataclass(frozen=True)
class AugmentPlan:
    seed: int
    target_count: int
    flip_probability: float = 0.5
    max_ops_per_job: int = 1
    rotate_range: tuple[float, float] = ROTATE_RANGE
    shift_range: tuple[float, float] = SHIFT_RANGE
    scale_range: tuple[float, float] = SCALE_RANGE
    translate_range: tuple[float, float] = TRANSLATE_RANGE
    interpolation: str = "bilinear"
    fill_color: tuple[int, int, int] = (0, 0, 0)
    min_frame_fraction: float = 0.01
    min_kept_fraction: float = 0.25

    def __post_init__(self) -> None:
        lo, hi = FLIP_PROBABILITY_RANGE
        if not lo <= self.flip_probability <= hi:
            raise ValueError(f"flip_probability must lie in [{lo}, {hi}]")
        if self.max_ops_per_job < 1:
            raise ValueError("max_ops_per_job must be >= 1")


@dataclass(frozen=True)
class AugmentJob:
    entry: DatasetEntry
    ops: tuple = ()
    output_stem: str = ""


def _signed(rng: np.random.Generator, lo: float, hi: float) -> float:
    mag = float(rng.uniform(lo, hi))
    return mag if rng.random() < 0.5 else -mag


def _sample_ops(rng: np.random.Generator, plan: AugmentPlan) -> tuple:
    k = int(rng.integers(1, plan.max_ops_per_job + 1))
    ops = []
    for family in rng.choice(5, size=min(k, 5), replace=False):
        if family == 0:
            ops.append(Rotate(_signed(rng, *plan.rotate_range)))
        elif family == 1:
            ops.append(ShiftWidth(_signed(rng, *plan.shift_range)))
        elif family == 2:
            ops.append(ShiftHeight(_signed(rng, *plan.shift_range)))
        elif family == 3:
            ops.append(Scale(float(rng.uniform(*plan.scale_range))))
        else:
            ops.append(Translate(_signed(rng, *plan.translate_range),
                                 _signed(rng, *plan.translate_range)))
    if rng.random() < plan.flip_probability:
        ops.append(FlipHorizontal())
    if rng.random() < plan.flip_probability:
        ops.append(FlipVertical())
    return tuple(ops)


def sample_plan(plan: AugmentPlan, source: DatasetIndex) -> list[AugmentJob]:
    """Originals first (unmodified), then ``target_count - len(source)`` augmented jobs."""
    n = len(source)
    if plan.target_count < n:
        raise ValueError(f"target_count {plan.target_count} < source size {n}")
    jobs = [AugmentJob(e, (), e.stem) for e in source.entries]
    if n == 0:
        return jobs
    rng = np.random.default_rng(plan.seed)
    order = rng.permutation(n)
    for j in range(plan.target_count - n):
        entry = source.entries[order[j % n]]
        jobs.append(AugmentJob(entry, _sample_ops(rng, plan), f"{entry.stem}_aug{j:05d}"))
    return jobs


@dataclass
class AugmentResult:
    index: DatasetIndex
    dropped: list[str] = field(default_factory=list)
    manifest: list[dict] = field(default_factory=list)


def _run_job(job: AugmentJob, plan: AugmentPlan, img_dir: Path, lbl_dir: Path) -> dict:
    rec = {"output": job.output_stem, "source": job.entry.stem,
           "ops": [op_to_dict(op) for op in job.ops], "seed": plan.seed}
    if not job.ops:
        img_out = img_dir / (job.output_stem + job.entry.image.suffix)
        atomic_write(img_out, job.entry.image.read_bytes())
        atomic_write(lbl_dir / (job.output_stem + ".txt"), job.entry.label.read_bytes())
        rec.update(image=img_out.name, dropped_boxes=0, status="copied")
        return rec
    if job.entry.image.suffix.lower() != ".ppm":
        raise OSError(f"{job.entry.image}: only P6 .ppm images can be augmented")
    img = read_ppm(job.entry.image)
    records = read_label_path(job.entry.label)
    t = compose_ops(job.ops, img.width, img.height)
    kept = []
    for r in records:
        nb = apply_affine_to_bbox(r.box, t, img.width, img.height,
                                  plan.min_frame_fraction, plan.min_kept_fraction)
        if nb is not None:
            kept.append(AnnotationRecord(r.class_id, nb))
    rec["dropped_boxes"] = len(records) - len(kept)
    if records and not kept:
        rec.update(image=None, status="dropped")
        return rec
    out = apply_affine_to_image(img, t, plan.interpolation, plan.fill_color)
    img_out = img_dir / (job.output_stem + ".ppm")
    atomic_write(img_out, save_portable_pixmap(out))
    atomic_write(lbl_dir / (job.output_stem + ".txt"), write_label_file(kept))
    rec.update(image=img_out.name, status="augmented")
    return rec


def run_jobs(jobs, plan: AugmentPlan, out_dir, image_size=(640, 640), workers: int = 1) -> AugmentResult:
    out_dir = Path(out_dir)
    img_dir, lbl_dir = out_dir / "images", out_dir / "labels"
    img_dir.mkdir(parents=True, exist_ok=True)
    lbl_dir.mkdir(parents=True, exist_ok=True)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            manifest = list(pool.map(lambda j: _run_job(j, plan, img_dir, lbl_dir), jobs))
    else:
        manifest = [_run_job(j, plan, img_dir, lbl_dir) for j in jobs]
    entries = tuple(
        DatasetEntry(img_dir / m["image"], lbl_dir / (m["output"] + ".txt"))
        for m in manifest if m["image"] is not None
    )
    dropped = [m["output"] for m in manifest if m["image"] is None]
    return AugmentResult(DatasetIndex(entries, image_size), dropped, manifest)


def augment_dataset(source: DatasetIndex, plan: AugmentPlan, out_dir, workers: int = 1) -> AugmentResult:
    """Write ``out_dir/{images,labels}`` plus ``manifest.json``."""
    result = run_jobs(sample_plan(plan, source), plan, out_dir, source.image_size, workers)
    write_manifest(Path(out_dir) / "manifest.json", plan, result)
    return result


def write_manifest(path, plan: AugmentPlan, result: AugmentResult) -> None:
    doc = {"plan": asdict(plan), "dropped": result.dropped, "jobs": result.manifest}
    atomic_write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def plan_from_dict(d: dict) -> AugmentPlan:
    d = dict(d)
    for k in ("rotate_range", "shift_range", "scale_range", "translate_range", "fill_color"):
        if k in d:
            d[k] = tuple(d[k])
    return AugmentPlan(**d)


def replay_manifest(manifest_path, source: DatasetIndex, out_dir, workers: int = 1) -> AugmentResult:
    """Re-run the recorded op sequences (no resampling of parameters)."""
    doc = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    plan = plan_from_dict(doc["plan"])
    by_stem = {e.stem: e for e in source.entries}
    jobs = []
    for m in doc["jobs"]:
        if m["source"] not in by_stem:
            raise OSError(f"manifest source {m['source']!r} not in dataset")
        jobs.append(AugmentJob(by_stem[m["source"]],
                               tuple(op_from_dict(o) for o in m["ops"]), m["output"]))
    result = run_jobs(jobs, plan, out_dir, source.image_size, workers)
    write_manifest(Path(out_dir) / "manifest.json", plan, result)
    return result
