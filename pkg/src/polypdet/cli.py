"""``polypdet`` command line: split, augment, decode, evaluate, loss-demo, report.

Every option may also come from ``--config FILE`` (JSON or YAML mapping keyed by
the option's long name with dashes turned into underscores); explicit flags win.
Each run writes its fully resolved options to ``<out>/resolved_config.json``.

Exit codes: 0 success, 1 demo contract violated, 2 input/format error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import shutil
import sys
from importlib import resources
from pathlib import Path

import yaml

from . import __version__
from .annotations import (
    ConfigError,
    DatasetError,
    LabelParseError,
    SplitSpec,
    atomic_write,
    parse_class_config,
    scan_dataset,
    split_dataset,
)
from .augmentation import AugmentPlan, augment_dataset, replay_manifest
from .decoder import (
    VolumeSchemaError,
    confidence_filter,
    config_for_volumes,
    decode_all,
    load_head_volumes,
    nms,
)
from .losses import NonFiniteLossError, fit_boxes_demo, load_fixture
from .metrics import (
    DetectionsParseError,
    EvalConfig,
    evaluate,
    load_ground_truths,
    parse_detections,
    render_comparison_csv,
    render_comparison_table,
    write_detections,
    write_report,
)
from .raster import PixmapFormatError

log = logging.getLogger("polypdet")

EXIT_OK, EXIT_CONTRACT, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


class InputError(Exception):
    pass


def bundled_path(*parts: str) -> Path:
    return Path(str(resources.files("polypdet").joinpath("data", *parts)))


# per-subcommand defaults; ``None`` marks an option that has no default
DEFAULTS = {
    "split": {"dataset": None, "seed": None, "test_fraction": 0.2, "val_fraction": 0.2,
              "link": False, "out": None},
    "augment": {"source": None, "seed": None, "target_count": None, "flip_prob": 0.5,
                "max_ops": 1, "interpolation": "bilinear", "workers": 1, "replay": None,
                "img_size": 640, "out": None},
    "decode": {"volumes": None, "conf_thresh": 0.25, "nms_thresh": 0.45, "no_nms": False,
               "image_id": None, "out": None},
    "evaluate": {"gt": None, "detections": None, "iou_thresh": 0.5, "conf_thresh": 0.25,
                 "img_size": 640, "data_config": None, "name": None, "out": None},
    "loss_demo": {"fixture": None, "lr": 0.01, "steps": 100, "out": None},
    "report": {"runs": None, "out": None},
}
REQUIRED = {
    "split": ("dataset", "seed", "out"),
    "augment": ("source", "seed", "out"),
    "decode": ("volumes", "out"),
    "evaluate": ("gt", "detections", "out"),
    "loss_demo": ("out",),
    "report": ("runs",),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polypdet", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--config", help="JSON/YAML file of option values")
        sp.add_argument("--out", help="output directory")
        return sp

    sp = add("split", "train/val/test split of a dataset directory")
    sp.add_argument("--dataset", help="directory with images/ and labels/")
    sp.add_argument("--seed", type=int, help="permutation seed (required)")
    sp.add_argument("--test-fraction", type=float, help="default 0.2")
    sp.add_argument("--val-fraction", type=float, help="fraction of the non-test part, default 0.2")
    sp.add_argument("--link", action="store_true", default=None, help="symlink instead of copying")

    sp = add("augment", "expand a dataset with bbox-consistent geometric augmentation")
    sp.add_argument("--source", help="directory with images/ and labels/ (P6 .ppm images)")
    sp.add_argument("--seed", type=int, help="sampling seed (required)")
    sp.add_argument("--target-count", type=int, help="total output images, default = source size")
    sp.add_argument("--flip-prob", type=float, help="flip probability in [0.3, 0.5], default 0.5")
    sp.add_argument("--max-ops", type=int, help="max geometric ops per job, default 1")
    sp.add_argument("--interpolation", choices=("bilinear", "nearest"))
    sp.add_argument("--workers", type=int, help="parallel jobs, default 1")
    sp.add_argument("--replay", help="manifest.json to replay instead of sampling")
    sp.add_argument("--img-size", type=int, help="nominal image side recorded in the index")

    sp = add("decode", "decode a head-volume JSON file into detections")
    sp.add_argument("--volumes", help="head-volume JSON file")
    sp.add_argument("--conf-thresh", type=float, help="default 0.25")
    sp.add_argument("--nms-thresh", type=float, help="default 0.45")
    sp.add_argument("--no-nms", action="store_true", default=None)
    sp.add_argument("--image-id", help="image id written on each line, default file stem")

    sp = add("evaluate", "score detections against YOLO label files")
    sp.add_argument("--gt", help="dataset dir (labels/, optional images/) or a labels dir")
    sp.add_argument("--detections", help="detections text file")
    sp.add_argument("--iou-thresh", type=float, help="default 0.5")
    sp.add_argument("--conf-thresh", type=float, help="operating point for P/R, default 0.25")
    sp.add_argument("--img-size", type=int, help="image side when no .ppm is found, default 640")
    sp.add_argument("--data-config", help="class config (data.yaml) fixing the class list")
    sp.add_argument("--name", help="run/model name shown in reports")

    sp = add("loss-demo", "gradient-descent fit of the detection losses on a fixture")
    sp.add_argument("--fixture", help="loss fixture JSON, default bundled")
    sp.add_argument("--lr", type=float, help="learning rate, default 0.01")
    sp.add_argument("--steps", type=int, help="default 100")

    sp = add("report", "compare evaluation runs in one table")
    sp.add_argument("runs", nargs="*", help="evaluate output directories or report.json files")
    return p


def resolve(args: argparse.Namespace) -> dict:
    cmd = args.command.replace("-", "_")
    opts = dict(DEFAULTS[cmd])
    if args.config:
        try:
            loaded = yaml.safe_load(Path(args.config).read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise InputError(f"config {args.config} must be a mapping")
        recorded = loaded.pop("command", args.command)
        if recorded != args.command:
            raise InputError(f"config {args.config} was recorded for {recorded!r}, not {args.command!r}")
        unknown = set(loaded) - set(opts)
        if unknown:
            raise InputError(f"unknown config keys for {args.command}: {sorted(unknown)}")
        opts.update(loaded)
    for k in opts:
        v = getattr(args, k, None)
        if v is not None and v != []:
            opts[k] = v
    for k in REQUIRED[cmd]:
        if opts[k] in (None, []):
            raise InputError(f"--{k.replace('_', '-')} is required")
    return opts


def record_config(out: Path, command: str, opts: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, **{k: (str(v) if isinstance(v, Path) else v) for k, v in opts.items()}}
    atomic_write(out / "resolved_config.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _place(src: Path, dst: Path, link: bool) -> None:
    if dst.exists() or dst.is_symlink():
        dst.unlink()
    if link:
        os.symlink(src.resolve(), dst)
    else:
        shutil.copyfile(src, dst)


def cmd_split(opts: dict) -> int:
    index = scan_dataset(opts["dataset"])
    spec = SplitSpec(int(opts["seed"]), float(opts["test_fraction"]), float(opts["val_fraction"]))
    parts = dict(zip(("train", "val", "test"), split_dataset(index, spec)))
    out = Path(opts["out"])
    assignment = {}
    for name, part in parts.items():
        for sub in ("images", "labels"):
            (out / name / sub).mkdir(parents=True, exist_ok=True)
        for e in part:
            _place(e.image, out / name / "images" / e.image.name, bool(opts["link"]))
            _place(e.label, out / name / "labels" / e.label.name, bool(opts["link"]))
            assignment[e.stem] = name
    manifest = {
        "seed": spec.seed,
        "sizes": {n: len(p) for n, p in parts.items()},
        "assignments": dict(sorted(assignment.items())),
    }
    atomic_write(out / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    record_config(out, "split", opts)
    print(" ".join(f"{n}={len(p)}" for n, p in parts.items()))
    return EXIT_OK


def cmd_augment(opts: dict) -> int:
    size = int(opts["img_size"])
    source = scan_dataset(opts["source"], (size, size))
    out = Path(opts["out"])
    if opts["replay"]:
        result = replay_manifest(opts["replay"], source, out, int(opts["workers"]))
    else:
        target = len(source) if opts["target_count"] is None else int(opts["target_count"])
        plan = AugmentPlan(seed=int(opts["seed"]), target_count=target,
                           flip_probability=float(opts["flip_prob"]),
                           max_ops_per_job=int(opts["max_ops"]),
                           interpolation=opts["interpolation"])
        result = augment_dataset(source, plan, out, int(opts["workers"]))
    record_config(out, "augment", opts)
    print(f"wrote {len(result.index)} images; {len(result.dropped)} dropped (all boxes left the frame)")
    for stem in result.dropped:
        log.info("dropped %s", stem)
    return EXIT_OK


def cmd_decode(opts: dict) -> int:
    path = Path(opts["volumes"])
    volumes, input_size = load_head_volumes(path)
    try:
        cfg = config_for_volumes(volumes, input_size,
                                 confidence_threshold=float(opts["conf_thresh"]),
                                 nms_iou_threshold=float(opts["nms_thresh"]))
    except ValueError as exc:
        raise VolumeSchemaError(f"{path}: {exc}") from None
    dets = decode_all(volumes, cfg, opts["image_id"] or path.stem)
    dets = confidence_filter(dets, cfg)
    if not opts["no_nms"]:
        dets = nms(dets, cfg)
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "detections.txt", write_detections(dets))
    record_config(out, "decode", opts)
    print(f"{len(dets)} detections")
    return EXIT_OK


def cmd_evaluate(opts: dict) -> int:
    size = int(opts["img_size"])
    gts = load_ground_truths(opts["gt"], (size, size))
    det_path = Path(opts["detections"])
    try:
        dets = parse_detections(det_path.read_text(encoding="utf-8"))
    except DetectionsParseError as exc:
        raise InputError(f"{det_path}: {exc}") from None
    classes = None
    if opts["data_config"]:
        cc = parse_class_config(Path(opts["data_config"]).read_text(encoding="utf-8"))
        classes = list(range(cc.num_classes))
    cfg = EvalConfig(iou_threshold=float(opts["iou_thresh"]))
    name = opts["name"] or Path(opts["gt"]).name
    report = evaluate(dets, gts, cfg, float(opts["conf_thresh"]), classes, name)
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_report(report, out)
    record_config(out, "evaluate", opts)
    print((out / "report.txt").read_text(encoding="utf-8"), end="")
    return EXIT_OK


def cmd_loss_demo(opts: dict) -> int:
    fixture = opts["fixture"] or bundled_path("loss_fixture.json")
    opts = {**opts, "fixture": str(fixture)}
    steps, lr = int(opts["steps"]), float(opts["lr"])
    if steps < 1:
        raise InputError("--steps must be >= 1")
    if lr < 0:
        raise InputError("--lr must be >= 0")
    pred, tgt, weights = load_fixture(fixture)
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    record_config(out, "loss-demo", opts)
    result = fit_boxes_demo(pred, tgt, weights, lr, steps)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "loss"])
    w.writerows((k, repr(v)) for k, v in enumerate(result.losses))
    atomic_write(out / "trajectory.csv", buf.getvalue())
    summary = {"initial_loss": result.losses[0], "final_loss": result.losses[-1],
               "steps": steps, "learning_rate": lr,
               "strictly_decreasing": result.strictly_decreasing}
    atomic_write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"loss {result.losses[0]:.6g} -> {result.losses[-1]:.6g} over {steps} steps")
    if not result.strictly_decreasing:
        print("error: loss did not decrease strictly at every step", file=sys.stderr)
        return EXIT_CONTRACT
    return EXIT_OK


def cmd_report(opts: dict) -> int:
    reports = []
    for run in opts["runs"]:
        path = Path(run)
        if path.is_dir():
            path = path / "report.json"
        if not path.is_file():
            raise InputError(f"missing report file: {path}")
        reports.append(json.loads(path.read_text(encoding="utf-8")))
    table = render_comparison_table(reports)
    if opts["out"]:
        out = Path(opts["out"])
        out.mkdir(parents=True, exist_ok=True)
        atomic_write(out / "comparison.txt", table)
        atomic_write(out / "comparison.csv", render_comparison_csv(reports))
        record_config(out, "report", opts)
    print(table, end="")
    return EXIT_OK


COMMANDS = {
    "split": cmd_split,
    "augment": cmd_augment,
    "decode": cmd_decode,
    "evaluate": cmd_evaluate,
    "loss_demo": cmd_loss_demo,
    "report": cmd_report,
}

INPUT_ERRORS = (InputError, DatasetError, LabelParseError, ConfigError, VolumeSchemaError,
                PixmapFormatError, DetectionsParseError, OSError, ValueError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = resolve(args)
        return COMMANDS[args.command.replace("-", "_")](opts)
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
