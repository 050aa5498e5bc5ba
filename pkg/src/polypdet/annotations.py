"""YOLO label files, the class-config file, dataset indexing and splitting.

Label file: one object per line, ``class cx cy w h`` with normalized floats.
An empty file marks an image without polyps.

Class config mirrors the usual ``data.yaml``::

    train: ../train/images
    val: ../valid/images
    test: ../test/images
    nc: 1
    names: ['polyp']
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
import yaml

from .geometry import NormBox

IMAGE_SUFFIXES = (".ppm", ".png", ".jpg", ".jpeg", ".bmp")


class LabelParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class ConfigError(ValueError):
    pass


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class AnnotationRecord:
    class_id: int
    box: NormBox


@dataclass(frozen=True)
class ClassConfig:
    class_names: tuple[str, ...]
    train_path: str
    val_path: str
    test_path: str | None = None

    def __post_init__(self) -> None:
        if not self.class_names:
            raise ConfigError("names: class name list is empty")
        if len(set(self.class_names)) != len(self.class_names):
            raise ConfigError("names: duplicate class names")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


@dataclass(frozen=True)
class DatasetEntry:
    image: Path
    label: Path

    @property
    def stem(self) -> str:
        return self.image.stem


@dataclass(frozen=True)
class DatasetIndex:
    entries: tuple[DatasetEntry, ...]
    image_size: tuple[int, int] = (640, 640)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


@dataclass(frozen=True)
class SplitSpec:
    seed: int
    test_fraction: float = 0.20
    val_fraction_of_train: float = 0.20

    def __post_init__(self) -> None:
        for name in ("test_fraction", "val_fraction_of_train"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")


def _parse_float(tok: str, lineno: int, name: str) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise LabelParseError(lineno, f"{name}: non-numeric token {tok!r}") from None
    if not math.isfinite(v):
        raise LabelParseError(lineno, f"{name}: non-finite value {tok!r}")
    return v


def parse_label_file(text: str, num_classes: int | None = None) -> list[AnnotationRecord]:
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 5:
            raise LabelParseError(lineno, f"expected 5 fields, got {len(fields)}")
        try:
            class_id = int(fields[0])
        except ValueError:
            raise LabelParseError(lineno, f"class: non-integer token {fields[0]!r}") from None
        if class_id < 0:
            raise LabelParseError(lineno, f"class: negative id {class_id}")
        if num_classes is not None and class_id >= num_classes:
            raise LabelParseError(lineno, f"class: id {class_id} >= {num_classes} classes")
        values = [
            _parse_float(tok, lineno, name)
            for tok, name in zip(fields[1:], ("cx", "cy", "w", "h"))
        ]
        for v, name in zip(values, ("cx", "cy", "w", "h")):
            if not 0.0 <= v <= 1.0:
                raise LabelParseError(lineno, f"{name}: {v} outside [0, 1]")
        try:
            box = NormBox(*values)
        except ValueError as exc:
            raise LabelParseError(lineno, str(exc)) from None
        records.append(AnnotationRecord(class_id, box))
    return records


def write_label_file(records) -> str:
    return "".join(
        f"{r.class_id} {r.box.cx:.6f} {r.box.cy:.6f} {r.box.w:.6f} {r.box.h:.6f}\n"
        for r in records
    )


def read_label_path(path: Path, num_classes: int | None = None) -> list[AnnotationRecord]:
    try:
        return parse_label_file(Path(path).read_text(encoding="utf-8"), num_classes)
    except LabelParseError as exc:
        raise LabelParseError(exc.lineno, f"{path}: {exc.args[0]}") from None


def parse_class_config(text: str) -> ClassConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a key/value mapping")
    for key in ("names", "train", "val"):
        if key not in data or data[key] is None:
            raise ConfigError(f"missing key: {key}")
    names = data["names"]
    # {0: polyp, 1: ...} is also common in the wild
    if isinstance(names, dict):
        names = [names[k] for k in sorted(names)]
    if not isinstance(names, list):
        raise ConfigError("names: expected a list")
    names = tuple(str(n) for n in names)
    if "nc" in data and int(data["nc"]) != len(names):
        raise ConfigError(f"nc: declares {data['nc']} classes but names lists {len(names)}")
    test = data.get("test")
    return ClassConfig(names, str(data["train"]), str(data["val"]), None if test is None else str(test))


def write_class_config(cfg: ClassConfig) -> str:
    lines = [f"train: {cfg.train_path}", f"val: {cfg.val_path}"]
    if cfg.test_path is not None:
        lines.append(f"test: {cfg.test_path}")
    lines.append(f"nc: {cfg.num_classes}")
    lines.append("names: [" + ", ".join(repr(n) for n in cfg.class_names) + "]")
    return "\n".join(lines) + "\n"


def scan_dataset(root, image_size: tuple[int, int] = (640, 640)) -> DatasetIndex:
    """Index ``root/images`` against ``root/labels`` by file stem."""
    root = Path(root)
    img_dir, lbl_dir = root / "images", root / "labels"
    for d in (img_dir, lbl_dir):
        if not d.is_dir():
            raise DatasetError(f"missing directory: {d}")
    images = sorted(p for p in img_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    labels = {p.stem: p for p in lbl_dir.iterdir() if p.suffix == ".txt"}
    stems = [p.stem for p in images]
    if len(set(stems)) != len(stems):
        raise DatasetError(f"duplicate image stems in {img_dir}")
    entries = []
    for img in images:
        if img.stem not in labels:
            raise DatasetError(f"missing label file for image stem {img.stem!r}")
        entries.append(DatasetEntry(img, labels.pop(img.stem)))
    if labels:
        orphan = sorted(labels)[0]
        raise DatasetError(f"label file without image: stem {orphan!r}")
    return DatasetIndex(tuple(entries), image_size)


def _round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


def split_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    """``(train, val, test)`` sizes; fractions are taken as written in decimal."""
    n_test = _round_half_up(Fraction(str(spec.test_fraction)) * n)
    n_val = _round_half_up(Fraction(str(spec.val_fraction_of_train)) * (n - n_test))
    return n - n_test - n_val, n_val, n_test


def split_dataset(index: DatasetIndex, spec: SplitSpec) -> tuple[DatasetIndex, DatasetIndex, DatasetIndex]:
    n = len(index)
    n_train, n_val, n_test = split_sizes(n, spec)
    if n < 5 or min(n_train, n_val, n_test) < 1:
        raise DatasetError(f"{n} entries cannot fill train/val/test partitions")
    order = np.random.default_rng(spec.seed).permutation(n)
    picked = [index.entries[i] for i in order]
    test = picked[:n_test]
    val = picked[n_test:n_test + n_val]
    train = picked[n_test + n_val:]
    # keep the on-disk order inside each partition
    rank = {e: i for i, e in enumerate(index.entries)}
    return tuple(
        DatasetIndex(tuple(sorted(part, key=rank.__getitem__)), index.image_size)
        for part in (train, val, test)
    )


def atomic_write(path, data: bytes | str) -> None:
    """Write via a temporary sibling and rename, so readers never see partial files."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    if isinstance(data, str):
        data = data.encode("utf-8")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
