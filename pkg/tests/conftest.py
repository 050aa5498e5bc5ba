import sys
from pathlib import Path

import numpy as np
import pytest

from polypdet import kernels
from polypdet.annotations import AnnotationRecord, scan_dataset, write_label_file
from polypdet.geometry import NormBox, PixelBox, pixel_to_norm
from polypdet.raster import make_marker_image, save_portable_pixmap

sys.path.insert(0, str(Path(__file__).parent))

BACKENDS = ["python"] + (["cython"] if kernels.compiled_backend is not None else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run the test once per available kernel backend."""
    mod = kernels.compiled_backend if request.param == "cython" else kernels.python_backend
    monkeypatch.setattr(kernels, "warp_affine", mod.warp_affine)
    monkeypatch.setattr(kernels, "greedy_nms", mod.greedy_nms)
    return request.param


def write_marker_dataset(root: Path, n: int, size: int = 64, seed: int = 0) -> Path:
    """``n`` marker images (one red rectangle each) with matching label files."""
    rng = np.random.default_rng(seed)
    (root / "images").mkdir(parents=True)
    (root / "labels").mkdir()
    for k in range(n):
        w, h = rng.integers(size // 6, size // 2, size=2)
        x1 = rng.integers(size // 8, size - size // 8 - w)
        y1 = rng.integers(size // 8, size - size // 8 - h)
        box = PixelBox(float(x1), float(y1), float(x1 + w), float(y1 + h))
        img = make_marker_image(size, size, box)
        (root / "images" / f"img_{k:04d}.ppm").write_bytes(save_portable_pixmap(img))
        rec = AnnotationRecord(0, pixel_to_norm(box, size, size))
        (root / "labels" / f"img_{k:04d}.txt").write_text(write_label_file([rec]))
    return root


@pytest.fixture
def marker_dataset(tmp_path):
    root = write_marker_dataset(tmp_path / "src", 6)
    return scan_dataset(root, (64, 64))


def write_stub_dataset(root: Path, n: int) -> Path:
    """``n`` tiny entries for split tests; image bytes are irrelevant there."""
    (root / "images").mkdir(parents=True)
    (root / "labels").mkdir()
    for k in range(n):
        (root / "images" / f"s{k:05d}.ppm").write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
        (root / "labels" / f"s{k:05d}.txt").write_text(
            write_label_file([AnnotationRecord(0, NormBox(0.5, 0.5, 0.25, 0.25))]))
    return root


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for line in sorted(results, key=lambda s: s[6:8]):
            terminalreporter.write_line(line)
