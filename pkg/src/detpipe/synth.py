"""Deterministic synthetic scenes (colored shapes as object classes) and
scripted mock detectors, so the pipeline can be exercised end to end
without any trained network.

All randomness comes from numpy's PCG64 generator, keyed by
(seed, image index) for scenes and (seed, hash(image_id)) for detectors,
so every byte produced is reproducible across platforms.
"""

from __future__ import annotations

import colorsys
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import GenerationError, ValidationError
from .fusion import ModelOutput
from .model import (Annotation, BoundingBox, Detection, ImageRecord,
                    write_annotations, write_manifest)

_BACKGROUND = (32, 32, 32)
_PLACEMENT_ATTEMPTS = 1000


@dataclass(frozen=True)
class SceneSpec:
    canvas_px: int = 640
    num_classes: int = 8
    objects_per_image: tuple[int, int] = (1, 14)
    size_range: tuple[float, float] = (0.03, 0.4)
    overlap_allowed: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValidationError("num_classes must be >= 1")
        lo, hi = self.objects_per_image
        if not (1 <= lo <= hi):
            raise ValidationError("objects_per_image range is empty")
        slo, shi = self.size_range
        if not (0.0 < slo <= shi <= 1.0):
            raise ValidationError("size_range must be within (0, 1]")
        if self.canvas_px <= 0:
            raise ValidationError("canvas_px must be > 0")


@dataclass(frozen=True)
class MockDetectorSpec:
    model_id: str = "mock"
    grid_size: int = 32
    center_jitter_sigma: float = 0.0
    size_jitter_sigma: float = 0.0
    miss_rate: float = 0.0
    small_miss_rate: float | None = None  # applied when max(w, h) < 0.08
    false_positive_rate: float = 0.0
    confidence_mean: float = 0.8
    confidence_sigma: float = 0.0
    class_error_rate: float = 0.0
    num_classes: int = 8
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.miss_rate < 1.0):
            raise ValidationError("miss_rate must be in [0, 1)")
        if self.small_miss_rate is not None and not (
                0.0 <= self.small_miss_rate < 1.0):
            raise ValidationError("small_miss_rate must be in [0, 1)")
        if self.false_positive_rate < 0.0:
            raise ValidationError("false_positive_rate must be >= 0")
        if not (0.0 < self.confidence_mean < 1.0):
            raise ValidationError("confidence_mean must be in (0, 1)")
        if not (0.0 <= self.class_error_rate < 1.0):
            raise ValidationError("class_error_rate must be in [0, 1)")


def class_color(class_id: int, num_classes: int) -> tuple[int, int, int]:
    hue = (class_id % num_classes) / num_classes
    r, g, b = colorsys.hsv_to_rgb(hue, 0.85, 0.95)
    return int(r * 255), int(g * 255), int(b * 255)


def _render(canvas_px: int, annotations: Sequence[Annotation],
            num_classes: int) -> np.ndarray:
    img = np.empty((canvas_px, canvas_px, 3), dtype=np.uint8)
    img[:] = _BACKGROUND
    yy, xx = np.mgrid[0:canvas_px, 0:canvas_px]
    px = (xx + 0.5) / canvas_px
    py = (yy + 0.5) / canvas_px
    for a in annotations:
        b = a.box
        rx, ry = b.w / 2.0, b.h / 2.0
        dx = (px - b.cx) / rx
        dy = (py - b.cy) / ry
        shape = a.class_id % 3
        if shape == 0:  # ellipse inscribed in the box
            mask = dx * dx + dy * dy <= 1.0
        elif shape == 1:  # filled rectangle
            mask = (np.abs(dx) <= 1.0) & (np.abs(dy) <= 1.0)
        else:  # diamond
            mask = np.abs(dx) + np.abs(dy) <= 1.0
        img[mask] = class_color(a.class_id, num_classes)
    return img


def _sample_box(rng: np.random.Generator, spec: SceneSpec) -> BoundingBox:
    slo, shi = spec.size_range
    w = float(rng.uniform(slo, shi))
    h = float(rng.uniform(slo, shi))
    cx = float(rng.uniform(w / 2.0, 1.0 - w / 2.0))
    cy = float(rng.uniform(h / 2.0, 1.0 - h / 2.0))
    return BoundingBox(cx, cy, w, h)


def _boxes_overlap(a: BoundingBox, b: BoundingBox) -> bool:
    ax0, ay0, ax1, ay1 = a.to_corners()
    bx0, by0, bx1, by1 = b.to_corners()
    return ax0 < bx1 and bx0 < ax1 and ay0 < by1 and by0 < ay1


def generate_scene(spec: SceneSpec,
                   index: int) -> tuple[ImageRecord, np.ndarray]:
    """One synthetic image plus its ground-truth record, keyed by index."""
    rng = np.random.default_rng([spec.seed, index])
    lo, hi = spec.objects_per_image
    n = int(rng.integers(lo, hi + 1))
    annotations: list[Annotation] = []
    for _ in range(n):
        for _attempt in range(_PLACEMENT_ATTEMPTS):
            box = _sample_box(rng, spec)
            if spec.overlap_allowed or not any(
                    _boxes_overlap(box, a.box) for a in annotations):
                break
        else:
            raise GenerationError(
                f"could not place object {len(annotations) + 1} of {n} "
                f"without overlap after {_PLACEMENT_ATTEMPTS} attempts")
        class_id = int(rng.integers(0, spec.num_classes))
        annotations.append(Annotation(class_id, box))
    image_id = f"scene_{index:05d}"
    record = ImageRecord(image_id, spec.canvas_px, spec.canvas_px,
                         f"{image_id}.png", tuple(annotations))
    return record, _render(spec.canvas_px, annotations, spec.num_classes)


def generate_dataset(spec: SceneSpec,
                     count: int) -> list[tuple[ImageRecord, np.ndarray]]:
    return [generate_scene(spec, i) for i in range(count)]


def write_dataset(dataset: Iterable[tuple[ImageRecord, np.ndarray]],
                  out_dir) -> Path:
    """Write PNGs, sibling label files, and a manifest; returns its path."""
    from .preproc import save_png

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for record, img in dataset:
        img_path = out_dir / f"{record.image_id}.png"
        save_png(img, img_path)
        write_annotations(record.annotations, img_path.with_suffix(".txt"))
        records.append(ImageRecord(record.image_id, record.width_px,
                                   record.height_px, str(img_path),
                                   record.annotations))
    manifest = out_dir / "manifest.tsv"
    write_manifest(records, manifest)
    return manifest


def _image_rng(spec_seed: int, image_id: str) -> np.random.Generator:
    digest = hashlib.sha256(image_id.encode("utf-8")).digest()
    return np.random.default_rng(
        [spec_seed, int.from_bytes(digest[:8], "big")])


def _clip01(v: float, lo: float = 0.0, hi: float = 1.0) -> float:
    return min(max(v, lo), hi)


def mock_detect(record: ImageRecord,
                spec: MockDetectorSpec) -> list[Detection]:
    """Scripted noisy detector reading ground truth, not pixels."""
    rng = _image_rng(spec.seed, record.image_id)
    detections: list[Detection] = []
    for a in record.annotations:
        miss_p = spec.miss_rate
        if spec.small_miss_rate is not None and max(a.box.w,
                                                    a.box.h) < 0.08:
            miss_p = spec.small_miss_rate
        if rng.uniform() < miss_p:
            continue
        cx = _clip01(a.box.cx + rng.normal(0.0, spec.center_jitter_sigma)
                     if spec.center_jitter_sigma > 0 else a.box.cx)
        cy = _clip01(a.box.cy + rng.normal(0.0, spec.center_jitter_sigma)
                     if spec.center_jitter_sigma > 0 else a.box.cy)
        w = _clip01(a.box.w + rng.normal(0.0, spec.size_jitter_sigma)
                    if spec.size_jitter_sigma > 0 else a.box.w, 0.005, 1.0)
        h = _clip01(a.box.h + rng.normal(0.0, spec.size_jitter_sigma)
                    if spec.size_jitter_sigma > 0 else a.box.h, 0.005, 1.0)
        conf = (_clip01(rng.normal(spec.confidence_mean,
                                   spec.confidence_sigma), 0.01, 1.0)
                if spec.confidence_sigma > 0 else spec.confidence_mean)
        class_id = a.class_id
        if spec.class_error_rate > 0 and rng.uniform() < spec.class_error_rate:
            class_id = int(rng.integers(0, spec.num_classes))
        detections.append(
            Detection(class_id, conf, BoundingBox(cx, cy, w, h)))
    n_fp = (int(rng.poisson(spec.false_positive_rate))
            if spec.false_positive_rate > 0 else 0)
    for _ in range(n_fp):
        w = float(rng.uniform(0.03, 0.3))
        h = float(rng.uniform(0.03, 0.3))
        cx = float(rng.uniform(w / 2.0, 1.0 - w / 2.0))
        cy = float(rng.uniform(h / 2.0, 1.0 - h / 2.0))
        conf = _clip01(rng.normal(spec.confidence_mean,
                                  max(spec.confidence_sigma, 0.05)),
                       0.01, 1.0)
        detections.append(Detection(int(rng.integers(0, spec.num_classes)),
                                    conf, BoundingBox(cx, cy, w, h)))
    return detections


def make_ensemble(record: ImageRecord,
                  specs: Sequence[MockDetectorSpec]) -> list[ModelOutput]:
    """Run three differently-configured mock detectors over one image."""
    if len(specs) != 3:
        raise ValidationError(f"expected exactly 3 specs, got {len(specs)}")
    ids = [s.model_id for s in specs]
    if len(set(ids)) != 3:
        raise ValidationError(f"duplicate model_id among specs: {ids}")
    return [ModelOutput(s.model_id, s.grid_size,
                        tuple(mock_detect(record, s))) for s in specs]
