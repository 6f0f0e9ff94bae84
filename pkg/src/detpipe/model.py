"""Canonical data model: boxes, detections, annotations, dataset partitions,
and the on-disk formats that carry them between pipeline stages.

All coordinates are normalized to the unit square. Pixel conversion happens
only at image-touching boundaries (preproc, synth).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .errors import GeometryError, ParseError, ValidationError


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box as normalized center/size: (cx, cy, w, h)."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise ValidationError(
                f"box center out of range: cx={self.cx}, cy={self.cy}")
        if not (0.0 < self.w <= 1.0 and 0.0 < self.h <= 1.0):
            raise GeometryError(
                f"box size must be in (0, 1]: w={self.w}, h={self.h}")

    def to_corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2.0, self.cy - self.h / 2.0,
                self.cx + self.w / 2.0, self.cy + self.h / 2.0)

    @staticmethod
    def from_corners(x_min: float, y_min: float, x_max: float,
                     y_max: float) -> "BoundingBox":
        if x_max <= x_min or y_max <= y_min:
            raise GeometryError(
                f"degenerate corner box: ({x_min}, {y_min}, {x_max}, {y_max})")
        return BoundingBox((x_min + x_max) / 2.0, (y_min + y_max) / 2.0,
                           x_max - x_min, y_max - y_min)

    @property
    def area(self) -> float:
        return self.w * self.h


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes, in [0, 1]."""
    if a == b:  # exact 1.0 for identical boxes
        return 1.0
    ax0, ay0, ax1, ay1 = a.to_corners()
    bx0, by0, bx1, by1 = b.to_corners()
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union


@dataclass(frozen=True)
class Detection:
    class_id: int
    confidence: float
    box: BoundingBox

    def __post_init__(self):
        if self.class_id < 0:
            raise ValidationError(f"negative class_id: {self.class_id}")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValidationError(
                f"confidence out of [0, 1]: {self.confidence}")


@dataclass(frozen=True)
class Annotation:
    class_id: int
    box: BoundingBox

    def __post_init__(self):
        if self.class_id < 0:
            raise ValidationError(f"negative class_id: {self.class_id}")


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    width_px: int
    height_px: int
    path: str
    annotations: tuple[Annotation, ...] = ()

    def __post_init__(self):
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValidationError(
                f"non-positive image dimensions: "
                f"{self.width_px}x{self.height_px}")


@dataclass(frozen=True)
class DatasetPartition:
    """Disjoint train/test split covering a fixed universe of image ids."""

    train: frozenset[str]
    test: frozenset[str]
    universe: frozenset[str]

    def __post_init__(self):
        if self.train & self.test:
            raise ValidationError(
                f"train/test overlap: {sorted(self.train & self.test)}")
        if self.train | self.test != self.universe:
            missing = self.universe - (self.train | self.test)
            extra = (self.train | self.test) - self.universe
            raise ValidationError(
                f"partition does not cover universe "
                f"(missing={sorted(missing)}, extra={sorted(extra)})")

    @staticmethod
    def of(train: Iterable[str], test: Iterable[str]) -> "DatasetPartition":
        tr, te = frozenset(train), frozenset(test)
        return DatasetPartition(tr, te, tr | te)

    def promote(self, ids: Iterable[str]) -> "DatasetPartition":
        """Move ids from test to train; ids must currently be in test."""
        moved = frozenset(ids)
        if not moved <= self.test:
            raise ValidationError(
                f"cannot promote ids not in test: {sorted(moved - self.test)}")
        return DatasetPartition(self.train | moved, self.test - moved,
                                self.universe)


# PredictionSet is a plain mapping image_id -> list[Detection]; validated
# against a partition's universe where one is in play.
PredictionSet = dict[str, list[Detection]]


def validate_predictions(predictions: Mapping[str, list[Detection]],
                         universe: frozenset[str]) -> None:
    unknown = set(predictions) - universe
    if unknown:
        raise ValidationError(
            f"predictions for unknown image ids: {sorted(unknown)}")


# ---------------------------------------------------------------------------
# On-disk formats
# ---------------------------------------------------------------------------

def parse_annotation_line(line: str, path=None, lineno=None) -> Annotation:
    parts = line.split()
    if len(parts) != 5:
        raise ParseError(f"expected 5 fields, got {len(parts)}", path, lineno)
    try:
        class_id = int(parts[0])
        vals = [float(v) for v in parts[1:]]
    except ValueError as exc:
        raise ParseError(f"unparsable field: {exc}", path, lineno) from exc
    try:
        return Annotation(class_id, BoundingBox(*vals))
    except ValidationError as exc:
        raise ValidationError(
            f"{exc} (line {lineno}{'' if path is None else ' of ' + str(path)})"
        ) from exc


def read_annotations(path) -> list[Annotation]:
    """Read a one-object-per-line label file: `class_id cx cy w h`."""
    out = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            out.append(parse_annotation_line(line, path, lineno))
    return out


def format_annotation(a: Annotation) -> str:
    b = a.box
    return f"{a.class_id} {b.cx:.6f} {b.cy:.6f} {b.w:.6f} {b.h:.6f}"


def write_annotations(annotations: Iterable[Annotation], path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for a in annotations:
            fh.write(format_annotation(a) + "\n")


def read_predictions(path) -> PredictionSet:
    """Read a newline-delimited prediction file: one JSON object per image."""
    out: PredictionSet = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"bad JSON: {exc}", path, lineno) from exc
            try:
                image_id = obj["image_id"]
                dets = [
                    Detection(int(d["class_id"]), float(d["confidence"]),
                              BoundingBox(*[float(v) for v in d["box"]]))
                    for d in obj["detections"]
                ]
            except (KeyError, TypeError) as exc:
                raise ParseError(f"bad record shape: {exc}", path,
                                 lineno) from exc
            out[image_id] = dets
    return out


def write_predictions(predictions: Mapping[str, list[Detection]],
                      path) -> None:
    """Write predictions sorted by image_id, one JSON object per line."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for image_id in sorted(predictions):
            record = {
                "image_id": image_id,
                "detections": [{
                    "class_id": d.class_id,
                    "confidence": round(d.confidence, 6),
                    "box": [round(v, 6) for v in
                            (d.box.cx, d.box.cy, d.box.w, d.box.h)],
                } for d in predictions[image_id]],
            }
            fh.write(json.dumps(record) + "\n")


def read_manifest(path) -> list[ImageRecord]:
    """Read a dataset manifest: `image_id<TAB>path<TAB>width<TAB>height`.

    Annotations are loaded from the sibling `.txt` file of each image path
    when it exists.
    """
    records = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise ParseError(f"expected 4 tab-separated fields, got "
                                 f"{len(parts)}", path, lineno)
            image_id, img_path, w, h = parts
            if image_id in seen:
                raise ParseError(f"duplicate image_id {image_id!r}", path,
                                 lineno)
            seen.add(image_id)
            try:
                width_px, height_px = int(w), int(h)
            except ValueError as exc:
                raise ParseError(f"bad dimensions: {exc}", path,
                                 lineno) from exc
            label_path = Path(img_path).with_suffix(".txt")
            annotations = (tuple(read_annotations(label_path))
                           if label_path.exists() else ())
            records.append(ImageRecord(image_id, width_px, height_px,
                                       img_path, annotations))
    return records


def write_manifest(records: Iterable[ImageRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(f"{r.image_id}\t{r.path}\t{r.width_px}\t{r.height_px}\n")
