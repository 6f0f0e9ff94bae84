"""Ensemble fusion: match detections across members, average boxes, vote on
classes, then suppress duplicates."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .errors import ValidationError
from .model import BoundingBox, Detection, iou

VALID_GRID_SIZES = (32, 16, 8)


@dataclass(frozen=True)
class ModelOutput:
    """One ensemble member's detections for a single image."""

    model_id: str
    grid_size: int
    detections: tuple[Detection, ...]

    def __post_init__(self):
        if self.grid_size not in VALID_GRID_SIZES:
            raise ValidationError(
                f"grid_size must be one of {VALID_GRID_SIZES}, "
                f"got {self.grid_size}")


@dataclass
class Cluster:
    """Cross-member group of detections believed to be the same object."""

    members: list[tuple[str, Detection]] = field(default_factory=list)

    def model_ids(self) -> set[str]:
        return {mid for mid, _ in self.members}

    def add(self, model_id: str, det: Detection) -> None:
        if model_id in self.model_ids():
            raise ValidationError(
                f"cluster already holds a detection from {model_id!r}")
        self.members.append((model_id, det))


@dataclass(frozen=True)
class FusionConfig:
    match_iou: float = 0.5
    min_members: int = 1
    confidence_floor: float = 0.0
    nms_iou: float = 0.65

    def __post_init__(self):
        if not (0.0 < self.match_iou < 1.0):
            raise ValidationError(
                f"match_iou must be in (0, 1), got {self.match_iou}")
        if self.min_members < 1:
            raise ValidationError("min_members must be >= 1")
        if not (0.0 <= self.confidence_floor <= 1.0):
            raise ValidationError("confidence_floor must be in [0, 1]")
        if not (0.0 < self.nms_iou < 1.0):
            raise ValidationError("nms_iou must be in (0, 1)")


def _check_distinct_models(outputs: list[ModelOutput]) -> None:
    ids = [o.model_id for o in outputs]
    if len(ids) != len(set(ids)):
        raise ValidationError(f"duplicate model_id in ensemble: {ids}")


def cluster_detections(outputs: list[ModelOutput],
                       cfg: FusionConfig = FusionConfig()) -> list[Cluster]:
    """Greedy cross-member association.

    Detections are visited in confidence-descending order (ties broken by
    model_id, then input order, for determinism). Each detection joins the
    existing cluster with the highest IoU >= match_iou among clusters that
    do not yet hold a detection from its model; otherwise it seeds a new
    cluster.
    """
    _check_distinct_models(outputs)
    pool = [(det, out.model_id, i)
            for out in sorted(outputs, key=lambda o: o.model_id)
            for i, det in enumerate(out.detections)]
    pool.sort(key=lambda t: (-t[0].confidence, t[1], t[2]))

    clusters: list[Cluster] = []
    for det, model_id, _ in pool:
        best, best_iou = None, cfg.match_iou
        for c in clusters:
            if model_id in c.model_ids():
                continue
            # compare against the cluster seed (highest-confidence member)
            overlap = iou(det.box, c.members[0][1].box)
            if overlap >= best_iou:
                best, best_iou = c, overlap
        if best is None:
            c = Cluster()
            c.add(model_id, det)
            clusters.append(c)
        else:
            best.add(model_id, det)
    return clusters


def fuse_cluster(c: Cluster) -> Detection:
    """Average member boxes; pick the class by plurality vote.

    Vote ties break by greatest summed confidence among the tied classes,
    then smallest class_id. Fused confidence is the mean confidence of the
    members that voted for the winning class.
    """
    if not c.members:
        raise ValidationError("cannot fuse an empty cluster")
    boxes = [d.box for _, d in c.members]

    def mean(values):  # anchored at the first value: exact for copies
        v0 = values[0]
        return v0 + sum(v - v0 for v in values) / len(values)

    fused_box = BoundingBox(mean([b.cx for b in boxes]),
                            mean([b.cy for b in boxes]),
                            mean([b.w for b in boxes]),
                            mean([b.h for b in boxes]))

    votes = Counter(d.class_id for _, d in c.members)
    conf_sum = Counter()
    for _, d in c.members:
        conf_sum[d.class_id] += d.confidence
    winner = min(votes, key=lambda cid: (-votes[cid], -conf_sum[cid], cid))

    winners = [d.confidence for _, d in c.members if d.class_id == winner]
    return Detection(winner, mean(winners), fused_box)


def nms(detections: list[Detection],
        iou_threshold: float = 0.65) -> list[Detection]:
    """Greedy same-class suppression, confidence descending."""
    order = sorted(range(len(detections)),
                   key=lambda i: (-detections[i].confidence, i))
    kept: list[Detection] = []
    for i in order:
        d = detections[i]
        if any(k.class_id == d.class_id and iou(k.box, d.box) > iou_threshold
               for k in kept):
            continue
        kept.append(d)
    return kept


def fuse_image(outputs: list[ModelOutput],
               cfg: FusionConfig = FusionConfig()) -> list[Detection]:
    """Full per-image fusion: cluster, fuse, filter, suppress."""
    if not outputs:
        return []
    clusters = cluster_detections(outputs, cfg)
    fused = [fuse_cluster(c) for c in clusters
             if len(c.members) >= cfg.min_members]
    fused = [d for d in fused if d.confidence >= cfg.confidence_floor]
    return nms(fused, cfg.nms_iou)
