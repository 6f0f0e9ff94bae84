"""Average-precision evaluation.

AP here is the confidence-sum formulation: the summed confidences of matched
detections of a class divided by the class's ground-truth instance count, so
AP stays in [0, 1] once the numerator is restricted to IoU-matched
detections. mAP averages AP over classes that have at least one instance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import ValidationError
from .model import Annotation, Detection, iou

DEFAULT_THRESHOLDS = (0.5, 0.75, 0.9)


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple[tuple[int, int, float], ...]  # (det idx, gt idx, iou)
    unmatched_detections: tuple[int, ...]
    unmatched_ground_truths: tuple[int, ...]


@dataclass(frozen=True)
class EvalReport:
    threshold: float
    per_class_ap: dict[int, float]
    map_value: float
    instance_counts: dict[int, int]


def match_greedy(detections: Sequence[Detection],
                 ground_truths: Sequence[Annotation],
                 iou_threshold: float) -> MatchResult:
    """Greedy one-to-one matching, detections in confidence-descending order.

    Each detection takes the highest-IoU unmatched same-class ground truth
    with IoU >= threshold; IoU ties go to the lower ground-truth index.
    """
    order = sorted(range(len(detections)),
                   key=lambda i: (-detections[i].confidence, i))
    taken = [False] * len(ground_truths)
    pairs = []
    unmatched_dets = []
    for di in order:
        det = detections[di]
        best_gi, best_iou = -1, -1.0
        for gi, gt in enumerate(ground_truths):
            if taken[gi] or gt.class_id != det.class_id:
                continue
            overlap = iou(det.box, gt.box)
            if overlap >= iou_threshold and overlap > best_iou:
                best_gi, best_iou = gi, overlap
        if best_gi >= 0:
            taken[best_gi] = True
            pairs.append((di, best_gi, best_iou))
        else:
            unmatched_dets.append(di)
    unmatched_gts = tuple(gi for gi, t in enumerate(taken) if not t)
    return MatchResult(tuple(pairs), tuple(unmatched_dets), unmatched_gts)


def _class_instance_counts(
        ground_truth_set: Mapping[str, Sequence[Annotation]]
) -> dict[int, int]:
    counts: dict[int, int] = {}
    for anns in ground_truth_set.values():
        for a in anns:
            counts[a.class_id] = counts.get(a.class_id, 0) + 1
    return counts


def average_precision(class_id: int,
                      prediction_set: Mapping[str, Sequence[Detection]],
                      ground_truth_set: Mapping[str, Sequence[Annotation]],
                      iou_threshold: float,
                      matched_only: bool = True) -> float:
    """Confidence-sum AP for one class over an image set.

    With matched_only=True (default) only IoU-matched detections contribute
    to the numerator, which bounds AP to [0, 1]. matched_only=False is the
    literal unmatched-inclusive variant, kept for comparison.
    """
    total_instances = 0
    conf_sum = 0.0
    for image_id, gts in ground_truth_set.items():
        gts = list(gts)
        dets = list(prediction_set.get(image_id, ()))
        total_instances += sum(1 for a in gts if a.class_id == class_id)
        if matched_only:
            result = match_greedy(dets, gts, iou_threshold)
            matched = {di for di, _, _ in result.pairs}
            conf_sum += sum(d.confidence for i, d in enumerate(dets)
                            if i in matched and d.class_id == class_id)
        else:
            conf_sum += sum(d.confidence for d in dets
                            if d.class_id == class_id)
    if total_instances == 0:
        raise ValidationError(
            f"AP undefined: no ground-truth instances of class {class_id}")
    return conf_sum / total_instances


def map_over_classes(per_class_ap: Mapping[int, float]) -> float:
    """Arithmetic mean of per-class AP values."""
    if not per_class_ap:
        raise ValidationError("mAP undefined: no class has a defined AP")
    return sum(per_class_ap.values()) / len(per_class_ap)


def evaluate(prediction_set: Mapping[str, Sequence[Detection]],
             ground_truth_set: Mapping[str, Sequence[Annotation]],
             iou_threshold: float,
             matched_only: bool = True) -> EvalReport:
    """One EvalReport at a single IoU threshold."""
    counts = _class_instance_counts(ground_truth_set)
    per_class = {
        cid: average_precision(cid, prediction_set, ground_truth_set,
                               iou_threshold, matched_only)
        for cid in sorted(counts)
    }
    return EvalReport(iou_threshold, per_class, map_over_classes(per_class),
                      counts)


def threshold_sweep(prediction_set: Mapping[str, Sequence[Detection]],
                    ground_truth_set: Mapping[str, Sequence[Annotation]],
                    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
                    matched_only: bool = True) -> list[EvalReport]:
    """Evaluate at each IoU threshold; reports ordered threshold-ascending."""
    return [evaluate(prediction_set, ground_truth_set, t, matched_only)
            for t in sorted(thresholds)]


def format_report(reports: Sequence[EvalReport]) -> str:
    """Aligned text table over one or more thresholds."""
    lines = []
    for rep in reports:
        lines.append(f"IoU threshold {rep.threshold:.2f}")
        lines.append(f"{'class':>8} {'instances':>10} {'AP':>8}")
        for cid in sorted(rep.per_class_ap):
            lines.append(f"{cid:>8} {rep.instance_counts[cid]:>10} "
                         f"{rep.per_class_ap[cid]:>8.4f}")
        lines.append(f"{'mAP':>8} {'':>10} {rep.map_value:>8.4f}")
        lines.append("")
    return "\n".join(lines)
