"""Semi-supervised annotation loop: train an external detector, infer on the
unlabeled pool, promote confident images with pseudo-labels, repeat.

The detector is abstracted behind shell command templates so any process
that honors the manifest/prediction formats can plug in.
"""

from __future__ import annotations

import shlex
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .errors import AdapterError, ValidationError
from .model import (Annotation, DatasetPartition, Detection, ImageRecord,
                    PredictionSet, read_predictions, write_annotations,
                    write_manifest)


@dataclass(frozen=True)
class DetectorAdapter:
    """Command templates for the external detector.

    train_command must contain {train_list} and {model_out}; infer_command
    must contain {model_in}, {image_list} and {predictions_out}. Templates
    are shell-lexed first, then each token is formatted, so paths with
    spaces survive.
    """

    train_command: str
    infer_command: str
    timeout_seconds: float = 600.0

    def __post_init__(self):
        for ph in ("{train_list}", "{model_out}"):
            if ph not in self.train_command:
                raise ValidationError(f"train_command missing {ph}")
        for ph in ("{model_in}", "{image_list}", "{predictions_out}"):
            if ph not in self.infer_command:
                raise ValidationError(f"infer_command missing {ph}")

    def _run(self, template: str, what: str, **paths) -> None:
        argv = [tok.format(**paths) for tok in shlex.split(template)]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True,
                                  timeout=self.timeout_seconds)
        except subprocess.TimeoutExpired as exc:
            raise AdapterError(f"{what} timed out after "
                               f"{self.timeout_seconds}s: {argv}") from exc
        if proc.returncode != 0:
            raise AdapterError(
                f"{what} exited {proc.returncode}: {argv}",
                output=proc.stdout + proc.stderr)

    def train(self, train_list, model_out) -> None:
        self._run(self.train_command, "train command",
                  train_list=str(train_list), model_out=str(model_out))

    def infer(self, model_in, image_list, predictions_out) -> None:
        self._run(self.infer_command, "infer command",
                  model_in=str(model_in), image_list=str(image_list),
                  predictions_out=str(predictions_out))


@dataclass(frozen=True)
class SsdaConfig:
    adapter: DetectorAdapter
    workdir: str
    max_rounds: int = 4
    confidence_threshold: float = 0.5
    promotion_rule: str = "max"  # or "majority"

    def __post_init__(self):
        if not (1 <= self.max_rounds <= 100):
            raise ValidationError(
                f"max_rounds must be in [1, 100], got {self.max_rounds}")
        if not (0.0 < self.confidence_threshold < 1.0):
            raise ValidationError(
                f"confidence_threshold must be in (0, 1), "
                f"got {self.confidence_threshold}")
        if self.promotion_rule not in ("max", "majority"):
            raise ValidationError(
                f"promotion_rule must be 'max' or 'majority', "
                f"got {self.promotion_rule!r}")


@dataclass(frozen=True)
class IterationLog:
    round: int
    promoted: int
    train_size: int
    test_size: int
    wall_time: float


@dataclass(frozen=True)
class SsdaResult:
    final_train: frozenset[str]
    final_test: frozenset[str]
    pseudo_labels: dict[str, list[Annotation]]
    logs: tuple[IterationLog, ...]


def _promotable(dets: list[Detection], tau: float, rule: str) -> bool:
    if not dets:
        return False
    if rule == "max":
        return max(d.confidence for d in dets) >= tau
    confident = sum(1 for d in dets if d.confidence >= tau)
    return confident * 2 > len(dets)


def promote(test_ids, predictions: PredictionSet, tau: float,
            rule: str = "max") -> tuple[set[str], dict[str, list[Annotation]]]:
    """Select confident images and derive their pseudo-labels.

    An image with no predictions is treated as zero detections and never
    promoted. Pseudo-labels are the detections with confidence >= tau, with
    the confidence dropped.
    """
    add_set: set[str] = set()
    labels: dict[str, list[Annotation]] = {}
    for image_id in sorted(test_ids):
        dets = predictions.get(image_id, [])
        if _promotable(dets, tau, rule):
            add_set.add(image_id)
            labels[image_id] = [Annotation(d.class_id, d.box) for d in dets
                                if d.confidence >= tau]
    return add_set, labels


def run_ssda(partition: DatasetPartition,
             records: Mapping[str, ImageRecord],
             cfg: SsdaConfig) -> SsdaResult:
    """Run the annotation loop for up to max_rounds rounds.

    Each round writes workdir/round_<r>/{train.list, test.list, model,
    predictions, promoted.list, log}, invokes the adapter's train and infer
    commands, and moves promoted images (with their pseudo-labels persisted
    next to the image files) from test to train. Stops early on a round
    that promotes nothing.
    """
    if not partition.train:
        raise ValidationError("train set must be non-empty")
    missing = partition.universe - set(records)
    if missing:
        raise ValidationError(f"no ImageRecord for ids: {sorted(missing)}")

    workdir = Path(cfg.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    current = partition
    all_labels: dict[str, list[Annotation]] = {}
    logs: list[IterationLog] = []

    for rnd in range(1, cfg.max_rounds + 1):
        started = time.monotonic()
        round_dir = workdir / f"round_{rnd}"
        round_dir.mkdir(parents=True, exist_ok=True)
        train_list = round_dir / "train.list"
        test_list = round_dir / "test.list"
        model_path = round_dir / "model"
        predictions_path = round_dir / "predictions"

        write_manifest([records[i] for i in sorted(current.train)], train_list)
        write_manifest([records[i] for i in sorted(current.test)], test_list)

        cfg.adapter.train(train_list, model_path)
        cfg.adapter.infer(model_path, test_list, predictions_path)
        predictions = read_predictions(predictions_path)

        add_set, labels = promote(current.test, predictions,
                                  cfg.confidence_threshold,
                                  cfg.promotion_rule)
        for image_id in sorted(add_set):
            label_path = Path(records[image_id].path).with_suffix(".txt")
            write_annotations(labels[image_id], label_path)
        all_labels.update(labels)
        current = current.promote(add_set)

        with open(round_dir / "promoted.list", "w", encoding="utf-8",
                  newline="\n") as fh:
            for image_id in sorted(add_set):
                fh.write(image_id + "\n")
        with open(round_dir / "log", "w", encoding="utf-8",
                  newline="\n") as fh:
            fh.write(f"round={rnd} promoted={len(add_set)} "
                     f"train_size={len(current.train)} "
                     f"test_size={len(current.test)}\n")

        logs.append(IterationLog(rnd, len(add_set), len(current.train),
                                 len(current.test),
                                 time.monotonic() - started))
        if not add_set or not current.test:
            break

    return SsdaResult(current.train, current.test, all_labels, tuple(logs))


def export_residuals(result: SsdaResult, records: Mapping[str, ImageRecord],
                     out_path) -> None:
    """Write the never-promoted images as a manifest for manual labeling."""
    write_manifest([records[i] for i in sorted(result.final_test)], out_path)
