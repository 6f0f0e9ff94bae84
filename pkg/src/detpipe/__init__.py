"""Detection-pipeline toolkit.

Submodules:
    model       box/detection/annotation types and on-disk formats
    divergence  Gaussian box modeling, KL/JSD/focal losses, box fitter
    fusion      cross-member clustering, box averaging, class voting, NMS
    evaluation  confidence-sum AP, mAP, IoU-threshold sweeps
    ssda        semi-supervised pseudo-label annotation loop
    preproc     resize/normalize/smooth/equalize and grid assignment
    synth       deterministic synthetic scenes and mock detectors
    cli         the `detpipe` command-line tool
"""

from .model import (Annotation, BoundingBox, DatasetPartition, Detection,
                    ImageRecord, iou)

__all__ = [
    "Annotation", "BoundingBox", "DatasetPartition", "Detection",
    "ImageRecord", "iou",
]

__version__ = "0.1.0"
