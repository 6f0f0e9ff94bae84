"""Pseudo-label annotation loop with the bundled mock detector adapter.

A tiny labeled set trains a "detector" (a scripted stand-in process); each
round the detector's confident predictions on the unlabeled pool are
promoted to pseudo-labeled training images until nothing clears the bar.

Run: python3 demos/demo_ssda.py
"""

import json
import sys
import tempfile
from pathlib import Path

from detpipe.model import DatasetPartition, read_manifest
from detpipe.ssda import (DetectorAdapter, SsdaConfig, export_residuals,
                          run_ssda)
from detpipe.synth import SceneSpec, generate_dataset, write_dataset

PY = sys.executable

with tempfile.TemporaryDirectory() as tmp:
    base = Path(tmp)
    data = base / "data"
    data.mkdir()
    manifest = write_dataset(generate_dataset(SceneSpec(seed=7), 6), data)
    records = {r.image_id: r for r in read_manifest(manifest)}
    ids = sorted(records)

    # script the mock detector's confidence per pool image: two confident,
    # two borderline, one hopeless
    script = base / "script.json"
    script.write_text(json.dumps({"default": None, "images": {
        ids[1]: 0.95, ids[2]: 0.8, ids[3]: 0.55, ids[4]: 0.4,
        ids[5]: 0.1}}))

    adapter = DetectorAdapter(
        f"{PY} -m detpipe mock-adapter train "
        "--train-list {train_list} --model-out {model_out}",
        f"{PY} -m detpipe mock-adapter infer --model-in {{model_in}} "
        "--image-list {image_list} --predictions-out {predictions_out} "
        f"--script {script}")

    partition = DatasetPartition.of(ids[:1], ids[1:])
    cfg = SsdaConfig(adapter, str(base / "work"), max_rounds=4,
                     confidence_threshold=0.5)
    result = run_ssda(partition, records, cfg)

    for log in result.logs:
        print(f"round {log.round}: promoted {log.promoted:2d}  "
              f"train {log.train_size}  pool {log.test_size}  "
              f"({log.wall_time:.2f}s)")
    print("pseudo-labeled:", sorted(result.pseudo_labels))
    export_residuals(result, records, base / "residuals.tsv")
    print("residuals for manual labeling:", sorted(result.final_test))
