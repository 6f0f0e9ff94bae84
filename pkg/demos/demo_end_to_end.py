"""Full pipeline through the CLI layer: synthesize a dataset, preprocess an
image, run three mock detectors, fuse their predictions, and evaluate.

Run: python3 demos/demo_end_to_end.py
"""

import json
import tempfile
from pathlib import Path

from detpipe.cli import dispatch
from detpipe.model import read_manifest, read_predictions

with tempfile.TemporaryDirectory() as tmp:
    base = Path(tmp)
    data = base / "data"

    assert dispatch(["synth", "generate", "--out", str(data),
                     "--count", "30", "--seed", "4"]) == 0
    manifest = str(data / "manifest.tsv")
    records = read_manifest(manifest)
    print(f"generated {len(records)} scenes under {data}")

    processed = base / "proc.png"
    assert dispatch(["preproc", "--input", records[0].path,
                     "--output", str(processed)]) == 0
    print(f"preprocessed {records[0].image_id} -> {processed.name}")

    cfg = base / "cfg.json"
    cfg.write_text(json.dumps({"mock_detector": {
        "center_jitter_sigma": 0.008, "miss_rate": 0.15}}))
    pred_files = []
    for seed in (1, 2, 3):
        out = base / f"preds_{seed}.jsonl"
        assert dispatch(["synth", "mock-detect", "--manifest", manifest,
                         "--out", str(out), "--seed", str(seed),
                         "--config", str(cfg)]) == 0
        pred_files.append(str(out))
    print("ran 3 mock detector members")

    fused = base / "fused.jsonl"
    assert dispatch(["fuse", "--predictions", *pred_files,
                     "--out", str(fused)]) == 0
    n = sum(len(v) for v in read_predictions(fused).values())
    print(f"fused into {n} detections")

    print()
    assert dispatch(["eval", "--predictions", str(fused),
                     "--manifest", manifest]) == 0
