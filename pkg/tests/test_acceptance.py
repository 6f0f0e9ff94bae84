"""Acceptance gate: one test per release criterion.

Each test prints a single PASS/FAIL line with the measured values and then
asserts the criterion. Run with `pytest -s` to see the lines live.
"""

import itertools
import json
import sys
import time

import numpy as np

from detpipe import divergence as dv
from detpipe.cli import dispatch
from detpipe.evaluation import average_precision, evaluate
from detpipe.fusion import (Cluster, FusionConfig, ModelOutput, fuse_cluster,
                            fuse_image)
from detpipe.model import (Annotation, BoundingBox, DatasetPartition,
                           Detection, iou, read_manifest)
from detpipe.ssda import DetectorAdapter, SsdaConfig, run_ssda
from detpipe.synth import (MockDetectorSpec, SceneSpec, generate_dataset,
                           make_ensemble, write_dataset)

PY = sys.executable


def _emit(name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  {name}  [{detail}]"
    print(line, flush=True)
    assert ok, line


def _random_pair(rng):
    return (dv.CoordinateGaussian(rng.uniform(-2, 2), rng.uniform(0.01, 1)),
            dv.CoordinateGaussian(rng.uniform(-2, 2), rng.uniform(0.01, 1)))


def test_criterion_1_divergence_suite():
    started = time.monotonic()
    rng = np.random.default_rng(101)
    cfg = dv.QuadratureConfig()

    sym_err = bound_err = 0.0
    for _ in range(1000):
        p, q = _random_pair(rng)
        a, b = dv.jsd(p, q, cfg), dv.jsd(q, p, cfg)
        sym_err = max(sym_err, abs(a - b))
        bound_err = max(bound_err, -a, a - (dv.LN2 + 1e-9))

    quad_err = 0.0
    for _ in range(100):
        p, q = _random_pair(rng)
        quad_err = max(quad_err,
                       abs(dv.kl_closed(p, q) - dv.kl_quadrature(p, q, cfg)))

    ref_err = abs(dv.kl_closed(dv.CoordinateGaussian(0, 1),
                               dv.CoordinateGaussian(1, 1)) - 0.5)
    elapsed = time.monotonic() - started

    ok = (sym_err == 0.0 and bound_err <= 0.0 and quad_err < 1e-6
          and ref_err < 1e-9 and elapsed < 10.0)
    _emit("criterion 1: divergence suite", ok,
          f"sym={sym_err:.1e} quad={quad_err:.1e} ref={ref_err:.1e} "
          f"t={elapsed:.1f}s")


def test_criterion_2_gradients_and_fit():
    started = time.monotonic()
    rng = np.random.default_rng(5)

    grad_err = 0.0
    for _ in range(100):
        p, q = _random_pair(rng)
        analytic = dv.kl_closed_grad_mu_p(p, q)
        h = max(1e-6, 1e-4 * abs(p.mu))
        numeric = (dv.kl_closed(dv.CoordinateGaussian(p.mu + h, p.sigma), q)
                   - dv.kl_closed(dv.CoordinateGaussian(p.mu - h, p.sigma),
                                  q)) / (2 * h)
        grad_err = max(grad_err,
                       abs(numeric - analytic) / max(abs(analytic), 1e-8))

    fit_cfg = dv.FitConfig(learning_rate=2e-4, max_steps=5000,
                           tolerance=1e-8,
                           quadrature=dv.QuadratureConfig(nodes=513))
    rule = dv.SigmaRule(0.1)
    fit_err, max_steps = 0.0, 0
    for _ in range(20):
        w, h = rng.uniform(0.15, 0.35, size=2)
        if abs(w - h) < 0.02:  # keep sigma = k*max(w, h) away from its kink
            h = w + 0.05
        cx = rng.uniform(w / 2, 1 - w / 2)
        cy = rng.uniform(h / 2, 1 - h / 2)
        gt = dv.gaussianize(BoundingBox(cx, cy, w, h), rule)
        init = (cx + rng.uniform(-0.02, 0.02),
                cy + rng.uniform(-0.02, 0.02),
                w + rng.uniform(-0.02, 0.02),
                h + rng.uniform(-0.02, 0.02), rule.k)
        for kind in ("kld", "jsd"):
            result = dv.fit_box(init, gt, kind, fit_cfg)
            got = result.theta_star
            fit_err = max(fit_err, abs(got[0] - cx), abs(got[1] - cy),
                          abs(got[2] - w), abs(got[3] - h))
            max_steps = max(max_steps, result.steps_used)
    elapsed = time.monotonic() - started

    ok = (grad_err < 1e-4 and fit_err < 1e-3 and max_steps <= 5000
          and elapsed < 60.0)
    _emit("criterion 2: gradient checks and box fitting", ok,
          f"grad={grad_err:.1e} fit={fit_err:.1e} steps<={max_steps} "
          f"t={elapsed:.1f}s")


def test_criterion_3_focal_loss():
    ce_err = max(abs(dv.focal_loss(pt, dv.FocalParams(alpha=1.0, gamma=0.0))
                     + np.log(pt))
                 for pt in np.linspace(0.05, 1.0, 20))
    spot_err = abs(dv.focal_loss(0.9, dv.FocalParams(alpha=0.25, gamma=2.0))
                   - 2.634e-4)
    ok = ce_err < 1e-12 and spot_err < 1e-7
    _emit("criterion 3: focal loss", ok,
          f"ce={ce_err:.1e} spot={spot_err:.1e}")


def _random_ensemble(rng, n_objects=4):
    objects = []
    for _ in range(n_objects):
        w, h = rng.uniform(0.1, 0.3, size=2)
        objects.append((rng.uniform(w / 2, 1 - w / 2),
                        rng.uniform(h / 2, 1 - h / 2), w, h,
                        int(rng.integers(0, 3))))
    outputs = []
    for model_id, grid in (("m32", 32), ("m16", 16), ("m8", 8)):
        dets = []
        for cx, cy, w, h, cls in objects:
            if rng.uniform() < 0.15:
                continue
            jx, jy = rng.normal(0, 0.01, size=2)
            dets.append(Detection(cls, float(rng.uniform(0.4, 0.99)),
                                  BoundingBox(
                                      min(max(cx + jx, w / 2), 1 - w / 2),
                                      min(max(cy + jy, h / 2), 1 - h / 2),
                                      w, h)))
        outputs.append(ModelOutput(model_id, grid, tuple(dets)))
    return outputs


def test_criterion_4_fusion():
    rng = np.random.default_rng(104)
    invariant = True
    for _ in range(500):
        outputs = _random_ensemble(rng)
        baseline = set(fuse_image(outputs))
        for perm in itertools.permutations(outputs):
            if set(fuse_image(list(perm))) != baseline:
                invariant = False

    d = Detection(0, 0.8, BoundingBox(0.5, 0.5, 0.2, 0.2))
    triple = [ModelOutput(m, g, (d,))
              for m, g in (("a", 32), ("b", 16), ("c", 8))]
    fixed_point = fuse_image(triple) == [d]

    hand = fuse_cluster(Cluster([
        ("a", Detection(0, 0.9, BoundingBox(0.5, 0.5, 0.2, 0.2))),
        ("b", Detection(0, 0.9, BoundingBox(0.52, 0.5, 0.2, 0.2))),
        ("c", Detection(0, 0.9, BoundingBox(0.48, 0.5, 0.18, 0.22))),
    ]))
    hand_err = max(abs(hand.box.cx - 0.5), abs(hand.box.cy - 0.5),
                   abs(hand.box.w - 0.193333), abs(hand.box.h - 0.206667))
    hand_ok = hand_err < 1e-6 and hand.class_id == 0

    ok = invariant and fixed_point and hand_ok
    _emit("criterion 4: fusion invariances", ok,
          f"perm={invariant} fixed={fixed_point} hand={hand_err:.1e}")


def _ap_oracle(class_id, dets, gts, threshold):
    """Brute-force AP: enumerate all one-to-one matchings, take the one the
    confidence-greedy rule selects, then sum matched confidences over the
    class ground-truth count."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))
    candidates = [[gi for gi, g in enumerate(gts)
                   if g.class_id == dets[di].class_id
                   and iou(dets[di].box, g.box) >= threshold] + [None]
                  for di in order]
    best_score, best = None, None
    for assign in itertools.product(*candidates):
        used = [g for g in assign if g is not None]
        if len(used) != len(set(used)):
            continue
        score = tuple(-1.0 if g is None
                      else iou(dets[di].box, gts[g].box)
                      for di, g in zip(order, assign))
        if best_score is None or score > best_score:
            best_score, best = score, assign
    total = sum(1 for g in gts if g.class_id == class_id)
    if total == 0:
        return None
    conf = sum(dets[di].confidence for di, g in zip(order, best)
               if g is not None and dets[di].class_id == class_id)
    return conf / total


def test_criterion_5_evaluation_oracle_and_monotonicity():
    rng = np.random.default_rng(105)
    oracle_err = 0.0
    for _ in range(200):
        gts, dets = [], []
        for _ in range(int(rng.integers(1, 6))):
            w, h = rng.uniform(0.1, 0.3, size=2)
            gts.append(Annotation(int(rng.integers(0, 2)),
                                  BoundingBox(rng.uniform(w / 2, 1 - w / 2),
                                              rng.uniform(h / 2, 1 - h / 2),
                                              w, h)))
        for _ in range(int(rng.integers(0, 6))):
            if rng.uniform() < 0.7:
                base = gts[int(rng.integers(0, len(gts)))]
                b = base.box
                jx, jy = rng.normal(0, 0.05, size=2)
                box = BoundingBox(min(max(b.cx + jx, b.w / 2), 1 - b.w / 2),
                                  min(max(b.cy + jy, b.h / 2), 1 - b.h / 2),
                                  b.w, b.h)
                dets.append(Detection(base.class_id,
                                      float(rng.uniform(0.1, 1.0)), box))
            else:
                w, h = rng.uniform(0.1, 0.3, size=2)
                dets.append(Detection(int(rng.integers(0, 2)),
                                      float(rng.uniform(0.1, 1.0)),
                                      BoundingBox(
                                          rng.uniform(w / 2, 1 - w / 2),
                                          rng.uniform(h / 2, 1 - h / 2),
                                          w, h)))
        for cid in {g.class_id for g in gts}:
            expected = _ap_oracle(cid, dets, gts, 0.5)
            got = average_precision(cid, {"i": dets}, {"i": gts}, 0.5)
            oracle_err = max(oracle_err, abs(got - expected))

    # threshold monotonicity on fresh synthetic ensemble runs
    monotone = True
    specs = tuple(
        MockDetectorSpec(model_id=m, grid_size=g, seed=s,
                         center_jitter_sigma=0.01, miss_rate=0.1)
        for m, g, s in (("m32", 32, 1), ("m16", 16, 2), ("m8", 8, 3)))
    for seed in (1, 2, 3):
        dataset = generate_dataset(SceneSpec(seed=seed), 40)
        gts = {r.image_id: list(r.annotations) for r, _ in dataset}
        preds = {r.image_id: fuse_image(make_ensemble(r, specs))
                 for r, _ in dataset}
        maps = [evaluate(preds, gts, t).map_value for t in (0.5, 0.75, 0.9)]
        if not (maps[2] <= maps[1] + 1e-12 and maps[1] <= maps[0] + 1e-12):
            monotone = False

    ok = oracle_err < 1e-12 and monotone
    _emit("criterion 5: evaluation oracle + threshold monotonicity", ok,
          f"oracle={oracle_err:.1e} monotone={monotone}")


def test_criterion_6_ensemble_superiority():
    started = time.monotonic()
    specs = tuple(
        MockDetectorSpec(model_id=m, grid_size=g, seed=s,
                         center_jitter_sigma=0.012, size_jitter_sigma=0.012,
                         miss_rate=0.25, small_miss_rate=sm,
                         false_positive_rate=0.5, confidence_mean=0.7,
                         confidence_sigma=0.12, class_error_rate=0.08)
        for m, g, s, sm in (("m32", 32, 101, 0.35), ("m16", 16, 202, 0.3),
                            ("m8", 8, 303, 0.15)))
    dataset = generate_dataset(SceneSpec(seed=42), 200)
    gts = {r.image_id: list(r.annotations) for r, _ in dataset}
    member_preds = {s.model_id: {} for s in specs}
    fused_preds = {}
    for record, _ in dataset:
        outputs = make_ensemble(record, specs)
        for out in outputs:
            member_preds[out.model_id][record.image_id] = \
                list(out.detections)
        fused_preds[record.image_id] = fuse_image(outputs, FusionConfig())
    member_maps = [evaluate(p, gts, 0.5).map_value
                   for p in member_preds.values()]
    fused_map = evaluate(fused_preds, gts, 0.5).map_value
    elapsed = time.monotonic() - started

    best, mean = max(member_maps), sum(member_maps) / len(member_maps)
    ok = fused_map >= best - 0.01 and fused_map > mean and elapsed < 120.0
    _emit("criterion 6: ensemble superiority trend", ok,
          f"fused={fused_map:.3f} best={best:.3f} mean={mean:.3f} "
          f"t={elapsed:.1f}s")


def _ssda_run(base, confidences, default=None, tau=0.5):
    data = base / "data"
    data.mkdir(parents=True, exist_ok=True)
    dataset = generate_dataset(SceneSpec(seed=77), 4)
    manifest = write_dataset(dataset, data)
    records = {r.image_id: r for r in read_manifest(manifest)}
    ids = sorted(records)
    script = base / "script.json"
    script.write_text(json.dumps({
        "default": default,
        "images": dict(zip(ids[1:], confidences))}), encoding="utf-8")
    adapter = DetectorAdapter(
        f"{PY} -m detpipe mock-adapter train --train-list {{train_list}} "
        "--model-out {model_out}",
        f"{PY} -m detpipe mock-adapter infer --model-in {{model_in}} "
        "--image-list {image_list} --predictions-out {predictions_out} "
        f"--script {script}")
    partition = DatasetPartition.of(ids[:1], ids[1:])
    cfg = SsdaConfig(adapter, str(base / "work"), 4, tau)
    return ids, run_ssda(partition, records, cfg)


def test_criterion_7_ssda(tmp_path):
    ids, result = _ssda_run(tmp_path / "a", [0.9, 0.6, 0.2])
    scripted_ok = (result.final_train == frozenset(ids[:3])
                   and result.final_test == frozenset({ids[3]}))
    invariants_ok = all(
        log.train_size + log.test_size == len(ids)
        for log in result.logs)

    ids, result = _ssda_run(tmp_path / "b", [], default=0.9)
    all_ok = (result.final_test == frozenset() and len(result.logs) == 1)

    ids, result = _ssda_run(tmp_path / "c", [], default=0.1)
    none_ok = (result.final_train == frozenset(ids[:1])
               and result.final_test == frozenset(ids[1:]))

    # determinism: identical reruns on the same dataset are byte-identical
    base = tmp_path / "d"
    blobs = []
    for attempt in ("w1", "w2"):
        data = base / "data"
        data.mkdir(parents=True, exist_ok=True)
        dataset = generate_dataset(SceneSpec(seed=77), 4)
        manifest = write_dataset(dataset, data)
        records = {r.image_id: r for r in read_manifest(manifest)}
        ids = sorted(records)
        script = base / "script.json"
        script.write_text(json.dumps({"default": None, "images": dict(
            zip(ids[1:], [0.9, 0.6, 0.2]))}), encoding="utf-8")
        adapter = DetectorAdapter(
            f"{PY} -m detpipe mock-adapter train "
            "--train-list {train_list} --model-out {model_out}",
            f"{PY} -m detpipe mock-adapter infer --model-in {{model_in}} "
            "--image-list {image_list} "
            "--predictions-out {predictions_out} "
            f"--script {script}")
        work = base / attempt
        run_ssda(DatasetPartition.of(ids[:1], ids[1:]), records,
                 SsdaConfig(adapter, str(work), 4, 0.5))
        blobs.append({str(p.relative_to(work)): p.read_bytes()
                      for p in sorted(work.rglob("*")) if p.is_file()})
    deterministic = blobs[0] == blobs[1]

    ok = scripted_ok and invariants_ok and all_ok and none_ok and \
        deterministic
    _emit("criterion 7: pseudo-label annotation loop", ok,
          f"scripted={scripted_ok} all={all_ok} none={none_ok} "
          f"deterministic={deterministic}")


def test_criterion_8_end_to_end_smoke(tmp_path):
    started = time.monotonic()
    data = tmp_path / "data"
    ok = dispatch(["synth", "generate", "--out", str(data),
                   "--count", "50", "--seed", "8"]) == 0
    manifest = str(data / "manifest.tsv")
    records = read_manifest(manifest)
    ok &= len(records) == 50

    ok &= dispatch(["preproc", "--input", records[0].path,
                    "--output", str(tmp_path / "proc.png")]) == 0

    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"mock_detector": {
        "center_jitter_sigma": 0.008, "miss_rate": 0.15}}))
    pred_files = []
    for seed in (1, 2, 3):
        out = tmp_path / f"preds_{seed}.jsonl"
        ok &= dispatch(["synth", "mock-detect", "--manifest", manifest,
                        "--out", str(out), "--seed", str(seed),
                        "--config", str(cfg)]) == 0
        pred_files.append(str(out))

    fused = tmp_path / "fused.jsonl"
    ok &= dispatch(["fuse", "--predictions", *pred_files,
                    "--out", str(fused)]) == 0

    report = tmp_path / "report.txt"
    machine = tmp_path / "report.jsonl"
    ok &= dispatch(["eval", "--predictions", str(fused),
                    "--manifest", manifest, "--report", str(report),
                    "--machine", str(machine)]) == 0
    text = report.read_text()
    rows = [json.loads(l) for l in machine.read_text().splitlines()]
    maps = {r["threshold"]: r["map"] for r in rows if "map" in r}
    ok &= "mAP" in text and set(maps) == {0.5, 0.75, 0.9}
    ok &= all(0.0 <= v <= 1.0 for v in maps.values())
    elapsed = time.monotonic() - started
    ok = bool(ok) and elapsed < 60.0
    _emit("criterion 8: end-to-end smoke", ok,
          f"map@0.5={maps.get(0.5)} t={elapsed:.1f}s")
