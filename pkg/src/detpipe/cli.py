"""Command-line entry point.

Subcommands: synth [generate | mock-detect], preproc, fuse, eval, ssda,
loss-check, fit-demo, mock-adapter [train | infer].

Exit codes: 0 success, 1 validation/config error, 2 runtime or adapter
failure. Diagnostics go to stderr, results to stdout or the named files.

The config file is JSON with one object per section (synth, mock_detector,
fusion, preproc, quadrature, fit, ssda, eval); unknown sections or keys are
rejected by name. An empty file or empty object means all defaults.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import divergence as dv
from . import evaluation
from . import fusion as fusion_mod
from . import preproc as preproc_mod
from . import ssda as ssda_mod
from . import synth as synth_mod
from .errors import ConfigError, DetPipeError, ValidationError
from .model import (Annotation, BoundingBox, DatasetPartition, Detection,
                    read_manifest, read_predictions, write_predictions)


@dataclass(frozen=True)
class SsdaSettings:
    max_rounds: int = 4
    confidence_threshold: float = 0.5
    promotion_rule: str = "max"
    train_command: str = ""
    infer_command: str = ""
    timeout_seconds: float = 600.0

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
class EvalSettings:
    thresholds: tuple[float, ...] = evaluation.DEFAULT_THRESHOLDS
    matched_only: bool = True

    def __post_init__(self):
        if not self.thresholds or any(not 0.0 < t < 1.0
                                      for t in self.thresholds):
            raise ValidationError(
                f"thresholds must be in (0, 1), got {self.thresholds}")


@dataclass(frozen=True)
class ToolConfig:
    synth: synth_mod.SceneSpec = field(default_factory=synth_mod.SceneSpec)
    mock_detector: synth_mod.MockDetectorSpec = field(
        default_factory=synth_mod.MockDetectorSpec)
    fusion: fusion_mod.FusionConfig = field(
        default_factory=fusion_mod.FusionConfig)
    preproc: preproc_mod.PreprocConfig = field(
        default_factory=preproc_mod.PreprocConfig)
    quadrature: dv.QuadratureConfig = field(
        default_factory=dv.QuadratureConfig)
    fit: dv.FitConfig = field(default_factory=dv.FitConfig)
    ssda: SsdaSettings = field(default_factory=SsdaSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)


def _build_section(section: str, cls, values: dict):
    allowed = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in values.items():
        if key not in allowed:
            raise ConfigError(f"unknown key {section}.{key}")
        default = allowed[key].default
        if isinstance(value, list):
            value = tuple(value)
        if isinstance(default, bool) != isinstance(value, bool) and (
                isinstance(default, bool) or isinstance(value, bool)):
            raise ConfigError(f"type mismatch for {section}.{key}")
        kwargs[key] = value
    if section == "fit" and "quadrature" in kwargs:
        q = kwargs["quadrature"]
        if isinstance(q, dict):
            kwargs["quadrature"] = _build_section(
                "fit.quadrature", dv.QuadratureConfig, q)
        else:  # [half_width, nodes] shorthand
            kwargs["quadrature"] = dv.QuadratureConfig(*q)
    try:
        return cls(**kwargs)
    except (ValidationError, TypeError) as exc:
        # invariant messages name the offending field; prefix the section
        bad = next((k for k in kwargs if k in str(exc)), None)
        where = f"{section}.{bad}" if bad else section
        raise ConfigError(f"invalid value for {where}: {exc}") from exc


def load_config(path=None) -> ToolConfig:
    """Load a sectioned JSON config; absent file or sections mean defaults."""
    if path is None:
        return ToolConfig()
    text = Path(path).read_text(encoding="utf-8").strip()
    raw = json.loads(text) if text else {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    known = {f.name: f.default_factory for f in fields(ToolConfig)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"unknown section(s): {sorted(unknown)}")
    sections = {}
    for name, factory in known.items():
        values = raw.get(name, {})
        if not isinstance(values, dict):
            raise ConfigError(f"section {name} must be a JSON object")
        sections[name] = _build_section(name, factory, values)
    return ToolConfig(**sections)


def serialize_config(cfg: ToolConfig) -> str:
    def plain(obj):
        if dataclasses.is_dataclass(obj):
            return {k: plain(v)
                    for k, v in dataclasses.asdict(obj).items()}
        if isinstance(obj, tuple):
            return list(obj)
        return obj
    return json.dumps(plain(cfg), indent=2)


# ---------------------------------------------------------------------------
# Subcommand implementations
# ---------------------------------------------------------------------------

def _cmd_synth_generate(args) -> int:
    cfg = load_config(args.config)
    spec = dataclasses.replace(cfg.synth, seed=args.seed)
    dataset = synth_mod.generate_dataset(spec, args.count)
    manifest = synth_mod.write_dataset(dataset, args.out)
    print(manifest)
    return 0


def _cmd_synth_mock_detect(args) -> int:
    cfg = load_config(args.config)
    spec = cfg.mock_detector
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    records = read_manifest(args.manifest)
    predictions = {r.image_id: synth_mod.mock_detect(r, spec) for r in records}
    write_predictions(predictions, args.out)
    return 0


def _cmd_preproc(args) -> int:
    cfg = load_config(args.config).preproc
    img = preproc_mod.load_png(args.input)
    out = preproc_mod.gaussian_smooth(img, cfg.smooth_kernel, cfg.smooth_sigma)
    out = preproc_mod.hist_equalize(out)
    out = preproc_mod.resize(out, cfg.target_size)
    preproc_mod.save_png(out, args.output)
    return 0


def _cmd_fuse(args) -> int:
    cfg = load_config(args.config).fusion
    if len(args.predictions) != len(args.model_ids) or \
            len(args.predictions) != len(args.grid_sizes):
        raise ValidationError("--predictions, --model-ids and --grid-sizes "
                              "must have matching lengths")
    per_model = [read_predictions(p) for p in args.predictions]
    image_ids = sorted(set().union(*per_model))
    fused = {}
    for image_id in image_ids:
        outputs = [
            fusion_mod.ModelOutput(mid, grid, tuple(preds.get(image_id, [])))
            for mid, grid, preds in zip(args.model_ids, args.grid_sizes,
                                        per_model)
        ]
        fused[image_id] = fusion_mod.fuse_image(outputs, cfg)
    write_predictions(fused, args.out)
    return 0


def _cmd_eval(args) -> int:
    cfg = load_config(args.config).eval
    predictions = read_predictions(args.predictions)
    records = read_manifest(args.manifest)
    ground_truth = {r.image_id: list(r.annotations) for r in records}
    reports = evaluation.threshold_sweep(predictions, ground_truth,
                                         cfg.thresholds, cfg.matched_only)
    table = evaluation.format_report(reports)
    if args.report:
        Path(args.report).write_text(table, encoding="utf-8")
    else:
        print(table)
    if args.machine:
        with open(args.machine, "w", encoding="utf-8", newline="\n") as fh:
            for rep in reports:
                for cid in sorted(rep.per_class_ap):
                    fh.write(json.dumps({
                        "threshold": rep.threshold, "class_id": cid,
                        "ap": round(rep.per_class_ap[cid], 6),
                        "instances": rep.instance_counts[cid]}) + "\n")
            for rep in reports:
                fh.write(json.dumps({"threshold": rep.threshold,
                                     "map": round(rep.map_value, 6)}) + "\n")
    return 0


def _cmd_ssda(args) -> int:
    cfg = load_config(args.config)
    settings = cfg.ssda
    if args.max_rounds is not None:
        settings = dataclasses.replace(settings, max_rounds=args.max_rounds)
    if args.tau is not None:
        settings = dataclasses.replace(settings,
                                       confidence_threshold=args.tau)
    if not settings.train_command or not settings.infer_command:
        raise ConfigError("ssda.train_command and ssda.infer_command must "
                          "be set in the config file")
    adapter = ssda_mod.DetectorAdapter(settings.train_command,
                                   settings.infer_command,
                                   settings.timeout_seconds)
    train_records = read_manifest(args.train_manifest)
    test_records = read_manifest(args.test_manifest)
    records = {r.image_id: r for r in train_records + test_records}
    partition = DatasetPartition.of((r.image_id for r in train_records),
                                    (r.image_id for r in test_records))
    run_cfg = ssda_mod.SsdaConfig(adapter, args.workdir, settings.max_rounds,
                              settings.confidence_threshold,
                              settings.promotion_rule)
    result = ssda_mod.run_ssda(partition, records, run_cfg)
    ssda_mod.export_residuals(result, records,
                          Path(args.workdir) / "residuals.tsv")
    for log in result.logs:
        print(f"round {log.round}: promoted {log.promoted}, "
              f"train {log.train_size}, test {log.test_size}")
    print(f"residuals: {len(result.final_test)}")
    return 0


def _cmd_mock_adapter_train(args) -> int:
    records = read_manifest(args.train_list)
    with open(args.model_out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"mock-model trained_on={len(records)}\n")
        for r in records:
            fh.write(r.image_id + "\n")
    return 0


def _cmd_mock_adapter_infer(args) -> int:
    records = read_manifest(args.image_list)
    script = {"default": None, "images": {}}
    if args.script:
        script.update(json.loads(Path(args.script).read_text("utf-8")))
    predictions = {}
    for r in records:
        conf = script["images"].get(r.image_id, script["default"])
        if conf is None:
            predictions[r.image_id] = []
        else:
            predictions[r.image_id] = [
                Detection(a.class_id, float(conf), a.box)
                for a in r.annotations]
    write_predictions(predictions, args.predictions_out)
    return 0


def _check(name: str, ok: bool, measured: float) -> bool:
    print(f"{'PASS' if ok else 'FAIL'}  {name:<44} error={measured:.3e}")
    return ok


def _cmd_loss_check(args) -> int:
    rng = np.random.default_rng(7)
    cfg = dv.QuadratureConfig()
    all_ok = True

    pairs = [(dv.CoordinateGaussian(rng.uniform(-2, 2),
                                    rng.uniform(0.01, 1.0)),
              dv.CoordinateGaussian(rng.uniform(-2, 2),
                                    rng.uniform(0.01, 1.0)))
             for _ in range(100)]
    err = max(abs(dv.jsd(p, q, cfg) - dv.jsd(q, p, cfg)) for p, q in pairs)
    all_ok &= _check("jsd symmetry", err == 0.0, err)

    vals = [dv.jsd(p, q, cfg) for p, q in pairs]
    err = max(max(0.0 - v, v - (dv.LN2 + 1e-9)) for v in vals)
    all_ok &= _check("jsd bounds [0, ln2]", err <= 0.0, max(err, 0.0))

    err = max(abs(dv.kl_closed(p, q) - dv.kl_quadrature(p, q, cfg))
              for p, q in pairs)
    all_ok &= _check("kl closed vs quadrature", err < 1e-6, err)

    ref = dv.kl_closed(dv.CoordinateGaussian(0, 1),
                       dv.CoordinateGaussian(1, 1))
    err = abs(ref - 0.5)
    all_ok &= _check("KL(N(0,1)||N(1,1)) = 0.5", err < 1e-9, err)

    err = 0.0
    for p, q in pairs[:100]:
        analytic = dv.kl_closed_grad_mu_p(p, q)
        h = max(1e-6, 1e-4 * abs(p.mu))
        num = (dv.kl_closed(dv.CoordinateGaussian(p.mu + h, p.sigma), q)
               - dv.kl_closed(dv.CoordinateGaussian(p.mu - h, p.sigma), q)
               ) / (2 * h)
        scale = max(abs(analytic), 1e-8)
        err = max(err, abs(num - analytic) / scale)
    all_ok &= _check("kl gradient finite-diff vs analytic", err < 1e-4, err)

    err = max(abs(dv.focal_loss(pt, dv.FocalParams(1.0, 0.0))
                  - (-math.log(pt))) for pt in np.arange(0.1, 1.0, 0.1))
    all_ok &= _check("focal gamma=0 is cross-entropy", err < 1e-12, err)

    err = abs(dv.focal_loss(0.9, dv.FocalParams(0.25, 2.0)) - 2.634e-4)
    all_ok &= _check("focal spot value (0.9, g=2, a=0.25)", err < 1e-7, err)

    return 0 if all_ok else 1


def _cmd_fit_demo(args) -> int:
    gt_box = BoundingBox(0.5, 0.5, 0.2, 0.2)
    rule = dv.SigmaRule(0.25)
    gt = dv.gaussianize(gt_box, rule)
    init = (0.42, 0.56, 0.24, 0.17, rule.k)
    fit_cfg = dv.FitConfig(learning_rate=5e-3, max_steps=args.max_steps,
                           tolerance=1e-8,
                           quadrature=dv.QuadratureConfig(nodes=513))
    result = dv.fit_box(init, gt, args.kind, fit_cfg)
    print(f"{'step':>6} {'loss':>14}")
    for i, loss in enumerate(result.trace):
        if i % max(1, len(result.trace) // 25) == 0 or \
                i == len(result.trace) - 1:
            print(f"{i:>6} {loss:>14.8f}")
    mux, muy, muw, muh, k = result.theta_star
    print(f"fitted: cx={mux:.5f} cy={muy:.5f} w={muw:.5f} h={muh:.5f} "
          f"k={k:.5f}  (target cx=0.5 cy=0.5 w=0.2 h=0.2)")
    print(f"final loss {result.final_loss:.3e} after {result.steps_used} "
          f"steps")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="detpipe",
        description="Detection-pipeline toolkit: synthetic data, "
                    "preprocessing, ensemble fusion, evaluation, and "
                    "pseudo-label annotation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthetic scenes and mock detectors")
    ssub = p.add_subparsers(dest="mode")
    g = ssub.add_parser("generate", help="write images, labels, manifest")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=50)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--config")
    g.set_defaults(func=_cmd_synth_generate)
    m = ssub.add_parser("mock-detect", help="run a scripted mock detector")
    m.add_argument("--manifest", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--seed", type=int)
    m.add_argument("--config")
    m.set_defaults(func=_cmd_synth_mock_detect)

    p = sub.add_parser("preproc", help="smooth, equalize, resize a PNG")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--config")
    p.set_defaults(func=_cmd_preproc)

    p = sub.add_parser("fuse", help="fuse member prediction files")
    p.add_argument("--predictions", nargs="+", required=True)
    p.add_argument("--model-ids", nargs="+", default=["m32", "m16", "m8"])
    p.add_argument("--grid-sizes", nargs="+", type=int,
                   default=[32, 16, 8])
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=_cmd_fuse)

    p = sub.add_parser("eval", help="AP/mAP report over IoU thresholds")
    p.add_argument("--predictions", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--report", help="text table output (default stdout)")
    p.add_argument("--machine", help="machine-readable JSONL output")
    p.add_argument("--config")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ssda", help="pseudo-label annotation loop")
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--test-manifest", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--workdir", required=True)
    p.add_argument("--max-rounds", type=int)
    p.add_argument("--tau", type=float)
    p.set_defaults(func=_cmd_ssda)

    p = sub.add_parser("loss-check",
                       help="verify divergence and focal-loss properties")
    p.set_defaults(func=_cmd_loss_check)

    p = sub.add_parser("fit-demo",
                       help="gradient-descent trace on a box-fitting toy")
    p.add_argument("--kind", choices=("jsd", "kld"), default="jsd")
    p.add_argument("--max-steps", type=int, default=2000)
    p.set_defaults(func=_cmd_fit_demo)

    p = sub.add_parser("mock-adapter",
                       help="detector-process stand-in for the ssda loop")
    msub = p.add_subparsers(dest="mode", required=True)
    t = msub.add_parser("train")
    t.add_argument("--train-list", required=True)
    t.add_argument("--model-out", required=True)
    t.set_defaults(func=_cmd_mock_adapter_train)
    i = msub.add_parser("infer")
    i.add_argument("--model-in", required=True)
    i.add_argument("--image-list", required=True)
    i.add_argument("--predictions-out", required=True)
    i.add_argument("--script", help="JSON {default, images:{id: conf}}")
    i.set_defaults(func=_cmd_mock_adapter_infer)

    return parser


def dispatch(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command == "synth" and getattr(args, "mode", None) is None:
        parser.parse_args(["synth", "--help"])
        return 1
    try:
        return args.func(args)
    except (ValidationError, ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DetPipeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
