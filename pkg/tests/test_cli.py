import json
import sys

import pytest

from detpipe.cli import (ToolConfig, dispatch, load_config, main,
                         serialize_config)
from detpipe.errors import ConfigError
from detpipe.model import read_manifest, read_predictions

PY = sys.executable


class TestConfig:
    def test_none_means_defaults(self):
        assert load_config(None) == ToolConfig()

    def test_empty_file_means_defaults(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text("")
        assert load_config(p) == ToolConfig()
        p.write_text("{}")
        assert load_config(p) == ToolConfig()

    def test_round_trip(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(serialize_config(ToolConfig()))
        assert load_config(p) == ToolConfig()

    def test_section_overrides(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"fusion": {"match_iou": 0.4},
                                 "eval": {"thresholds": [0.5]}}))
        cfg = load_config(p)
        assert cfg.fusion.match_iou == 0.4
        assert cfg.eval.thresholds == (0.5,)
        assert cfg.preproc == ToolConfig().preproc

    def test_unknown_section_named(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"fusionn": {}}))
        with pytest.raises(ConfigError, match="fusionn"):
            load_config(p)

    def test_unknown_key_named(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"fusion": {"match_ioo": 0.4}}))
        with pytest.raises(ConfigError, match=r"fusion\.match_ioo"):
            load_config(p)

    def test_bad_value_names_section_and_key(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"ssda": {"confidence_threshold": 1.5}}))
        with pytest.raises(ConfigError,
                           match=r"ssda\.confidence_threshold"):
            load_config(p)


class TestDispatchErrors:
    def test_help_exits_zero(self, capsys):
        with pytest.raises(SystemExit) as e:
            dispatch(["--help"])
        assert e.value.code == 0
        assert "synth" in capsys.readouterr().out

    def test_missing_file_exit_one(self, tmp_path, capsys):
        missing = tmp_path / "nope.tsv"
        code = dispatch(["synth", "mock-detect",
                         "--manifest", str(missing),
                         "--out", str(tmp_path / "out.jsonl")])
        assert code == 1
        assert str(missing) in capsys.readouterr().err

    def test_config_error_exit_one(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"ssda": {"confidence_threshold": 1.5}}))
        code = dispatch(["ssda",
                         "--train-manifest", str(tmp_path / "a.tsv"),
                         "--test-manifest", str(tmp_path / "b.tsv"),
                         "--config", str(cfg),
                         "--workdir", str(tmp_path / "w")])
        assert code == 1
        assert "ssda.confidence_threshold" in capsys.readouterr().err

    def test_loss_check_passes(self, capsys):
        assert dispatch(["loss-check"]) == 0
        out = capsys.readouterr().out
        assert out.count("PASS") == 7 and "FAIL" not in out

    def test_fit_demo_prints_trace(self, capsys):
        assert dispatch(["fit-demo", "--kind", "kld",
                         "--max-steps", "200"]) == 0
        out = capsys.readouterr().out
        assert "step" in out and "fitted:" in out and "final loss" in out

    def test_main_exits_with_dispatch_code(self, capsys):
        with pytest.raises(SystemExit) as e:
            main()  # no argv: argparse fails with usage error
        assert e.value.code == 2


class TestPipelineSmoke:
    def test_synth_preproc_fuse_eval(self, tmp_path, capsys):
        data = tmp_path / "data"
        assert dispatch(["synth", "generate", "--out", str(data),
                         "--count", "6", "--seed", "3"]) == 0
        manifest = capsys.readouterr().out.strip()
        records = read_manifest(manifest)
        assert len(records) == 6

        # preprocess one image
        processed = tmp_path / "proc.png"
        assert dispatch(["preproc", "--input", records[0].path,
                         "--output", str(processed)]) == 0
        assert processed.exists()

        # three mock members with mild noise
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"mock_detector": {
            "center_jitter_sigma": 0.005, "miss_rate": 0.1}}))
        pred_files = []
        for seed in (1, 2, 3):
            out = tmp_path / f"preds_{seed}.jsonl"
            assert dispatch(["synth", "mock-detect",
                             "--manifest", manifest, "--out", str(out),
                             "--seed", str(seed),
                             "--config", str(cfg)]) == 0
            pred_files.append(str(out))

        fused = tmp_path / "fused.jsonl"
        assert dispatch(["fuse", "--predictions", *pred_files,
                         "--out", str(fused)]) == 0
        assert read_predictions(fused)

        report = tmp_path / "report.txt"
        machine = tmp_path / "report.jsonl"
        assert dispatch(["eval", "--predictions", str(fused),
                         "--manifest", manifest,
                         "--report", str(report),
                         "--machine", str(machine)]) == 0
        assert "mAP" in report.read_text()
        rows = [json.loads(l) for l in machine.read_text().splitlines()]
        maps = {r["threshold"]: r["map"] for r in rows if "map" in r}
        assert set(maps) == {0.5, 0.75, 0.9}
        assert all(0.0 <= v <= 1.0 for v in maps.values())

    def test_ssda_subcommand(self, tmp_path, capsys):
        data = tmp_path / "data"
        assert dispatch(["synth", "generate", "--out", str(data),
                         "--count", "4", "--seed", "9"]) == 0
        manifest = capsys.readouterr().out.strip()
        records = read_manifest(manifest)
        train_m = tmp_path / "train.tsv"
        test_m = tmp_path / "test.tsv"
        from detpipe.model import write_manifest
        write_manifest(records[:1], train_m)
        write_manifest(records[1:], test_m)

        script = tmp_path / "script.json"
        script.write_text(json.dumps({"default": 0.9, "images": {
            records[1].image_id: 0.2}}))
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"ssda": {
            "train_command": f"{PY} -m detpipe mock-adapter train "
                             "--train-list {train_list} "
                             "--model-out {model_out}",
            "infer_command": f"{PY} -m detpipe mock-adapter infer "
                             "--model-in {model_in} "
                             "--image-list {image_list} "
                             "--predictions-out {predictions_out} "
                             f"--script {script}"}}))
        work = tmp_path / "work"
        assert dispatch(["ssda", "--train-manifest", str(train_m),
                         "--test-manifest", str(test_m),
                         "--config", str(cfg), "--workdir", str(work),
                         "--tau", "0.5"]) == 0
        out = capsys.readouterr().out
        assert "round 1: promoted 2" in out
        assert "residuals: 1" in out
        residuals = read_manifest(work / "residuals.tsv")
        assert [r.image_id for r in residuals] == [records[1].image_id]

    def test_missing_ssda_commands_rejected(self, tmp_path, capsys):
        data = tmp_path / "data"
        assert dispatch(["synth", "generate", "--out", str(data),
                         "--count", "2", "--seed", "1"]) == 0
        manifest = capsys.readouterr().out.strip()
        code = dispatch(["ssda", "--train-manifest", manifest,
                         "--test-manifest", manifest,
                         "--config", str(tmp_path / "none.json"),
                         "--workdir", str(tmp_path / "w")])
        assert code == 1
