"""End-to-end command line tests on a tiny LCEI run."""

import json

import pytest
import yaml

from qr_cli import STAGES, RunLayout, build_parser, main, replay_manifest


def _run(stage, run_file, *extra):
    return main([stage, "--config", str(run_file), *extra])


def test_parser_knows_every_stage():
    parser = build_parser()
    for stage in STAGES:
        args = parser.parse_args([stage, "--seed", "3"])
        assert args.command == stage and args.seed == 3
    assert parser.parse_args(["train", "--resume"]).resume is True
    assert parser.parse_args(["replay", "m.json"]).manifest == "m.json"


@pytest.mark.slow
def test_full_pipeline_writes_manifests_and_replays(tiny_run_file, tmp_path):
    for stage in STAGES:
        assert _run(stage, tiny_run_file) == 0, stage

    layout = RunLayout(tmp_path / "run")
    for stage in STAGES:
        manifest = json.loads(layout.manifest(stage).read_text(encoding="utf-8"))
        assert manifest["kind"] == "qrobust-manifest"
        assert manifest["stage"] == stage
        assert manifest["seed"] == 11
        assert manifest["outputs"]

    attack = json.loads(layout.manifest("attack").read_text(encoding="utf-8"))
    assert "operation.attack_sweep" in attack["timings"]
    assert attack["counters"]["operation.gradient_samples.count"] == 1

    assert layout.train_cache.exists() and layout.adv_set.exists()
    assert layout.checkpoint("clean").exists() and layout.checkpoint("adversarial").exists()
    report = json.loads(layout.result("report.json").read_text(encoding="utf-8"))
    assert set(report["mean_score"]) == {"clean", "adversarial"}
    assert layout.result("robustness_summary.csv").exists()
    assert layout.result("readout.csv").exists()

    result = replay_manifest(layout.manifest("train"), str(tmp_path / "replay-train"))
    assert result.identical, (result.mismatched, result.missing)
    assert any(name.startswith("parameters:") for name in result.matched)

    assert main(["replay", str(layout.manifest("attack")), "--out", str(tmp_path / "replay-attack")]) == 0


def test_stage_without_inputs_fails(tiny_run_file, capsys):
    assert _run("attack", tiny_run_file) == 1
    assert "prepare" in capsys.readouterr().err


def test_invalid_run_file_fails(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"training": {"epoch": 3}, "output_dir": str(tmp_path / "out")}), encoding="utf-8")
    assert main(["prepare", "--config", str(bad)]) == 1
    assert "training.epoch" in capsys.readouterr().err


def test_prepare_prints_json_summary(tiny_run_file, tmp_path, capsys):
    assert _run("prepare", tiny_run_file, "--output-format", "json") == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["train"]["size"] == 16
    assert summary["num_features"] == 4
    assert RunLayout(tmp_path / "run").manifest("prepare").exists()


def test_prepare_is_reproducible(tiny_run_file, tmp_path):
    assert _run("prepare", tiny_run_file) == 0
    first = json.loads(RunLayout(tmp_path / "run").manifest("prepare").read_text(encoding="utf-8"))
    assert _run("prepare", tiny_run_file, "--out", str(tmp_path / "again")) == 0
    second = json.loads(RunLayout(tmp_path / "again").manifest("prepare").read_text(encoding="utf-8"))
    assert first["outputs"] == second["outputs"]
