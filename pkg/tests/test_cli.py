import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from phasekit.cli import main
from phasekit.datagen import load_manifest
from phasekit import tensorio


@pytest.fixture()
def runner():
    return CliRunner()


def run(runner, args):
    return runner.invoke(main, args, catch_exceptions=False)


def simulate_small(runner, out, count=8, extra=()):
    args = [
        "simulate", "--corpus", "synthetic:sparse", "--count", str(count),
        "--distance-mm", "20", "--grid", "32", "--seed", "1", "--out", str(out),
    ] + list(extra)
    return run(runner, args)


@pytest.fixture(scope="module")
def cli_world(tmp_path_factory):
    """One simulated dataset + one trained checkpoint shared by CLI tests."""
    runner = CliRunner()
    root = tmp_path_factory.mktemp("cliworld")
    r = simulate_small(runner, root / "data", count=8)
    assert r.exit_code == 0, r.output
    r = run(runner, [
        "train", "--strategy", "tpd", "--dataset", str(root / "data"),
        "--epochs", "2", "--depth", "2", "--base-width", "8",
        "--out", str(root / "tpd"),
    ])
    assert r.exit_code == 0, r.output
    return root


class TestSimulate:
    def test_contract_example(self, runner, tmp_path):
        out = tmp_path / "d"
        result = simulate_small(runner, out, count=8)
        assert result.exit_code == 0
        manifest = load_manifest(out)
        assert manifest.count == 8
        assert (out / "run_config.json").exists()

    def test_nonempty_out_needs_force(self, runner, tmp_path):
        out = tmp_path / "d"
        assert simulate_small(runner, out, count=2).exit_code == 0
        blocked = simulate_small(runner, out, count=2)
        assert blocked.exit_code == 2
        forced = simulate_small(runner, out, count=2, extra=["--force"])
        assert forced.exit_code == 0

    def test_unknown_flag_fails(self, runner, tmp_path):
        result = runner.invoke(main, ["simulate", "--frobnicate", "1"])
        assert result.exit_code != 0

    def test_rerun_reproduces_dataset(self, runner, tmp_path):
        out1 = tmp_path / "a"
        assert simulate_small(runner, out1, count=3).exit_code == 0
        out2 = tmp_path / "b"
        result = run(runner, ["rerun", str(out1 / "run_config.json"), "--out", str(out2)])
        assert result.exit_code == 0
        m1, m2 = load_manifest(out1), load_manifest(out2)
        assert m1.count == m2.count
        h1 = tensorio.read_tensor(out1 / "records/000000/holo_0.02.prt")
        h2 = tensorio.read_tensor(out2 / "records/000000/holo_0.02.prt")
        assert np.array_equal(h1, h2)


class TestTrain:
    def test_missing_gt_fails_fast_with_message(self, runner, tmp_path):
        data = tmp_path / "nogt"
        assert simulate_small(runner, data, count=4, extra=["--no-gt"]).exit_code == 0
        result = run(runner, [
            "train", "--strategy", "dd", "--dataset", str(data),
            "--epochs", "1", "--depth", "2", "--base-width", "8",
            "--out", str(tmp_path / "run"),
        ])
        assert result.exit_code == 2
        assert "ground-truth" in result.output or "ground-truth" in (result.stderr or "")

    def test_missing_dataset_is_io_error(self, runner, tmp_path):
        result = run(runner, [
            "train", "--strategy", "dd", "--dataset", str(tmp_path / "nope"),
            "--out", str(tmp_path / "run"),
        ])
        assert result.exit_code == 3

    def test_writes_checkpoint_and_report(self, cli_world):
        assert (cli_world / "tpd" / "weights.ckpt").exists()
        report = json.loads((cli_world / "tpd" / "train_report.json").read_text())
        assert report["kind"] == "tpd"
        assert len(report["traces"]["total"]) == 2
        assert (cli_world / "tpd" / "trace_total.prt").exists()


class TestInfer:
    def test_trained_inference_outputs(self, runner, cli_world, tmp_path):
        out = tmp_path / "recon"
        result = run(runner, [
            "infer", "--weights", str(cli_world / "tpd" / "weights.ckpt"),
            "--dataset", str(cli_world / "data"), "--record", "0",
            "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        payload = json.loads((out / "inference.json").read_text())
        rec = payload["000000"]
        assert "metrics" in rec and "ssim" in rec["metrics"]
        assert Path(rec["outputs"]["phase"]).exists()

    def test_upd_zero_cycles_contract(self, runner, cli_world, tmp_path):
        out = tmp_path / "upd0"
        result = run(runner, [
            "infer", "--strategy", "upd", "--cycles", "0",
            "--dataset", str(cli_world / "data"), "--record", "0",
            "--depth", "2", "--base-width", "8",
            "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        payload = json.loads((out / "inference.json").read_text())
        assert payload["000000"]["trace_length"] == 0
        assert Path(payload["000000"]["outputs"]["phase"]).exists()

    def test_incompatible_optics_rejected(self, runner, cli_world, tmp_path):
        other = tmp_path / "otherdata"
        r = run(runner, [
            "simulate", "--corpus", "synthetic:sparse", "--count", "2",
            "--distance-mm", "20", "--grid", "32", "--pitch-um", "8",
            "--seed", "1", "--out", str(other),
        ])
        assert r.exit_code == 0
        result = run(runner, [
            "infer", "--weights", str(cli_world / "tpd" / "weights.ckpt"),
            "--dataset", str(other), "--out", str(tmp_path / "x"),
        ])
        assert result.exit_code == 2

    def test_external_hologram_requires_metadata_flags(self, runner, tmp_path):
        result = runner.invoke(main, ["infer", "--out", str(tmp_path / "o")])
        assert result.exit_code != 0  # neither dataset nor hologram given


class TestRefine:
    def test_refine_writes_outputs(self, runner, cli_world, tmp_path):
        out = tmp_path / "ref"
        result = run(runner, [
            "refine", "--weights", str(cli_world / "tpd" / "weights.ckpt"),
            "--dataset", str(cli_world / "data"), "--record", "0",
            "--cycles", "3", "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        payload = json.loads((out / "refine.json").read_text())
        assert payload["000000"]["cycles"] == 3
        assert payload["000000"]["trace_length"] == 3


class TestHarnessCommands:
    def test_evaluate_tiny(self, runner, cli_world, tmp_path):
        out = tmp_path / "eval"
        result = run(runner, [
            "evaluate", "--train-dataset", str(cli_world / "data"),
            "--test-dataset", str(cli_world / "data"),
            "--strategies", "dd,tpd", "--epochs", "1",
            "--depth", "2", "--base-width", "8",
            "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        report = json.loads((out / "report.json").read_text())
        assert set(report["axes"]["strategy"]) == {"dd", "tpd"}

    def test_sweep_defocus_tiny(self, runner, cli_world, tmp_path):
        out = tmp_path / "sweep"
        result = run(runner, [
            "sweep-defocus",
            "--weights", f"tpd={cli_world / 'tpd' / 'weights.ckpt'}",
            "--test-dataset", str(cli_world / "data"),
            "--z-mm", "18:22:3", "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        report = json.loads((out / "report.json").read_text())
        assert len(report["cells"]) == 3
        assert (out / "defocus_sweep.png").exists()

    def test_log_json_lines(self, runner, cli_world, tmp_path):
        result = run(runner, [
            "infer", "--weights", str(cli_world / "tpd" / "weights.ckpt"),
            "--dataset", str(cli_world / "data"), "--record", "0",
            "--log-json", "--out", str(tmp_path / "lj"),
        ])
        assert result.exit_code == 0
        lines = [l for l in result.output.splitlines() if l.strip().startswith("{")]
        assert lines, "expected JSON log lines"
        for line in lines:
            parsed = json.loads(line)
            assert "level" in parsed and "msg" in parsed


class TestHelp:
    @pytest.mark.parametrize(
        "command",
        ["simulate", "train", "infer", "refine", "evaluate", "sweep-defocus",
         "crossgen", "illposed", "aberration", "rerun"],
    )
    def test_every_command_has_help(self, runner, command):
        result = run(runner, [command, "--help"])
        assert result.exit_code == 0
        assert "--help" in result.output

    def test_units_documented(self, runner):
        out = run(runner, ["simulate", "--help"]).output
        assert "millimeters" in out and "nanometers" in out and "micrometers" in out
