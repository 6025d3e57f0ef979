"""End-to-end tests of the command-line interface (in-process, no subprocesses)."""

import json

import numpy as np
import pytest

from medsampler.cli import main
from medsampler.fileio import read_design, read_ledger, read_samples


def generate(tmp_path, name="run", extra=()):
    out = tmp_path / name
    code = main(
        ["generate", "--density", "banana", "--n", "12", "--K", "3", "--seed", "7", "--out", str(out)]
        + list(extra)
    )
    assert code == 0
    return out


class TestGenerate:
    def test_writes_the_four_files(self, tmp_path):
        out = generate(tmp_path)
        for name in ("design.csv", "ledger.csv", "report.json", "manifest.json"):
            assert (out / name).exists()
        df = read_design(out / "design.csv")
        assert df.points.shape == (12, 2)
        assert read_ledger(out / "ledger.csv").count == 36

    def test_report_has_no_timings(self, tmp_path):
        out = generate(tmp_path)
        report = json.loads((out / "report.json").read_text())
        assert "total_seconds" not in report
        assert all("seconds" not in st for st in report["stages"])
        assert report["n"] == 12
        assert report["K"] == 3
        assert report["budget"] == 36

    def test_manifest_carries_digest_and_resolved_config(self, tmp_path):
        out = generate(tmp_path)
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["ledger_digest"]) == 64
        assert manifest["config"]["run"]["n"] == 12
        assert manifest["config"]["density"]["name"] == "banana"
        assert manifest["seed"] == 7
        assert "started" in manifest and "finished" in manifest

    def test_reruns_are_byte_identical(self, tmp_path):
        # ledger.csv carries wall-clock durations, so its stability claim is
        # the digest (points and values), not the raw bytes
        a = generate(tmp_path, "a")
        b = generate(tmp_path, "b")
        for name in ("design.csv", "report.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        da = json.loads((a / "manifest.json").read_text())["ledger_digest"]
        db = json.loads((b / "manifest.json").read_text())["ledger_digest"]
        assert da == db

    def test_seed_changes_the_design(self, tmp_path):
        a = generate(tmp_path, "a")
        out_b = tmp_path / "b"
        assert (
            main(
                ["generate", "--density", "banana", "--n", "12", "--K", "3", "--seed", "8", "--out", str(out_b)]
            )
            == 0
        )
        assert (a / "design.csv").read_bytes() != (out_b / "design.csv").read_bytes()

    def test_defaults_resolved_from_dimension(self, tmp_path):
        out = tmp_path / "ar1"
        code = main(
            ["generate", "--density", "ar1", "--p", "3", "--rho", "0.5", "--sigma", "0.2",
             "--n", "10", "--K", "2", "--out", str(out)]
        )
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["p"] == 3

    def test_missing_density_is_usage_error(self, tmp_path):
        assert main(["generate", "--out", str(tmp_path / "x")]) == 2

    def test_ar1_without_rho_is_usage_error(self, tmp_path):
        code = main(["generate", "--density", "ar1", "--p", "3", "--out", str(tmp_path / "x")])
        assert code == 2

    def test_bad_n_is_usage_error(self, tmp_path):
        code = main(
            ["generate", "--density", "banana", "--n", "1", "--K", "3", "--out", str(tmp_path / "x")]
        )
        assert code == 2

    def test_missing_out_flag_exits_two(self):
        with pytest.raises(SystemExit) as err:
            main(["generate", "--density", "banana"])
        assert err.value.code == 2


class TestConfigFile:
    def test_file_fills_missing_flags(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"density": "banana", "n": 12, "K": 3, "seed": 5}))
        out = tmp_path / "run"
        assert main(["generate", "--config", str(cfg), "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["seed"] == 5
        assert report["n"] == 12

    def test_flags_beat_the_file(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"density": "banana", "n": 12, "K": 3, "seed": 5}))
        out = tmp_path / "run"
        assert main(["generate", "--config", str(cfg), "--n", "14", "--out", str(out)]) == 0
        assert json.loads((out / "report.json").read_text())["n"] == 14

    def test_unknown_key_is_usage_error(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"density": "banana", "frobnicate": 1}))
        assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 2


class TestDiagnose:
    def test_report_and_tidy_csvs(self, tmp_path):
        run = generate(tmp_path)
        out = tmp_path / "diag"
        code = main(["diagnose", "--design", str(run / "design.csv"), "--out", str(out), "--bins", "10"])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert "psi_log" in report and "cl2" in report
        lines = (out / "marginals.csv").read_text().splitlines()
        assert lines[0] == "dim,bin,lo,hi,mass"
        assert len(lines) == 1 + 2 * 10
        corr = (out / "correlation.csv").read_text().splitlines()
        assert len(corr) == 1 + 4

    def test_truth_flag_adds_comparisons(self, tmp_path):
        run = generate(tmp_path)
        out = tmp_path / "diag"
        code = main(
            ["diagnose", "--design", str(run / "design.csv"), "--out", str(out),
             "--truth", "--density", "banana"]
        )
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert 0.0 <= report["truth"]["marginal_max_error"] <= 1.0
        assert report["truth"]["cl2_transformed"] > 0.0

    def test_truth_without_density_is_usage_error(self, tmp_path):
        run = generate(tmp_path)
        code = main(
            ["diagnose", "--design", str(run / "design.csv"), "--out", str(tmp_path / "d"), "--truth"]
        )
        assert code == 2

    def test_malformed_cell_is_runtime_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("x1,x2,logf,stage\n0.1,zap,0.0,1\n")
        code = main(["diagnose", "--design", str(bad), "--out", str(tmp_path / "d")])
        assert code == 3
        err = capsys.readouterr().err
        assert "line 2" in err and "x2" in err


class TestFollowup:
    def test_samples_written_with_budgeted_count(self, tmp_path):
        run = generate(tmp_path)
        code = main(["followup", "--run", str(run), "--N", "200", "--seed", "1"])
        assert code == 0
        samples, logf, ids = read_samples(run / "samples.csv")
        assert 200 <= len(samples) <= 212
        assert samples.shape[1] == 2
        assert set(ids) <= set(range(12))

    def test_ledger_untouched_and_reruns_identical(self, tmp_path):
        run = generate(tmp_path)
        ledger_bytes = (run / "ledger.csv").read_bytes()
        assert main(["followup", "--run", str(run), "--N", "150", "--seed", "3"]) == 0
        first = (run / "samples.csv").read_bytes()
        assert (run / "ledger.csv").read_bytes() == ledger_bytes
        assert main(["followup", "--run", str(run), "--N", "150", "--seed", "3"]) == 0
        assert (run / "samples.csv").read_bytes() == first

    def test_missing_ledger_is_runtime_error(self, tmp_path):
        run = generate(tmp_path)
        (run / "ledger.csv").unlink()
        assert main(["followup", "--run", str(run), "--N", "100"]) == 3

    def test_tampered_ledger_fails_digest_check(self, tmp_path):
        run = generate(tmp_path)
        text = (run / "ledger.csv").read_text().splitlines()
        fields = text[1].split(",")
        fields[4] = "0.123"
        text[1] = ",".join(fields)
        (run / "ledger.csv").write_text("\n".join(text) + "\n")
        assert main(["followup", "--run", str(run), "--N", "100"]) == 3


class TestBench:
    def run_bench(self, tmp_path, extra=()):
        out = tmp_path / "bench"
        code = main(
            ["bench", "--density", "uniform", "--p", "2", "--n", "10", "--K", "2",
             "--out", str(out)] + list(extra)
        )
        return code, out / "comparison.json"

    def test_three_samplers_reported(self, tmp_path):
        code, path = self.run_bench(tmp_path)
        assert code == 0
        comp = json.loads(path.read_text())
        assert comp["budget"] == 20
        for sampler in ("med", "metropolis", "hammersley"):
            assert len(comp[sampler]["cl2"]) >= 1
        assert comp["metropolis"]["evaluations"] == [20]

    def test_reruns_byte_identical(self, tmp_path):
        _, path = self.run_bench(tmp_path)
        first = path.read_bytes()
        _, path = self.run_bench(tmp_path)
        assert path.read_bytes() == first

    def test_seeds_flag_runs_each_seed(self, tmp_path):
        code, path = self.run_bench(tmp_path, ["--seeds", "3"])
        assert code == 0
        comp = json.loads(path.read_text())
        assert comp["seeds"] == [0, 1, 2]
        assert len(comp["med"]["cl2"]) == 3

    def test_external_density_rejected(self, tmp_path):
        code = main(
            ["bench", "--density", "external", "--cmd", "true", "--p", "2", "--out", str(tmp_path / "b")]
        )
        assert code == 2

    def test_sweep_needs_ar1(self, tmp_path):
        code = main(
            ["bench", "--density", "banana", "--sweep", "1,2", "--out", str(tmp_path / "b")]
        )
        assert code == 2

    def test_ar1_sweep_table(self, tmp_path):
        out = tmp_path / "sweep"
        code = main(
            ["bench", "--density", "ar1", "--rho", "0.0", "--sigma", "0.2", "--sweep", "1,2",
             "--n", "8", "--K", "2", "--out", str(out)]
        )
        assert code == 0
        comp = json.loads((out / "comparison.json").read_text())
        assert [entry["p"] for entry in comp["sweep"]] == [1, 2]


class TestUniformTruthTransform:
    def test_identity_on_uniform(self, tmp_path):
        out = tmp_path / "run"
        assert (
            main(
                ["generate", "--density", "uniform", "--p", "2", "--n", "10", "--K", "2",
                 "--seed", "0", "--out", str(out)]
            )
            == 0
        )
        diag = tmp_path / "diag"
        assert (
            main(
                ["diagnose", "--design", str(out / "design.csv"), "--out", str(diag),
                 "--truth", "--density", "uniform", "--p", "2"]
            )
            == 0
        )
        report = json.loads((diag / "report.json").read_text())
        assert report["truth"]["cl2_transformed"] == pytest.approx(report["cl2"], rel=1e-12)


def test_version_flag_exits_zero(capsys):
    with pytest.raises(SystemExit) as err:
        main(["--version"])
    assert err.value.code == 0
    assert "medsampler" in capsys.readouterr().out
