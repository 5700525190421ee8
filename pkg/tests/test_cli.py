import json
import math
from pathlib import Path

import numpy as np
import pytest

from ustatlab.cli import build_parser, main

TWO_STATE = """
[model]
kind = "finite"
states = ["0", "1"]
matrix = [[0.9, 0.1], [0.2, 0.8]]

[kernel]
kind = "product"
f = [1.0, -2.0]
"""

WEIGHTED = """
[model]
kind = "finite"
matrix = [[0.9, 0.1], [0.2, 0.8]]

[kernel]
kind = "weighted"
weights = "inverse-gap"

[kernel.base]
kind = "product"
f = [1.0, -2.0]
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "two_state.toml"
    p.write_text(TWO_STATE)
    return str(p)


@pytest.fixture
def wcfg(tmp_path):
    p = tmp_path / "weighted.toml"
    p.write_text(WEIGHTED)
    return str(p)


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


class TestConstants:
    def test_two_state_oracle(self, cfg, capsys):
        code, out, _ = run(capsys, "constants", "--config", cfg)
        assert code == 0
        doc = json.loads(out)
        assert doc["pi"] == pytest.approx([2 / 3, 1 / 3], abs=1e-12)
        assert doc["rho"] == pytest.approx(0.7, abs=1e-12)
        assert doc["delta_m"] == pytest.approx(0.3, abs=1e-12)
        assert doc["delta_M"] == pytest.approx(1.7, abs=1e-12)
        assert doc["nu"] == pytest.approx([9 / 17, 8 / 17], abs=1e-12)
        assert doc["t_mix"] == 3

    def test_arch_constants(self, tmp_path, capsys):
        p = tmp_path / "arch.toml"
        p.write_text('[model]\nkind = "arch"\nsigma = 1.0\n'
                     'h = {kind = "zero"}\ng = {kind = "const", value = 1.0}\n')
        code, out, _ = run(capsys, "constants", "--config", str(p))
        assert code == 0
        doc = json.loads(out)
        assert doc["delta_m"] == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-8)
        assert doc["delta_m"] == pytest.approx(doc["delta_M"], rel=1e-10)


class TestStats:
    def test_tau_ap_example(self, capsys):
        code, out, _ = run(capsys, "stats", "tau-ap", "--ranks", "2,1,3")
        assert code == 0
        row = out.strip().splitlines()[1].split(",")
        assert row[0] == "tau-ap" and float(row[4]) == 0.0

    def test_tau_kendall(self, capsys):
        code, out, _ = run(capsys, "stats", "tau-kendall", "--ranks", "2,1,3")
        assert code == 0
        assert float(out.strip().splitlines()[1].split(",")[4]) == pytest.approx(1 / 3)

    def test_wilcoxon(self, capsys):
        code, out, _ = run(capsys, "stats", "wilcoxon", "--sample0", "1,10",
                           "--sample1", "5", "--weights0", "3,1", "--weights1", "1")
        assert code == 0
        assert float(out.strip().splitlines()[1].split(",")[4]) == 0.75

    def test_ties_exit_one(self, capsys):
        code, _, err = run(capsys, "stats", "tau-ap", "--ranks", "1,1,2")
        assert code == 1
        assert err.startswith("error: ")
        assert "\n" not in err.strip()


class TestSimulate:
    def test_writes_provenance_and_reproduces(self, cfg, tmp_path, capsys):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            code, _, _ = run(capsys, "simulate", "--config", cfg, "--n", "30",
                             "--seed", "9", "--out", str(out))
            assert code == 0
        assert (out1 / "path.csv").read_bytes() == (out2 / "path.csv").read_bytes()
        rc = json.loads((out1 / "resolved_config.json").read_text())
        assert rc["artifact"]["name"] == "ustatlab"
        assert rc["parameters"]["seed"] == 9
        assert rc["config"]["model"]["kind"] == "finite"
        header = (out1 / "path.csv").read_text().splitlines()[0]
        assert header == "step,state"

    def test_stdout_when_no_outdir(self, cfg, capsys):
        code, out, _ = run(capsys, "simulate", "--config", cfg, "--n", "5",
                           "--seed", "1")
        assert code == 0
        assert out.splitlines()[0] == "step,state"
        assert len(out.strip().splitlines()) == 6


class TestUStatCommand:
    def test_csv_schema(self, cfg, capsys):
        code, out, _ = run(capsys, "ustat", "--config", cfg, "--n", "8",
                           "--seed", "3")
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == "statistic,n,seed,centering,value,stderr"
        fields = lines[1].split(",")
        assert fields[0] == "ustat" and fields[1] == "8" and fields[2] == "3"


class TestDecompose:
    def test_residual_zero(self, cfg, capsys):
        code, out, _ = run(capsys, "decompose", "--config", cfg, "--n", "10",
                           "--seed", "2", "--tn", "3")
        assert code == 0
        doc = json.loads(out)
        assert abs(doc["residual"]) <= 1e-9 * (1 + abs(doc["u_stat_centered"]))
        assert len(doc["per_level"]) == 3


class TestBounds:
    def test_constants_json_and_table(self, cfg, tmp_path, capsys):
        out = tmp_path / "bnd"
        code, stdout, _ = run(capsys, "bounds", "--config", cfg, "--n", "3",
                              "--tn", "3", "--u", "1,2", "--out", str(out))
        assert code == 0
        doc = json.loads(stdout.split("\nu,")[0])
        assert doc["A"] == 8.0
        assert doc["Bn"] ** 2 == pytest.approx(328 / 17, abs=1e-9)
        assert doc["Cn"] ** 2 == pytest.approx(246 / 17, abs=1e-9)
        table = (out / "theorem_rhs.csv").read_text().splitlines()
        assert table[0] == "u,bound_T1a,bound_T1b,bound_T2,bound_Eq3"
        assert len(table) == 3


class TestSplitCommand:
    def test_trace_and_summary(self, cfg, tmp_path, capsys):
        out = tmp_path / "split"
        code, stdout, _ = run(capsys, "split", "--config", cfg, "--n", "20000",
                              "--seed", "4", "--out", str(out))
        assert code == 0
        doc = json.loads(stdout)
        assert doc["delta1"] == pytest.approx(0.3, abs=1e-12)
        assert doc["n_regen"] > 5000
        assert doc["mean_T"] == pytest.approx(10 / 3, rel=0.05)
        assert doc["tau_hat"] > 0
        lines = (out / "trace.csv").read_text().splitlines()
        assert lines[0] == "step,state,bell"
        assert len(lines) == 20001


class TestVerify:
    def test_exit_zero_and_report(self, cfg, tmp_path, capsys):
        out = tmp_path / "verify"
        code, stdout, _ = run(capsys, "verify", "--config", cfg, "--n", "50",
                              "--replicates", "100", "--seed", "7",
                              "--steps", "60000", "--out", str(out))
        assert code == 0
        doc = json.loads(stdout)
        assert doc["identity"]["ok"] is True
        assert doc["regeneration"]["ok"] is True
        assert doc["identity"]["max_decomposition_residual"] <= 1e-9
        assert (out / "verify.json").exists()


class TestExperimentsCommands:
    def test_tail_byte_identical_across_threads(self, cfg, tmp_path, capsys):
        dirs = []
        for name, threads in (("t1", "1"), ("t2", "3")):
            out = tmp_path / name
            code, _, _ = run(capsys, "tail", "--config", cfg,
                             "--n-grid", "16,32", "--u-grid", "2,3,4",
                             "--replicates", "120", "--seed", "5",
                             "--threads", threads, "--out", str(out))
            assert code == 0
            dirs.append(out)
        for fname in ("raw.csv", "quantiles.csv", "summary.json"):
            assert (dirs[0] / fname).read_bytes() == (dirs[1] / fname).read_bytes()

    def test_rate_requires_weighted_config(self, cfg, capsys):
        code, _, err = run(capsys, "rate", "--config", cfg,
                           "--n-grid", "16,32,64", "--replicates", "100")
        assert code == 1
        assert "weighted" in err

    def test_rate_runs_on_weighted_config(self, wcfg, tmp_path, capsys):
        out = tmp_path / "rate"
        code, stdout, _ = run(capsys, "rate", "--config", wcfg,
                              "--n-grid", "16,32,64", "--replicates", "150",
                              "--seed", "2", "--out", str(out))
        assert code == 0
        doc = json.loads((out / "summary.json").read_text())
        assert doc["summary"]["weighted_below_unweighted"] is True
        assert (out / "raw.csv").exists()


class TestErrors:
    def test_unknown_command(self, capsys):
        code, _, err = run(capsys, "frobnicate")
        assert code == 1 and err.startswith("error: ")

    def test_missing_config(self, capsys):
        code, _, err = run(capsys, "constants", "--config", "/does/not/exist.toml")
        assert code == 1 and "not found" in err

    def test_malformed_config(self, tmp_path, capsys):
        p = tmp_path / "bad.toml"
        p.write_text("[model\nkind=")
        code, _, err = run(capsys, "constants", "--config", str(p))
        assert code == 1 and "parse error" in err

    def test_single_line_machine_parsable(self, tmp_path, capsys):
        p = tmp_path / "bad2.toml"
        p.write_text('[model]\nkind = "finite"\nmatrix = [[0.9, 0.2], [0.2, 0.8]]\n')
        code, _, err = run(capsys, "constants", "--config", str(p))
        assert code == 1
        assert err.startswith("error: ") and err.count("\n") == 1

    def test_missing_subcommand(self, capsys):
        code, _, err = run(capsys)
        assert code == 1 and "subcommand" in err


class TestHelp:
    @pytest.mark.parametrize("cmd", ["simulate", "constants", "ustat", "decompose",
                                     "bounds", "split", "verify", "rate", "tail"])
    def test_every_subcommand_has_help_with_defaults(self, cmd, capsys):
        parser = build_parser()
        with pytest.raises(SystemExit):
            parser.parse_args([cmd, "--help"])
        out = capsys.readouterr().out
        assert "--config" in out
        assert "default" in out
