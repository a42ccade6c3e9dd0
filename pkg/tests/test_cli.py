import json
import textwrap

import pytest

from magnonlink import control as control_mod
from magnonlink.cli import main
from magnonlink.config import parse_config
from magnonlink.pipelines import run_experiment
from magnonlink.tables import read_table
from magnonlink.validate import check_krotov_gradient_sign, validate_suite

SMALL_ENVELOPE = """
kind: envelope
output_prefix: env
model:
  omega_a: 1200.0
  g_m: 1.0
  g_c: 12.0
  j_a: 30.0
grid:
  t_end: 3000.0
  n_steps: 400
"""

SMALL_CLOSED = """
kind: closed
output_prefix: beats
seed: 11
model:
  omega_a: 1200.0
  g_m: 0.1
  g_c: 0.23
  j_a: 1.3
sample_times: [0.0, 10.0, 1.0e6, 1.1e8]
"""


def write(tmp_path, text, name="config.yaml"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(text))
    return path


class TestRunExperiment:
    def test_envelope_table_columns(self, tmp_path):
        config = parse_config(__import__("yaml").safe_load(textwrap.dedent(SMALL_ENVELOPE)))
        summary = run_experiment(config, tmp_path)
        table = read_table(summary["tables"][0])
        for col in ("t", "C", "ev_active", "Phi"):
            assert col in table.columns
        assert table.rows[0, 0] == 0.0
        assert "config" in table.metadata and "version" in table.metadata

    def test_closed_with_sample_times(self, tmp_path):
        config = parse_config(__import__("yaml").safe_load(textwrap.dedent(SMALL_CLOSED)))
        summary = run_experiment(config, tmp_path)
        table = read_table(summary["tables"][0])
        assert table.rows[:, 0].tolist() == [0.0, 10.0, 1.0e6, 1.1e8]
        assert table.rows[0, 3] == pytest.approx(0.0, abs=1e-14)  # no entanglement at t=0

    def test_determinism_byte_identical(self, tmp_path):
        config = parse_config(__import__("yaml").safe_load(textwrap.dedent(SMALL_ENVELOPE)))
        a = run_experiment(config, tmp_path / "a")
        b = run_experiment(config, tmp_path / "b")
        for pa, pb in zip(a["tables"], b["tables"]):
            with open(pa, "rb") as fa, open(pb, "rb") as fb:
                assert fa.read() == fb.read()

    def test_config_echo_reruns_identically(self, tmp_path):
        # the metadata header alone is enough to reproduce the run
        import yaml

        config = parse_config(yaml.safe_load(textwrap.dedent(SMALL_ENVELOPE)))
        first = run_experiment(config, tmp_path / "a")
        table = read_table(first["tables"][0])
        echoed = parse_config(yaml.safe_load(table.metadata["config"]))
        second = run_experiment(echoed, tmp_path / "b")
        with open(first["tables"][0], "rb") as fa, open(second["tables"][0], "rb") as fb:
            assert fa.read() == fb.read()

    def test_control_run_summary(self, tmp_path):
        raw = {
            "kind": "control",
            "output_prefix": "ctl",
            "model": {"omega_a": 12.0, "g_m": 1.0, "g_c": 1.5, "j_a": 3.0},
            "control": {
                "total_time": 45.0, "dt": 0.1, "lambda_a": [5.0, 5.0], "j_target": 1e-3,
            },
        }
        summary = run_experiment(parse_config(raw), tmp_path)
        run = summary["runs"][0]
        assert run["termination"] == "converged"
        assert run["final_concurrence"] > 0.998
        fields = read_table(tmp_path / "ctl_fields.csv")
        assert fields.columns == ["t", "f1", "f2"]
        assert fields.rows.shape == (450, 3)
        history = read_table(tmp_path / "ctl_history.csv")
        assert history.columns == ["iteration", "J_T", "J"]
        assert (tmp_path / "ctl_summary.json").exists()

    def test_opensys_runs_both_conventions(self, tmp_path):
        raw = {
            "kind": "opensys",
            "output_prefix": "osys",
            "model": {"omega_a": 3.0, "g_m": 1.3, "g_c": 1.5, "j_a": 0.5},
            "grid": {"t_end": 4.0, "n_steps": 20},
            "bath": {"gamma": 0.7, "lambda_a": 0.1, "lambda_b": 0.1},
        }
        summary = run_experiment(parse_config(raw), tmp_path)
        assert set(summary["runs"]) == {"nonmarkov", "markov"}
        for label in ("nonmarkov", "markov"):
            table = read_table(tmp_path / f"osys_{label}.csv")
            assert table.columns == ["t", "concurrence", "trace", "min_eigenvalue"]
            assert summary["runs"][label]["worst_trace_deviation"] < 1e-8


class TestCLI:
    def test_envelope_verb(self, tmp_path, capsys):
        config_path = write(tmp_path, SMALL_ENVELOPE)
        code = main(["envelope", "--config", str(config_path), "--out", str(tmp_path / "out")])
        assert code == 0
        printed = json.loads(capsys.readouterr().out)
        assert printed["kind"] == "envelope"
        assert (tmp_path / "out" / "env_series.csv").exists()

    def test_seed_override(self, tmp_path, capsys):
        config_path = write(tmp_path, SMALL_CLOSED)
        code = main([
            "simulate", "--config", str(config_path), "--out", str(tmp_path / "out"),
            "--seed", "99",
        ])
        assert code == 0
        summary = json.loads((tmp_path / "out" / "beats_summary.json").read_text())
        assert summary["seed"] == 99

    def test_verb_kind_mismatch(self, tmp_path, capsys):
        config_path = write(tmp_path, SMALL_CLOSED)
        code = main(["control", "--config", str(config_path), "--out", str(tmp_path)])
        assert code == 2
        assert "does not match" in capsys.readouterr().err

    def test_config_error_exit(self, tmp_path, capsys):
        config_path = write(tmp_path, "kind: closed\nmodel: {omega_a: -1}\n")
        code = main(["simulate", "--config", str(config_path), "--out", str(tmp_path)])
        assert code == 2


class TestValidateSuite:
    def test_all_checks_pass(self, tmp_path):
        report = validate_suite(seed=7)
        assert report["passed"]
        assert set(report["checks"]) >= {
            "wootters_vs_pure", "lindblad_vs_markov", "obar_double_integral",
            "krotov_gradient_sign", "adiabatic_sweep",
        }

    def test_corrupted_update_sign_is_caught(self, monkeypatch):
        original = control_mod.first_sweep_updates
        monkeypatch.setattr(
            control_mod, "first_sweep_updates", lambda *a, **k: -original(*a, **k)
        )
        report = check_krotov_gradient_sign()
        assert not report["passed"]
        assert report["observed"] > 0

    def test_validate_verb(self, tmp_path, capsys):
        config_path = write(tmp_path, "kind: validate\noutput_prefix: val\nseed: 7\n")
        code = main(["validate", "--config", str(config_path), "--out", str(tmp_path / "v")])
        assert code == 0
        summary = json.loads((tmp_path / "v" / "val_summary.json").read_text())
        assert summary["passed"] is True
