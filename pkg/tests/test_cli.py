import json

import pytest

from mcconfset.cli import EXIT_CONFIG, EXIT_GATE, EXIT_OK, main


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def small_config(**overrides):
    cfg = {
        "schema_version": 1,
        "shapes": [[16, 16]],
        "ranks": [1, 2],
        "budgets": [0.4, 0.7],
        "noise": [{"kind": "rademacher", "sigma": 0.2}],
        "trials": 10,
        "mode": "calibrated",
        "base_seed": 11,
        "constants": {"C": 0.15, "z_cal": 0.01},
    }
    cfg.update(overrides)
    return cfg


def calib_config(**overrides):
    cfg = small_config(
        shapes=[[20, 20]], ranks=[1, 2, 3], budgets=[0.4, 0.6, 0.9], trials=12
    )
    cfg.pop("constants")
    cfg.update(overrides)
    return cfg


class TestDemo:
    def test_exit_zero_and_deterministic(self, capsys):
        code1, out1, _ = run_cli(capsys, "demo", "--seed", "7")
        code2, out2, _ = run_cli(capsys, "demo", "--seed", "7")
        assert code1 == code2 == EXIT_OK
        assert out1 == out2
        assert "k_star:" in out1 and "contained:" in out1

    def test_noiseless_full_observation(self, capsys):
        code, out, _ = run_cli(capsys, "demo", "--sigma", "0", "--p", "1")
        assert code == EXIT_OK
        assert "contained: true" in out
        risk = float(out.split("estimator risk: ")[1].split(" ")[0])
        assert risk < 1e-12

    def test_paper_radius_dominates_calibrated(self, capsys):
        _, out_cal, _ = run_cli(capsys, "demo", "--seed", "3", "--mode", "calibrated")
        _, out_pap, _ = run_cli(capsys, "demo", "--seed", "3", "--mode", "paper")
        r_cal = float(out_cal.split("radius_sq: ")[1].split("\n")[0])
        r_pap = float(out_pap.split("radius_sq: ")[1].split("\n")[0])
        assert r_pap > r_cal

    def test_bad_p_rejected(self, capsys):
        code, _, err = run_cli(capsys, "demo", "--p", "0")
        assert code == EXIT_CONFIG
        assert "p" in err


class TestCoverage:
    def test_writes_reports_and_gate_passes(self, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(small_config()))
        code, out, _ = run_cli(
            capsys, "coverage", "--config", str(cfg), "--out", str(tmp_path), "--threads", "1"
        )
        assert code == EXIT_OK
        assert (tmp_path / "coverage_report.csv").exists()
        assert (tmp_path / "coverage_report.json").exists()

    def test_rerun_is_byte_identical(self, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(small_config()))
        out1 = tmp_path / "run1"
        out2 = tmp_path / "run2"
        assert run_cli(capsys, "coverage", "--config", str(cfg), "--out", str(out1), "--threads", "1")[0] == EXIT_OK
        assert run_cli(capsys, "coverage", "--config", str(cfg), "--out", str(out2), "--threads", "2")[0] == EXIT_OK
        a = (out1 / "coverage_report.csv").read_bytes()
        b = (out2 / "coverage_report.csv").read_bytes()
        assert a == b

    def test_dump_trials_flag(self, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(small_config(trials=6)))
        code, _, _ = run_cli(
            capsys, "coverage", "--config", str(cfg), "--out", str(tmp_path),
            "--threads", "1", "--dump-trials",
        )
        assert code == EXIT_OK
        dump = (tmp_path / "trials.csv").read_text().strip().split("\n")
        assert len(dump) == 1 + 4 * 6  # header + cells * trials

    def test_missing_field_names_it(self, capsys, tmp_path):
        cfg_dict = small_config()
        del cfg_dict["trials"]
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(cfg_dict))
        code, _, err = run_cli(capsys, "coverage", "--config", str(cfg), "--out", str(tmp_path))
        assert code == EXIT_CONFIG
        assert "trials" in err

    def test_malformed_json_reports_line(self, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text('{"schema_version": 1,\n  "shapes": [[16, 16]\n}')
        code, _, err = run_cli(capsys, "coverage", "--config", str(cfg), "--out", str(tmp_path))
        assert code == EXIT_CONFIG
        assert "line" in err

    def test_wrong_schema_version(self, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(small_config(schema_version=99)))
        code, _, err = run_cli(capsys, "coverage", "--config", str(cfg), "--out", str(tmp_path))
        assert code == EXIT_CONFIG
        assert "schema_version" in err

    def test_gate_failure_exits_two(self, capsys, tmp_path):
        # an unreachable margin forces the calibrated-mode gate to trip
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(small_config(coverage_margin=-0.5)))
        code, _, err = run_cli(
            capsys, "coverage", "--config", str(cfg), "--out", str(tmp_path), "--threads", "1"
        )
        assert code == EXIT_GATE
        assert "gate" in err.lower()

    def test_env_var_sets_output_dir(self, capsys, tmp_path, monkeypatch):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(small_config(trials=5)))
        env_dir = tmp_path / "from_env"
        monkeypatch.setenv("MCCONFSET_OUT", str(env_dir))
        code, _, _ = run_cli(capsys, "coverage", "--config", str(cfg), "--threads", "1")
        assert code == EXIT_OK
        assert (env_dir / "coverage_report.csv").exists()

    def test_flag_beats_env_var(self, capsys, tmp_path, monkeypatch):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(small_config(trials=5)))
        monkeypatch.setenv("MCCONFSET_OUT", str(tmp_path / "ignored"))
        chosen = tmp_path / "chosen"
        code, _, _ = run_cli(
            capsys, "coverage", "--config", str(cfg), "--out", str(chosen), "--threads", "1"
        )
        assert code == EXIT_OK
        assert (chosen / "coverage_report.csv").exists()
        assert not (tmp_path / "ignored").exists()

    def test_invalid_threads(self, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(small_config()))
        code, _, err = run_cli(capsys, "coverage", "--config", str(cfg), "--threads", "zero")
        assert code == EXIT_CONFIG


class TestCalibrate:
    def test_writes_positive_constants(self, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(calib_config()))
        code, out, _ = run_cli(
            capsys, "calibrate", "--config", str(cfg), "--out", str(tmp_path), "--threads", "1"
        )
        assert code == EXIT_OK
        consts = json.loads((tmp_path / "constants.json").read_text())
        assert consts["C"] > 0.0
        assert consts["z_cal"] > 0.0
        assert consts["z_cal"] <= 6240.0
        assert consts["z_paper"] == 6240.0

    def test_calibrate_then_coverage_passes_gate(self, capsys, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(calib_config()))
        assert run_cli(
            capsys, "calibrate", "--config", str(cfg_path), "--out", str(tmp_path), "--threads", "1"
        )[0] == EXIT_OK

        cov_cfg = calib_config(base_seed=909)
        cov_cfg["constants_file"] = str(tmp_path / "constants.json")
        cov_path = tmp_path / "cov.json"
        cov_path.write_text(json.dumps(cov_cfg))
        code, _, err = run_cli(
            capsys, "coverage", "--config", str(cov_path), "--out", str(tmp_path), "--threads", "1"
        )
        assert code == EXIT_OK, err

    def test_rejects_insufficient_grid(self, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(small_config()))  # only 2 ranks / 2 budgets
        code, _, err = run_cli(capsys, "calibrate", "--config", str(cfg), "--out", str(tmp_path))
        assert code == EXIT_CONFIG
        assert "3" in err
