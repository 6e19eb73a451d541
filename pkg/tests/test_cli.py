# Unit tests for configuration parsing and the command-line driver.
import json

import numpy as np
import pytest

from nhop_eql.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_VERIFY_FAILED,
    main,
)
from nhop_eql.config import ConfigError, parse_config, resolve_config


def write_config(tmp_path, name="cfg.json", **overrides):
    raw = {
        "environment": {"family": "er", "num_states": 12, "num_actions": 2, "seed": 5},
        "sampling": {"min_visits": 10, "max_total_samples": 50_000},
        "gamma": 0.9,
        "seeds": [0, 1],
        "probe_cells": [[0, 0]],
        "max_iters": 600,
        "output_dir": str(tmp_path / "out"),
    }
    raw.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return path


class TestParseConfig:
    def test_minimal_config_gets_band_defaults(self, tmp_path):
        path = tmp_path / "min.json"
        path.write_text(json.dumps(
            {"environment": {"family": "er", "num_states": 30, "num_actions": 2}}
        ))
        cfg = parse_config(path)
        assert cfg.band == "modest"
        assert cfg.sampling.trajectory_length == 10
        assert cfg.sampling.num_environments == 4

    def test_small_band(self):
        cfg = resolve_config(
            {"environment": {"family": "er", "num_states": 10, "num_actions": 2}}
        )
        assert cfg.band == "small"
        assert cfg.sampling.num_environments == 3

    def test_invalid_gamma_names_field(self, tmp_path):
        path = write_config(tmp_path, gamma=1.5)
        with pytest.raises(ConfigError, match="gamma"):
            parse_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config(tmp_path / "nope.json")

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="malformed"):
            parse_config(path)

    def test_unknown_family(self):
        with pytest.raises(ConfigError, match="family"):
            resolve_config({"environment": {"family": "maze", "num_states": 4}})

    def test_hash_stable_across_parses(self, tmp_path):
        path = write_config(tmp_path)
        assert parse_config(path).config_hash() == parse_config(path).config_hash()

    def test_hash_sensitive_to_content(self, tmp_path):
        a = parse_config(write_config(tmp_path, name="a.json", gamma=0.9))
        b = parse_config(write_config(tmp_path, name="b.json", gamma=0.95))
        assert a.config_hash() != b.config_hash()

    def test_empty_seeds_rejected(self):
        with pytest.raises(ConfigError, match="seeds"):
            resolve_config({
                "environment": {"family": "er", "num_states": 5, "num_actions": 2},
                "seeds": [],
            })

    def test_build_env_round_trip(self, tmp_path):
        cfg = parse_config(write_config(tmp_path))
        env = cfg.build_env()
        assert env.num_states == 12


class TestCmdEstimate:
    def test_writes_model_and_curve(self, tmp_path):
        path = write_config(tmp_path, seeds=[3])
        rc = main(["estimate", "--config", str(path)])
        assert rc == EXIT_OK
        out = tmp_path / "out"
        model = (out / "model_seed3.txt").read_text()
        assert model.startswith("# nhop-eql model v1")
        curve = (out / "estimation_error_seed3.csv").read_text().splitlines()
        assert curve[2] == "samples,error"
        errors = [float(ln.split(",")[1]) for ln in curve[3:]]
        assert errors[-1] < errors[0]

    def test_deterministic_rerun(self, tmp_path):
        path = write_config(tmp_path, seeds=[3])
        main(["estimate", "--config", str(path)])
        first = (tmp_path / "out" / "estimation_error_seed3.csv").read_bytes()
        main(["estimate", "--config", str(path)])
        assert (tmp_path / "out" / "estimation_error_seed3.csv").read_bytes() == first


class TestCmdTrain:
    def test_writes_metrics_and_policy(self, tmp_path):
        path = write_config(tmp_path, seeds=[0])
        rc = main(["train", "--config", str(path)])
        out = tmp_path / "out"
        metrics = (out / "metrics_seed0.csv").read_text().splitlines()
        assert metrics[0] == "# nhop-eql metrics v1"
        # 12 states fall in the small band: K = 3 learners
        assert metrics[2].startswith("t,u,w1,w2,w3,ape")
        policy = (out / "policy_seed0.txt").read_text().splitlines()
        assert policy[0] == "# nhop-eql policy v1"
        assert len(policy) == 3 + 12
        # 600-iteration cap cannot reach full visit coverage
        assert rc == 3

    def test_baseline_flag_adds_series(self, tmp_path):
        path = write_config(tmp_path, seeds=[0])
        main(["train", "--config", str(path), "--baseline", "simple"])
        assert (tmp_path / "out" / "baseline_simple_seed0.csv").exists()

    def test_thread_counts_agree(self, tmp_path):
        path = write_config(tmp_path)
        main(["train", "--config", str(path), "--threads", "1"])
        single = [(tmp_path / "out" / f"metrics_seed{s}.csv").read_bytes() for s in (0, 1)]
        main(["train", "--config", str(path), "--threads", "8"])
        multi = [(tmp_path / "out" / f"metrics_seed{s}.csv").read_bytes() for s in (0, 1)]
        assert single == multi


class TestCmdVerify:
    def test_passing_checks_exit_zero(self, tmp_path):
        path = write_config(tmp_path, seeds=[0],
                            checks=["prop3", "prop4", "weights"])
        rc = main(["verify", "--config", str(path)])
        assert rc == EXIT_OK
        report = (tmp_path / "out" / "report.csv").read_text()
        assert "prop3" in report and "prop4" in report
        assert "informational" in report

    def test_config_error_exit_code(self, tmp_path):
        path = write_config(tmp_path, gamma=2.0)
        assert main(["verify", "--config", str(path)]) == EXIT_CONFIG

    def test_verify_failure_exit_code(self, tmp_path, monkeypatch):
        import nhop_eql.analysis as analysis

        def failing_check(*args, **kwargs):
            report = analysis.CheckReport()
            report.add("prop3", "forced", "stat", 2.0, 1.0, False)
            return report

        monkeypatch.setattr("nhop_eql.cli.analysis.check_prop3", failing_check)
        path = write_config(tmp_path, seeds=[0], checks=["prop3"])
        assert main(["verify", "--config", str(path)]) == EXIT_VERIFY_FAILED
