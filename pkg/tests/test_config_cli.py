import json

import numpy as np
import pytest

from latsched import CovarianceGraph, ConfigError
from latsched.cli import main
from latsched.config import load_scenario, parse_scenario

from test_experiments import planar_payload


class TestConfigParsing:
    def test_full_payload(self):
        cfg = parse_scenario(planar_payload())
        assert cfg.model.n_x == 2
        assert [m.id for m in cfg.methods] == [1, 2]
        assert cfg.tf == 1.0

    def test_penalty_derivation(self):
        payload = planar_payload()
        payload["methods"][0] = {
            "steps": 1, "R": [[0.5, 0], [0, 0.5]], "cpu": 0.5,
            "lambda_load": 2.0, "lambda_att": 0.3,
        }
        cfg = parse_scenario(payload)
        assert np.isclose(cfg.methods[0].penalty, 2.0 * 0.5 * 1 * 0.1 + 0.3)

    def test_missing_field_names_path(self):
        payload = planar_payload()
        del payload["model"]["W"]
        with pytest.raises(ConfigError, match="model.W"):
            parse_scenario(payload)

    def test_bad_method_steps_names_path(self):
        payload = planar_payload()
        payload["methods"][1]["steps"] = 0
        with pytest.raises(ConfigError, match=r"methods\[1\].steps"):
            parse_scenario(payload)

    def test_dimension_mismatch_named(self):
        payload = planar_payload()
        payload["methods"][0]["R"] = [[0.5]]
        with pytest.raises(ConfigError, match=r"methods\[0\].R"):
            parse_scenario(payload)

    def test_tf_grid_check(self):
        payload = planar_payload()
        payload["cost"]["Tf"] = 0.55
        with pytest.raises(ConfigError, match="cost.Tf"):
            parse_scenario(payload)

    def test_unknown_experiment_rejected(self):
        payload = planar_payload(experiment={"name": "nope"})
        with pytest.raises(ConfigError, match="experiment.name"):
            parse_scenario(payload)

    def test_certificate_block(self):
        payload = planar_payload()
        payload["certificate"] = {
            "gamma": 0.9,
            "Omega": [[1.0, 0.0], [0.0, 1.0]],
            "Y": [[[0.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]],
        }
        cfg = parse_scenario(payload)
        assert cfg.certificate is not None
        assert cfg.certificate.gamma == 0.9

    def test_true_R_validation(self):
        payload = planar_payload(
            sim={"dt": 0.01, "horizon": 2.0, "seed": 7, "runs": 1,
                 "true_R": {"9": [[1, 0], [0, 1]]}},
        )
        with pytest.raises(ConfigError, match="true_R"):
            parse_scenario(payload)

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_scenario(tmp_path / "missing.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_scenario(path)


def write_config(tmp_path, payload, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


class TestCli:
    def test_build_graph_then_qdp_round_trip(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path, planar_payload())
        graph_path = str(tmp_path / "graph.json")
        assert main(["build-graph", "-c", cfg_path, "-o", graph_path]) == 0
        loaded = CovarianceGraph.load(graph_path)
        assert loaded.policy is not None

        out_a = str(tmp_path / "qdp_a.json")
        out_b = str(tmp_path / "qdp_b.json")
        assert main(["schedule-qdp", "-c", cfg_path, "-o", out_a,
                     "--graph", graph_path]) == 0
        assert main(["schedule-qdp", "-c", cfg_path, "-o", out_b]) == 0
        a = json.loads(open(out_a).read())
        b = json.loads(open(out_b).read())
        assert a["methods"] == b["methods"]
        assert a["cost"] == pytest.approx(b["cost"], rel=1e-12)

    def test_schedule_exact(self, tmp_path):
        cfg_path = write_config(tmp_path, planar_payload())
        out = str(tmp_path / "exact.json")
        assert main(["schedule-exact", "-c", cfg_path, "-o", out]) == 0
        payload = json.loads(open(out).read())
        assert payload["methods"]
        assert payload["cost"] > 0
        assert np.isclose(payload["penalty_term"] + payload["covariance_term"],
                          payload["cost"])

    def test_single_node_high_penalty_schedule(self, tmp_path):
        base = planar_payload(graph={"B0": 2.0, "count": 1, "seed": 0})
        base["cost"]["lambda_alpha"] = 15.0
        cfg_path = write_config(tmp_path, base)
        out = str(tmp_path / "qdp.json")
        assert main(["schedule-qdp", "-c", cfg_path, "-o", out]) == 0
        payload = json.loads(open(out).read())
        assert payload["methods"] == [1] * 10

    def test_bound_check_scalar_toy(self, tmp_path):
        payload = {
            "model": {
                "A": [[float(np.log(0.5))]], "B": [[1.0]], "W": [[0.0]],
                "C": [[1.0]], "x0": [0.0], "P0": [[1.0]], "dt_s": 1.0,
            },
            "methods": [{"steps": 1, "R": [[1.0]], "cpu": 0.5, "penalty": 0.0}],
            "cost": {"Tf": 2.0, "lambda_alpha": 1.0},
            "certificate": {"gamma": 0.3, "Omega": [[1.0]], "Y": [[[0.0]]]},
        }
        cfg_path = write_config(tmp_path, payload)
        out = str(tmp_path / "bound.json")
        assert main(["bound-check", "-c", cfg_path, "-o", out]) == 0
        result = json.loads(open(out).read())
        assert result["feasible"] is True
        assert np.isclose(result["margin"], 0.05)

    def test_simulate_zero_noise_mse(self, tmp_path):
        payload = planar_payload(
            sim={"dt": 0.01, "horizon": 1.0, "seed": 3, "runs": 1,
                 "true_R": {"1": [[0, 0], [0, 0]], "2": [[0, 0], [0, 0]]}},
        )
        payload["model"]["W"] = [[0.0, 0.0], [0.0, 0.0]]
        payload["model"]["P0"] = [[0.0, 0.0], [0.0, 0.0]]
        cfg_path = write_config(tmp_path, payload)
        out = str(tmp_path / "trace.csv")
        assert main(["simulate", "-c", cfg_path, "-o", out]) == 0
        lines = open(out).read().strip().splitlines()
        assert lines[0].startswith("t,xhat_0")
        assert len(lines) == 12  # 11 sensor-grid points + header

    def test_mc_eval_writes_csv(self, tmp_path):
        payload = planar_payload(experiment={"name": "adaptive-R"})
        payload["sim"]["runs"] = 2
        cfg_path = write_config(tmp_path, payload)
        out = str(tmp_path / "mc.csv")
        assert main(["mc-eval", "-c", cfg_path, "-o", out, "--runs", "2"]) == 0
        lines = open(out).read().strip().splitlines()
        assert lines[0].split(",")[0] == "run"
        assert len(lines) == 3

    def test_validation_error_exit_code(self, tmp_path, capsys):
        payload = planar_payload()
        del payload["cost"]
        cfg_path = write_config(tmp_path, payload)
        assert main(["schedule-exact", "-c", cfg_path, "-o",
                     str(tmp_path / "x.json")]) == 1
        assert "error:" in capsys.readouterr().err

    def test_runtime_error_exit_code(self, tmp_path, capsys):
        payload = planar_payload()
        payload["cost"]["Tf"] = 40.0  # depth guard in the exact scheduler
        cfg_path = write_config(tmp_path, payload)
        assert main(["schedule-exact", "-c", cfg_path, "-o",
                     str(tmp_path / "x.json")]) == 2
        assert "runtime error" in capsys.readouterr().err

    def test_seed_override_changes_graph(self, tmp_path):
        cfg_path = write_config(tmp_path, planar_payload())
        g1 = str(tmp_path / "g1.json")
        g2 = str(tmp_path / "g2.json")
        assert main(["build-graph", "-c", cfg_path, "-o", g1]) == 0
        assert main(["build-graph", "-c", cfg_path, "-o", g2, "--seed", "99"]) == 0
        a = CovarianceGraph.load(g1)
        b = CovarianceGraph.load(g2)
        assert not np.array_equal(a.reps[: min(a.size, b.size)],
                                  b.reps[: min(a.size, b.size)])
