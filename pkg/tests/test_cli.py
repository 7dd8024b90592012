"""Command-line contract: configs, outputs, exit codes, idempotence."""

import json

import numpy as np
import pytest

from dppsel.cli import main


def write_json(path, payload):
    path.write_text(json.dumps(payload, indent=2))
    return str(path)


def tiny_train_payload(**overrides):
    payload = {
        "env": "point_mass",
        "seeds": [0],
        "total_steps": 250,
        "cadence": 50,
        "selections": ["dns"],
        "redq": {
            "n_critics": 4,
            "subset_size": 2,
            "target_subset_size": 2,
            "batch_size": 16,
            "hidden_sizes": [16, 16],
            "exploration_steps": 64,
        },
    }
    payload.update(overrides)
    return payload


class TestTrain:
    def test_writes_metrics_and_summary(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "cfg.json", tiny_train_payload())
        assert main(["--out", str(tmp_path / "out"), "train", cfg]) == 0
        metrics = tmp_path / "out" / "metrics_dns_seed0.csv"
        assert metrics.exists()
        lines = metrics.read_text().splitlines()
        assert lines[0].startswith("step,episode_return,mean_q_0")
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert "dns" in summary["variants"]

    def test_idempotent_byte_identical(self, tmp_path):
        cfg = write_json(tmp_path / "cfg.json", tiny_train_payload())
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert main(["--out", str(out1), "train", cfg]) == 0
        assert main(["--out", str(out2), "train", cfg]) == 0
        a = (out1 / "metrics_dns_seed0.csv").read_bytes()
        b = (out2 / "metrics_dns_seed0.csv").read_bytes()
        assert a == b
        assert (out1 / "summary.json").read_bytes() == (out2 / "summary.json").read_bytes()

    def test_variant_comparison_summary(self, tmp_path):
        payload = tiny_train_payload(selections=["dns", "all"])
        cfg = write_json(tmp_path / "cfg.json", payload)
        assert main(["--out", str(tmp_path / "out"), "train", cfg]) == 0
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        dns = summary["variants"]["dns"]
        assert dns["bwd_critic_ratio_vs_all"] == pytest.approx(0.5)
        assert 0.5 < dns["bwd_ratio_vs_all"] < 1.0

    def test_k_larger_than_n_exits_2(self, tmp_path):
        payload = tiny_train_payload()
        payload["redq"]["subset_size"] = 9
        cfg = write_json(tmp_path / "cfg.json", payload)
        assert main(["--out", str(tmp_path / "out"), "train", cfg]) == 2

    def test_unknown_key_exits_2(self, tmp_path):
        payload = tiny_train_payload()
        payload["bogus"] = True
        cfg = write_json(tmp_path / "cfg.json", payload)
        assert main(["--out", str(tmp_path / "out"), "train", cfg]) == 2

    def test_malformed_json_exits_2_with_location(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"seeds": [0,]}')
        assert main(["--out", str(tmp_path / "out"), "train", str(bad)]) == 2
        err = capsys.readouterr().err
        assert "bad.json:1:" in err

    def test_threads_match_serial(self, tmp_path):
        payload = tiny_train_payload(seeds=[0, 1])
        cfg = write_json(tmp_path / "cfg.json", payload)
        assert main(["--out", str(tmp_path / "serial"), "train", cfg]) == 0
        assert main(["--out", str(tmp_path / "par"), "--threads", "2", "train", cfg]) == 0
        for seed in (0, 1):
            a = (tmp_path / "serial" / f"metrics_dns_seed{seed}.csv").read_bytes()
            b = (tmp_path / "par" / f"metrics_dns_seed{seed}.csv").read_bytes()
            assert a == b


class TestDppCheck:
    def test_identity_uniform_passes(self, tmp_path, capsys):
        cfg = write_json(
            tmp_path / "cfg.json",
            {"kernel": np.eye(4).tolist(), "k": 2, "n_draws": 20000, "seed": 0,
             "tv_threshold": 0.02},
        )
        assert main(["--out", str(tmp_path / "out"), "dpp-check", cfg]) == 0
        report = json.loads((tmp_path / "out" / "dpp_check.json").read_text())
        assert report["tv_distance"] <= 0.02
        out = capsys.readouterr().out
        assert "total-variation distance" in out

    def test_worked_3x3_probabilities_printed(self, tmp_path, capsys):
        kernel = [[1.0, 0.5, 0.0], [0.5, 1.0, 0.0], [0.0, 0.0, 1.0]]
        cfg = write_json(
            tmp_path / "cfg.json", {"kernel": kernel, "k": 2, "n_draws": 20000}
        )
        assert main(["--out", str(tmp_path / "out"), "dpp-check", cfg]) == 0
        report = json.loads((tmp_path / "out" / "dpp_check.json").read_text())
        assert report["subsets"]["0;1"]["exact"] == pytest.approx(3 / 11)
        assert report["subsets"]["0;2"]["exact"] == pytest.approx(4 / 11)

    def test_rank_deficient_exits_4(self, tmp_path):
        cfg = write_json(
            tmp_path / "cfg.json",
            {"kernel": [[1.0, 1.0], [1.0, 1.0]], "k": 2, "n_draws": 2000},
        )
        assert main(["--out", str(tmp_path / "out"), "dpp-check", cfg]) == 4

    def test_unknown_key_exits_2(self, tmp_path):
        cfg = write_json(tmp_path / "cfg.json", {"kernel": [[1.0]], "k": 1, "oops": 5})
        assert main(["--out", str(tmp_path / "out"), "dpp-check", cfg]) == 2


class TestVarianceLab:
    def test_explicit_experiment_report(self, tmp_path):
        cfg = write_json(
            tmp_path / "cfg.json",
            {
                "seed": 3,
                "experiments": [
                    {
                        "a": -1.0, "b": 1.0, "c": 0.9, "d": 0.9,
                        "p_marginal": 0.5, "p_joint": 0.05,
                        "coupling": "negatively_coupled", "n_draws": 120000,
                    }
                ],
            },
        )
        assert main(["--out", str(tmp_path / "out"), "variance-lab", cfg]) == 0
        report = json.loads((tmp_path / "out" / "variance_lab.json").read_text())
        exp = report["experiments"][0]
        assert exp["checks"]["ordering_avg"] == "reduced"
        assert exp["avg_gap"]["phi_match"] in ("half", "indistinguishable")

    def test_positive_coupling_informational_not_failure(self, tmp_path):
        cfg = write_json(
            tmp_path / "cfg.json",
            {
                "experiments": [
                    {
                        "a": -1.0, "b": 1.0, "c": 0.5, "d": 0.2,
                        "p_marginal": 0.5, "p_joint": 0.45,
                        "coupling": "negatively_coupled", "n_draws": 60000,
                    }
                ]
            },
        )
        assert main(["--out", str(tmp_path / "out"), "variance-lab", cfg]) == 0

    def test_invalid_p_joint_exits_2(self, tmp_path):
        cfg = write_json(
            tmp_path / "cfg.json",
            {
                "experiments": [
                    {
                        "a": -1.0, "b": 1.0, "c": 0.5, "d": 0.2,
                        "p_marginal": 0.5, "p_joint": 0.7,
                    }
                ]
            },
        )
        assert main(["--out", str(tmp_path / "out"), "variance-lab", cfg]) == 2


class TestCka:
    def test_worked_value(self, tmp_path, capsys):
        x = tmp_path / "x.csv"
        y = tmp_path / "y.csv"
        x.write_text("1\n2\n3\n")
        y.write_text("1\n2\n4\n")
        assert main(["cka", str(x), str(y)]) == 0
        out = capsys.readouterr().out.strip()
        assert float(out) == pytest.approx(27 / 28, abs=1e-9)

    def test_row_mismatch_exits_2(self, tmp_path):
        x = tmp_path / "x.csv"
        y = tmp_path / "y.csv"
        x.write_text("1\n2\n3\n")
        y.write_text("1\n2\n")
        assert main(["cka", str(x), str(y)]) == 2
