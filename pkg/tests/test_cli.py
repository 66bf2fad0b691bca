"""Command surface: config validation, outputs, determinism, exit codes."""

import json
import os

import pytest
import yaml

from spinemc.cli import main
from spinemc.config import ConfigError, config_from_dict


def demo_config(**overrides):
    data = {
        "model": {
            "time": "continuous",
            "motion": {"preset": "brownian"},
            "offspring": {"pmf": {2: 1.0}},
            "rate": {"constant": 1.0},
            "origin": 0.0,
        },
        "query": {"k": 1, "horizon": 0.5, "statistic": {"kind": "ones"}, "estimator": "both"},
        "run": {"replicates": 400, "seed": 99, "workers": 1},
        "output": {"directory": "out", "formats": ["csv", "json"], "figures": True},
    }
    for path, value in overrides.items():
        node = data
        keys = path.split(".")
        for key in keys[:-1]:
            node = node[key]
        node[keys[-1]] = value
    return data


def write_config(tmp_path, data, name="config.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


def read_bytes_tree(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in files:
            full = os.path.join(dirpath, name)
            out[os.path.relpath(full, root)] = open(full, "rb").read()
    return out


class TestConfigValidation:
    def test_underweight_pmf_is_diagnosed_by_field(self):
        with pytest.raises(ConfigError) as err:
            config_from_dict(demo_config(**{"model.offspring.pmf": {0: 0.4, 2: 0.5}}))
        assert any("model.offspring.pmf" in p for p in err.value.problems)

    def test_missing_seed(self):
        data = demo_config()
        del data["run"]["seed"]
        with pytest.raises(ConfigError) as err:
            config_from_dict(data)
        assert any("run.seed" in p for p in err.value.problems)

    def test_bad_estimator_name(self):
        with pytest.raises(ConfigError) as err:
            config_from_dict(demo_config(**{"query.estimator": "psychic"}))
        assert any("query.estimator" in p for p in err.value.problems)

    def test_unknown_motion_preset(self):
        with pytest.raises(ConfigError) as err:
            config_from_dict(demo_config(**{"model.motion": {"preset": "levy"}}))
        assert any("model.motion.preset" in p for p in err.value.problems)

    def test_cli_exit_code_on_bad_config(self, tmp_path, capsys):
        path = write_config(tmp_path, demo_config(**{"model.offspring.pmf": {0: 0.4, 2: 0.5}}))
        code = main(["estimate", "--config", path, "--out", str(tmp_path / "o")])
        assert code == 2
        assert "model.offspring.pmf" in capsys.readouterr().err

    def test_config_hash_ignores_workers(self):
        a = config_from_dict(demo_config())
        b = config_from_dict(demo_config(**{"run.workers": 8}))
        assert a.config_hash() == b.config_hash()

    def test_shipped_configs_parse(self):
        import glob

        from spinemc.config import load_config

        paths = sorted(glob.glob(os.path.join(os.path.dirname(__file__), "..", "configs", "*.yaml")))
        assert paths, "demo configs are part of the package"
        for path in paths:
            config = load_config(path)
            assert config.run.seed is not None


class TestEstimateCommand:
    def test_writes_reports_and_figure(self, tmp_path, capsys):
        path = write_config(tmp_path, demo_config())
        out = str(tmp_path / "run1")
        assert main(["estimate", "--config", path, "--out", out]) == 0
        payload = json.load(open(os.path.join(out, "estimate_report.json")))
        assert payload["toolkit"] == "spinemc"
        assert payload["seed"] == 99
        assert len(payload["config_sha256"]) == 64
        assert {r["name"] for r in payload["reports"]} == {"direct/ones[k=1]", "spine/ones[k=1]"}
        assert os.path.exists(os.path.join(out, "estimate_summary.csv"))
        assert os.path.exists(os.path.join(out, "estimate.png"))

    def test_format_selects_outputs(self, tmp_path):
        path = write_config(tmp_path, demo_config())
        out = str(tmp_path / "run2")
        assert main(["estimate", "--config", path, "--out", out, "--format", "csv",
                     "--no-figures"]) == 0
        assert os.path.exists(os.path.join(out, "estimate_summary.csv"))
        assert not os.path.exists(os.path.join(out, "estimate_report.json"))
        assert not os.path.exists(os.path.join(out, "estimate.png"))

    def test_direct_subcommand_forces_direct(self, tmp_path):
        path = write_config(tmp_path, demo_config(**{"query.estimator": "spine"}))
        out = str(tmp_path / "run3")
        assert main(["direct", "--config", path, "--out", out, "--no-figures"]) == 0
        payload = json.load(open(os.path.join(out, "estimate_report.json")))
        assert [r["name"] for r in payload["reports"]] == ["direct/ones[k=1]"]

    def test_seed_override_changes_output(self, tmp_path):
        path = write_config(tmp_path, demo_config())
        out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
        main(["estimate", "--config", path, "--out", out_a, "--no-figures"])
        main(["estimate", "--config", path, "--out", out_b, "--no-figures", "--seed", "100"])
        a = json.load(open(os.path.join(out_a, "estimate_report.json")))
        b = json.load(open(os.path.join(out_b, "estimate_report.json")))
        assert a["reports"][0]["estimate"] != b["reports"][0]["estimate"]

    def test_byte_determinism_across_workers(self, tmp_path):
        path = write_config(tmp_path, demo_config())
        out_a, out_b = str(tmp_path / "w1"), str(tmp_path / "w8")
        assert main(["estimate", "--config", path, "--out", out_a, "--workers", "1"]) == 0
        assert main(["estimate", "--config", path, "--out", out_b, "--workers", "8"]) == 0
        assert read_bytes_tree(out_a) == read_bytes_tree(out_b)

    def test_env_output_override(self, tmp_path, monkeypatch):
        path = write_config(tmp_path, demo_config())
        target = tmp_path / "from_env"
        monkeypatch.setenv("SPINEMC_OUT", str(target))
        assert main(["estimate", "--config", path, "--no-figures", "--format", "csv"]) == 0
        assert (target / "estimate_summary.csv").exists()

    def test_population_cap_writes_partial_report(self, tmp_path, capsys):
        data = demo_config(**{
            "model.offspring.pmf": {3: 1.0},
            "model.rate": {"constant": 4.0},
            "query.horizon": 8.0,
            "run.max_population": 64,
            "run.replicates": 50,
        })
        path = write_config(tmp_path, data)
        out = str(tmp_path / "boom")
        code = main(["estimate", "--config", path, "--out", out, "--no-figures"])
        assert code == 3
        payload = json.load(open(os.path.join(out, "estimate_report.json")))
        assert payload["partial"] is True
        assert "population cap" in payload["error"]


class TestVerifyDiscreteCommand:
    def test_builtin_grid_passes(self, tmp_path, capsys):
        out = str(tmp_path / "vd")
        assert main(["verify-discrete", "--out", out, "--seed", "0"]) == 0
        lines = open(os.path.join(out, "verify_discrete.csv")).read().strip().splitlines()
        assert len(lines) == 1 + 192  # header + full grid
        payload = json.load(open(os.path.join(out, "verify_discrete.json")))
        assert payload["passed"] is True
        assert payload["failures"] == 0
        assert payload["evaluated"] >= 120

    def test_mutated_grid_fails(self, tmp_path):
        out = str(tmp_path / "vdm")
        code = main(["verify-discrete", "--out", out, "--seed", "0",
                     "--unsound-per-edge-m", "--no-figures"])
        assert code == 1

    def test_single_config_case(self, tmp_path):
        data = {
            "model": {
                "time": "discrete",
                "motion": {"preset": "chain_dt", "transition": [[0.7, 0.3], [0.4, 0.6]],
                           "tilt": {"theta": 0.5}},
                "offspring": {"pmf": {1: 0.5, 2: 0.5}},
                "origin": 0,
            },
            "query": {"k": 2, "generations": 3, "statistic": {"kind": "ones"},
                      "estimator": "both"},
            "run": {"replicates": 10, "seed": 1},
            "output": {"directory": "out"},
        }
        path = write_config(tmp_path, data)
        out = str(tmp_path / "vdc")
        assert main(["verify-discrete", "--config", path, "--out", out, "--no-figures"]) == 0


class TestBoundsCommand:
    def test_small_grid(self, tmp_path):
        out = str(tmp_path / "bounds")
        assert main(["bounds", "--out", out, "--seed", "5", "--replicates", "2000",
                     "--x", "0,1", "--t", "0.5", "--no-figures"]) == 0
        lines = open(os.path.join(out, "bounds.csv")).read().strip().splitlines()
        assert lines[0].startswith("x,t,lower_bound,estimate")
        assert len(lines) == 3

    def test_empty_grid_writes_header_only(self, tmp_path):
        out = str(tmp_path / "emptyb")
        assert main(["bounds", "--out", out, "--seed", "5", "--x", "", "--t", "",
                     "--no-figures"]) == 0
        lines = open(os.path.join(out, "bounds.csv")).read().strip().splitlines()
        assert len(lines) == 1


class TestMartingaleCommand:
    def test_plain_preset_passes(self, tmp_path):
        out = str(tmp_path / "mart")
        assert main(["martingale-check", "--preset", "brownian", "--seed", "1",
                     "--out", out, "--replicates", "500", "--no-figures"]) == 0
        payload = json.load(open(os.path.join(out, "martingale.json")))
        assert payload["passed"] is True

    def test_drift_preset(self, tmp_path):
        out = str(tmp_path / "mart2")
        assert main(["martingale-check", "--preset", "brownian-drift", "--lam", "1.0",
                     "--seed", "2", "--out", out, "--replicates", "20000",
                     "--no-figures"]) == 0


class TestVerifyCtCommand:
    def test_suite_passes_and_mutation_fails(self, tmp_path):
        out = str(tmp_path / "vct")
        code = main(["verify-ct", "--out", out, "--seed", "424242",
                     "--replicates", "4000", "--ks-samples", "2500"])
        assert code == 0
        payload = json.load(open(os.path.join(out, "verify_ct.json")))
        assert payload["passed"] is True
        assert os.path.exists(os.path.join(out, "split_times.png"))

        out2 = str(tmp_path / "vctm")
        code = main(["verify-ct", "--out", out2, "--seed", "424242",
                     "--replicates", "4000", "--ks-samples", "2500",
                     "--unsound-spine-rate", "--no-figures"])
        assert code == 1
