import json

import numpy as np
import pytest

from choice_lab import cli
from choice_lab.config import CHECKS, ExperimentConfig, reference_config_path, validate
from choice_lab.errors import ConfigurationError

REFERENCE = ["ref_binary", "ref_multinomial", "ref_control", "ref_panel", "ref_nonid"]


def minimal(**extra):
    doc = {"name": "mini", "seed": 1, "checks": ["thm2"],
           "model": {"family": "BinaryRC", "dims": {"J": 2, "d": 1}},
           "eta": {"kind": "MultivariateNormal", "mean": [1.0], "cov": [[0.5]]},
           "noise": {"kind": "LogisticDiff", "xi": 0.0},
           "integration": {"method": "gauss_hermite", "nodes_per_dim": 20},
           "grids": {"x": [[0.0], [0.5]]}}
    doc.update(extra)
    return doc


class TestSchema:
    @pytest.mark.parametrize("name", REFERENCE)
    def test_reference_configs_validate(self, name):
        cfg = ExperimentConfig.from_file(reference_config_path(name))
        assert set(cfg.checks) <= set(CHECKS)

    def test_error_names_field(self):
        with pytest.raises(ConfigurationError, match=r"\$\.integration\.n_draws"):
            validate(minimal(integration={"method": "monte_carlo", "n_draws": -5}))

    def test_unknown_top_level_field(self):
        with pytest.raises(ConfigurationError):
            validate(minimal(colour="blue"))

    def test_unknown_check(self):
        with pytest.raises(ConfigurationError, match=r"\$\.checks\[0\]"):
            validate(minimal(checks=["thm99"]))

    def test_overrides(self):
        cfg = ExperimentConfig.from_dict(minimal()).with_overrides(seed=9, draws=1000, tolerance=0.05)
        assert cfg.seed == 9 and cfg.tol_rel == 0.05
        assert cfg.integration().n_draws == 1000
        assert cfg.integration().seed == 9

    def test_check_option_wins(self):
        doc = minimal(check_options={"thm2": {"integration": {"method": "monte_carlo", "n_draws": 10}}})
        cfg = ExperimentConfig.from_dict(doc)
        assert cfg.integration("thm2").n_draws == 10
        assert cfg.integration().method == "gauss_hermite"

    def test_hash_tracks_content(self):
        a = ExperimentConfig.from_dict(minimal())
        assert a.hash == ExperimentConfig.from_dict(minimal()).hash
        assert a.hash != a.with_overrides(seed=2).hash


def write(tmp_path, doc, name="exp.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


class TestCommandLine:
    def test_verify_writes_reports(self, tmp_path, capsys):
        code = cli.main(["verify", "--config", write(tmp_path, minimal()), "--out", str(tmp_path / "o")])
        assert code == cli.EXIT_OK
        doc = json.loads((tmp_path / "o" / "verify_mini.json").read_text())
        assert doc["n_reports"] == 2 and doc["n_fail"] == 0
        assert "PASS" in capsys.readouterr().out

    def test_schema_error_exit_code(self, tmp_path, capsys):
        bad = minimal(integration={"method": "monte_carlo", "n_draws": 0})
        code = cli.main(["verify", "--config", write(tmp_path, bad), "--out", str(tmp_path)])
        assert code == cli.EXIT_CONFIG
        assert "$.integration.n_draws" in capsys.readouterr().err

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        assert cli.main(["verify", "--config", str(path)]) == cli.EXIT_CONFIG

    def test_missing_file(self, tmp_path):
        assert cli.main(["verify", "--config", str(tmp_path / "nope.json")]) == cli.EXIT_CONFIG

    def test_wrong_family_is_config_error(self, tmp_path):
        doc = minimal(checks=["thm4"])
        assert cli.main(["verify", "--config", write(tmp_path, doc), "--out", str(tmp_path)]) == cli.EXIT_CONFIG

    def test_failing_check_exit_code(self, tmp_path):
        # Monte Carlo noise cannot meet near-zero tolerances
        doc = minimal(integration={"method": "monte_carlo", "n_draws": 2000},
                      tolerances={"rel": 1e-9, "k_se": 1e-6})
        assert cli.main(["verify", "--config", write(tmp_path, doc), "--out", str(tmp_path)]) == cli.EXIT_FAIL

    def test_bad_thread_setting(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.THREADS_ENV, "zero")
        assert cli.main(["verify", "--config", write(tmp_path, minimal()), "--out", str(tmp_path)]) == cli.EXIT_CONFIG

    def test_linear_control_subset(self, tmp_path):
        out = tmp_path / "nonid"
        assert cli.main(["verify", "--config", "ref_nonid", "--checks", "thm10", "--draws", "20000",
                         "--out", str(out)]) == cli.EXIT_OK
        doc = json.loads((out / "verify_ref_nonid.json").read_text())
        linear = [r for r in doc["reports"] if r["label"].endswith("[linear]")]
        assert linear and all(r["pass"] for r in linear)

    def test_simulate_and_report(self, tmp_path, capsys):
        doc = minimal(estimation={"design": "cross_section", "n": 500})
        path = write(tmp_path, doc)
        assert cli.main(["simulate", "--config", path, "--out", str(tmp_path)]) == cli.EXIT_OK
        lines = (tmp_path / "sample_mini.csv").read_text().splitlines()
        assert lines[0] == "x0,y" and len(lines) == 501
        cli.main(["verify", "--config", path, "--out", str(tmp_path)])
        assert cli.main(["report", str(tmp_path)]) == cli.EXIT_OK
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["n_fail"] == 0 and summary["runs"][0]["file"] == "verify_mini.json"

    def test_determinism_across_thread_counts(self, tmp_path, monkeypatch):
        outputs = []
        for threads in ("1", "4"):
            monkeypatch.setenv(cli.THREADS_ENV, threads)
            out = tmp_path / f"t{threads}"
            cli.main(["verify", "--config", "ref_binary", "--checks", "thm2,cor3", "--draws", "20000",
                      "--out", str(out)])
            outputs.append((out / "verify_ref_binary.csv").read_bytes())
        assert outputs[0] == outputs[1]

    def test_seed_changes_output(self, tmp_path):
        texts = []
        for seed in ("1", "2"):
            out = tmp_path / seed
            cli.main(["verify", "--config", "ref_binary", "--checks", "thm2", "--draws", "20000",
                      "--seed", seed, "--out", str(out)])
            texts.append((out / "verify_ref_binary.csv").read_text())
        assert texts[0] != texts[1]


def test_worker_count(monkeypatch):
    monkeypatch.setenv(cli.THREADS_ENV, "1")
    assert cli.worker_count() == 1
    monkeypatch.delenv(cli.THREADS_ENV)
    assert cli.worker_count() >= 1
    assert np.isscalar(cli.worker_count())
