"""
Command-line runs on tiny configs

Usage:
    pytest tests/test_cli.py -v
"""

import json
from pathlib import Path

import pandas as pd
import pytest
import yaml

from cli import EXIT_CHECKS_FAILED, RunConfig, main
from utils.errors import ValidationError


def _write_config(tmp_path: Path, data: dict) -> str:
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(data))
    return str(path)


def _run_dir(out: Path, command: str) -> Path:
    dirs = sorted(out.glob(f"{command}-*"))
    assert len(dirs) == 1
    return dirs[0]


def _summary(run_dir: Path) -> dict:
    return json.loads((run_dir / "summary.json").read_text())


SIMULATE = {
    "h1": 0.3, "h2": 0.7, "a1": 1.0, "a2": 0.5, "N": 64, "n_paths": 50,
    "drift": {"family": "bounded_sin", "amplitude": 0.5, "frequency": 1.0},
}


class TestRuns:
    def test_simulate(self, tmp_path):
        out = tmp_path / "runs"
        code = main(["simulate", "--config", _write_config(tmp_path, SIMULATE),
                     "--output-dir", str(out), "--quiet"])
        assert code == 0
        run_dir = _run_dir(out, "simulate")
        paths = pd.read_csv(run_dir / "paths.csv")
        assert list(paths.columns) == ["t", "X_1", "B1_1", "B2_1"]
        assert len(paths) == 65
        summary = _summary(run_dir)
        assert summary["passed"]
        assert set(summary["checks"]) == {"drift_admissible", "pathwise_bound", "holder_bound"}

    def test_runs_are_reproducible(self, tmp_path):
        out = tmp_path / "runs"
        args = ["simulate", "--config", _write_config(tmp_path, SIMULATE),
                "--output-dir", str(out), "--quiet", "--seed", "5"]
        assert main(args) == 0
        run_dir = _run_dir(out, "simulate")
        first = (run_dir / "summary.json").read_bytes()
        first_paths = (run_dir / "paths.csv").read_bytes()
        assert main(args) == 0
        assert _run_dir(out, "simulate") == run_dir
        assert (run_dir / "summary.json").read_bytes() == first
        assert (run_dir / "paths.csv").read_bytes() == first_paths

    def test_overrides_change_run_directory(self, tmp_path):
        out = tmp_path / "runs"
        config = _write_config(tmp_path, SIMULATE)
        main(["simulate", "--config", config, "--output-dir", str(out), "--quiet"])
        main(["simulate", "--config", config, "--output-dir", str(out), "--quiet",
              "--param", "drift.amplitude=0.25"])
        dirs = sorted(out.glob("simulate-*"))
        assert len(dirs) == 2
        resolved = [yaml.safe_load((d / "config.resolved.yaml").read_text()) for d in dirs]
        assert sorted(r["drift"]["amplitude"] for r in resolved) == [0.25, 0.5]

    def test_zero_drift_exactness(self, tmp_path):
        out = tmp_path / "runs"
        data = {**SIMULATE, "drift": {"family": "zero"}}
        assert main(["simulate", "--config", _write_config(tmp_path, data),
                     "--output-dir", str(out), "--quiet"]) == 0
        assert _summary(_run_dir(out, "simulate"))["checks"]["additive_exactness"]["passed"]

    def test_psi(self, tmp_path):
        out = tmp_path / "runs"
        data = {"h1": 0.3, "h2": 0.7, "a1": 1.0, "a2": 0.5, "N": 64,
                "params": {"h": "sin", "oracle_N": 64}}
        code = main(["psi", "--config", _write_config(tmp_path, data),
                     "--output-dir", str(out), "--quiet"])
        assert code in (0, EXIT_CHECKS_FAILED)
        run_dir = _run_dir(out, "psi")
        items = _summary(run_dir)["checks"]["AC5"]["items"]
        assert items[0]["passed"]
        assert items[1]["passed"]
        frame = pd.read_csv(run_dir / "psi.csv")
        assert list(frame.columns) == ["t", "abs_psi", "envelope"]

    def test_scaling_check(self, tmp_path):
        out = tmp_path / "runs"
        data = {"N": 128, "params": {"pairs": [[0.4, 0.4]], "T0_list": [0.5, 1.0, 2.0]}}
        assert main(["scaling-check", "--config", _write_config(tmp_path, data),
                     "--output-dir", str(out), "--quiet"]) == 0
        frame = pd.read_csv(_run_dir(out, "scaling-check") / "scaling.csv")
        assert len(frame) == 3

    def test_density_envelope_json(self, tmp_path):
        out = tmp_path / "runs"
        data = {"h1": 0.3, "h2": 0.7, "a1": 1.0, "a2": 0.5, "N": 16, "n_paths": 4000,
                "drift": {"family": "zero"},
                "params": {"T0_list": [1.0], "girsanov_paths": 8, "n_bootstrap": 4}}
        code = main(["density", "--config", _write_config(tmp_path, data),
                     "--output-dir", str(out), "--quiet"])
        assert code in (0, EXIT_CHECKS_FAILED)
        run_dir = _run_dir(out, "density")
        envelope = json.loads((run_dir / "envelope.json").read_text())
        assert set(envelope) == {"T0=1/kde", "T0=1/girsanov"}
        for entry in envelope.values():
            assert set(entry) == {"C1", "C2", "C1p", "C2p", "violation_fraction", "sigma2"}
        exact = envelope["T0=1/girsanov"]
        assert exact["violation_fraction"] == 0.0
        assert exact["C2"] == pytest.approx(0.5, rel=1e-6)
        assert exact["C2p"] == pytest.approx(0.5, rel=1e-6)
        assert exact["sigma2"] == envelope["T0=1/kde"]["sigma2"]
        points = pd.read_csv(run_dir / "points.csv")
        assert len(points) == 18

    def test_failed_check_exit_code(self, tmp_path):
        out = tmp_path / "runs"
        data = {**SIMULATE, "drift": {"family": "linear", "scale": 1.0}}
        code = main(["simulate", "--config", _write_config(tmp_path, data),
                     "--output-dir", str(out), "--quiet"])
        assert code == EXIT_CHECKS_FAILED
        assert not _summary(_run_dir(out, "simulate"))["passed"]


class TestErrors:
    def test_missing_config(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "nope.yaml"), "--quiet",
                     "--output-dir", str(tmp_path)]) == 1

    def test_unknown_key(self, tmp_path):
        assert main(["simulate", "--param", "colour=blue", "--quiet",
                     "--output-dir", str(tmp_path)]) == 1

    def test_bad_hurst(self, tmp_path):
        assert main(["simulate", "--param", "h1=1.5", "--quiet",
                     "--output-dir", str(tmp_path)]) == 1

    def test_equal_hurst_for_psi(self, tmp_path):
        assert main(["psi", "--param", "h1=0.4", "--param", "h2=0.4", "--param", "N=16",
                     "--quiet", "--output-dir", str(tmp_path)]) == 1

    def test_bad_param_format(self, tmp_path):
        assert main(["simulate", "--param", "h1", "--quiet",
                     "--output-dir", str(tmp_path)]) == 1

    def test_run_config_validation(self):
        with pytest.raises(ValidationError) as exc:
            RunConfig.from_dict("simulate", {"N": 4})
        assert exc.value.check == "config.N"
        with pytest.raises(ValidationError):
            RunConfig.from_dict("render", {})

    def test_toml_config(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text('N = 32\nn_paths = 20\n[drift]\nfamily = "zero"\n')
        assert main(["simulate", "--config", str(path), "--quiet",
                     "--output-dir", str(tmp_path / "runs")]) == 0
