"""
Unit tests for the diffctl command-line surface.
"""
import json
from pathlib import Path

import numpy as np
import pytest

from src.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, build_parser, main
from src.cli.commands import time_inference
from src.cli.config import RunConfig
from src.common.exceptions import ConfigurationError
from src.data.manifest import load_manifest
from src.data.outputs import read_pgm
from src.data.pdtf import read_tensor, write_tensor


@pytest.fixture(scope="module")
def burger_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "burger"
    code = main([
        "gen", "--experiment", "burger", "--out", str(root),
        "--steps", "4", "--train-count", "2", "--test-count", "1", "--seed", "5",
    ])
    assert code == EXIT_OK
    return root


class TestParser:
    """Argument parsing"""

    def test_repeated_init(self):
        """Test --init may be given several times"""
        args = build_parser().parse_args(
            ["train", "--manifest", "m", "--out", "o", "--init", "a", "--init", "b"]
        )
        assert args.init == [Path("a"), Path("b")]
        assert args.stage is None

    def test_eval_schemes(self):
        """Test eval accepts several schemes"""
        argv = ["eval", "--manifest", "m", "--out", "o", "--schemes", "chain", "refined"]
        args = build_parser().parse_args(argv)
        assert args.schemes == ["chain", "refined"]

    def test_usage_errors(self):
        """Test usage errors exit with 2 and --help with 0"""
        assert main([]) == EXIT_USAGE
        assert main(["fly", "--out", "x"]) == EXIT_USAGE
        assert main(["gen", "--experiment", "plasma", "--out", "x"]) == EXIT_USAGE
        assert main(["--help"]) == EXIT_OK


class TestRunConfig:
    """Validation of one invocation"""

    def test_defaults(self, tmp_path):
        """Test unset options fall back to field defaults"""
        config = RunConfig.from_args(command="gen", experiment="burger", out=tmp_path, seed=None)
        assert config.seed == 0
        assert config.scheme == "staggered"
        assert "seed" not in config.model_fields_set

    def test_gen_needs_source(self, tmp_path):
        """Test gen requires an experiment or a manifest"""
        with pytest.raises(ConfigurationError):
            RunConfig.from_args(command="gen", out=tmp_path)

    def test_commands_need_manifest(self, tmp_path):
        """Test dataset commands require an existing manifest"""
        with pytest.raises(ConfigurationError):
            RunConfig.from_args(command="train", out=tmp_path)
        with pytest.raises(ConfigurationError):
            RunConfig.from_args(command="shoot", out=tmp_path, manifest=tmp_path / "missing")

    def test_missing_inputs(self, tmp_path):
        """Test checkpoints and render inputs must exist"""
        manifest = tmp_path / "manifest.json"
        manifest.write_text("{}")
        with pytest.raises(ConfigurationError):
            RunConfig.from_args(command="eval", manifest=manifest, init=[tmp_path / "nope"])
        with pytest.raises(ConfigurationError):
            RunConfig.from_args(command="render", out=tmp_path)

    def test_invalid_values(self, tmp_path):
        """Test field constraints and unknown names"""
        with pytest.raises(ConfigurationError):
            RunConfig.from_args(command="gen", experiment="burger", seed=-1)
        with pytest.raises(ConfigurationError):
            RunConfig.from_args(command="gen", experiment="burger", scheme="zigzag")
        with pytest.raises(ConfigurationError):
            RunConfig.from_args(command="gen", experiment="plasma")


class TestTiming:
    """Median inference timing"""

    def test_call_counts(self):
        """Test warm-up and timed calls are all made"""
        calls = []
        median, result = time_inference(
            lambda: calls.append(1) or len(calls), warmups=2, repetitions=3
        )
        assert len(calls) == 5
        assert result == 5
        assert median >= 0.0

    def test_timed_runs_feed_latency_histogram(self, mocker):
        """Test each timed repetition is observed once"""
        observe = mocker.patch("src.monitoring.metrics.MetricsCollector.observe_inference_latency")
        time_inference(lambda: None, warmups=1, repetitions=4)
        assert observe.call_count == 4

    def test_needs_repetitions(self):
        """Test zero repetitions are rejected"""
        with pytest.raises(ConfigurationError):
            time_inference(lambda: None, repetitions=0)


class TestCommands:
    """Subcommands on a small generated dataset"""

    def test_gen_writes_manifest(self, burger_dataset):
        """Test the generated dataset honours the overrides"""
        manifest = load_manifest(burger_dataset)
        assert manifest.name == "burger"
        assert manifest.steps == 4
        assert manifest.seed == 5
        assert (manifest.counts.train, manifest.counts.test) == (2, 1)

    def test_reconstruct_chain(self, burger_dataset, tmp_path):
        """Test an analytic CFE chain reaches the target and writes its outputs"""
        out = tmp_path / "rec"
        code = main([
            "reconstruct", "--manifest", str(burger_dataset), "--out", str(out),
            "--scheme", "chain",
        ])
        assert code == EXIT_OK
        report = json.loads((out / "report.json").read_text())
        assert report["example"] == "ex2"
        assert report["counts"] == {"op": 0, "cfe": 4, "solver": 4}
        assert report["counts"] == report["expected_counts"]
        assert report["terminal_error"] <= 1e-10
        assert read_tensor(out / "observations.pdtf").shape == (5, 32)
        assert read_tensor(out / "controls.pdtf").shape == (4, 32)
        assert len((out / "trace.txt").read_text().splitlines()) == 8

    def test_scheme_without_predictors_fails(self, burger_dataset, tmp_path):
        """Test a predictor scheme without a checkpoint exits with 1"""
        code = main(
            ["reconstruct", "--manifest", str(burger_dataset), "--out", str(tmp_path / "r")]
        )
        assert code == EXIT_FAILURE

    def test_unknown_example_fails(self, burger_dataset, tmp_path):
        """Test an unknown example name exits with 1"""
        code = main([
            "reconstruct", "--manifest", str(burger_dataset), "--out", str(tmp_path / "r"),
            "--scheme", "chain", "--example", "ex99",
        ])
        assert code == EXIT_FAILURE

    def test_missing_manifest_fails(self, tmp_path):
        """Test a missing manifest exits with 1"""
        code = main(["shoot", "--manifest", str(tmp_path / "none"), "--out", str(tmp_path)])
        assert code == EXIT_FAILURE

    def test_render(self, tmp_path):
        """Test one frame per leading index of a 3D tensor"""
        write_tensor(tmp_path / "rho.pdtf", np.random.default_rng(0).random((3, 4, 5)))
        write_tensor(tmp_path / "u.pdtf", np.linspace(0.0, 1.0, 6))
        code = main([
            "render", str(tmp_path / "rho.pdtf"), str(tmp_path / "u.pdtf"),
            "--out", str(tmp_path / "img"),
        ])
        assert code == EXIT_OK
        frames = sorted(p.name for p in (tmp_path / "img").glob("*.pgm"))
        assert frames == ["rho_000.pgm", "rho_001.pgm", "rho_002.pgm", "u_000.pgm"]
        assert read_pgm(tmp_path / "img" / "rho_000.pgm").shape == (5, 4)
        assert read_pgm(tmp_path / "img" / "u_000.pgm").shape == (1, 6)
