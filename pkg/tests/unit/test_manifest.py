"""
Unit tests for experiment manifests.
"""
import json

import numpy as np
import pytest
from pydantic import ValidationError

from config.settings import settings
from src.common.exceptions import ConfigurationError, DatasetError
from src.data.manifest import (
    EXPERIMENTS,
    MANIFEST_NAME,
    ExampleEntry,
    ExperimentManifest,
    FileEntry,
    default_manifest,
    load_manifest,
    manifest_path,
    verify_files,
    write_manifest,
)
from src.data.pdtf import write_tensor


def _listed(tmp_path, manifest, names=("ex0", "ex1", "ex2")):
    """Write one tensor per example and list it in ``manifest``."""
    examples = []
    for k, name in enumerate(names):
        digest = write_tensor(tmp_path / name / "u.pdtf", np.full(4, float(k)))
        split = "train" if k < manifest.counts.train else "test"
        files = [FileEntry(path=f"{name}/u.pdtf", sha256=digest)]
        examples.append(ExampleEntry(name=name, split=split, files=files))
    return manifest.model_copy(update={"examples": examples})


@pytest.fixture
def burger():
    return default_manifest("burger", dims=(8,), steps=4, counts={"train": 2, "test": 1})


class TestDefaults:
    """Generation requests built from defaults"""

    @pytest.mark.parametrize("experiment", EXPERIMENTS)
    def test_every_experiment_has_defaults(self, experiment):
        """Test each experiment yields a valid request"""
        manifest = default_manifest(experiment)
        assert manifest.experiment == experiment
        assert manifest.name == experiment
        assert manifest.dt == settings.solver.dt
        assert manifest.grid.rank == (1 if experiment == "burger" else 2)
        assert not manifest.generated

    def test_known_values(self):
        """Test the desk-scale sizes"""
        assert default_manifest("burger").counts.total == 80
        natural = default_manifest("fluid_natural")
        assert natural.steps == 64
        assert natural.buoyancy == (0.0, 0.0)
        assert default_manifest("fluid_indirect").counts.train == 360

    def test_overrides_and_params_merge(self):
        """Test top-level overrides replace and params merge"""
        manifest = default_manifest(
            "fluid_shapes", name="tiny", seed=3, dims=(16, 16), params={"mass": 10.0}
        )
        assert manifest.name == "tiny"
        assert manifest.seed == 3
        assert manifest.dims == (16, 16)
        assert manifest.params["mass"] == 10.0
        assert manifest.params["size_min"] == 4.0

    def test_unknown_experiment(self):
        """Test an unknown experiment name raises ConfigurationError"""
        with pytest.raises(ConfigurationError):
            default_manifest("plasma")

    def test_invalid_override(self):
        """Test invalid values are reported as ConfigurationError"""
        with pytest.raises(ConfigurationError):
            default_manifest("burger", dims=(8, 8))
        with pytest.raises(ConfigurationError):
            default_manifest("burger", dt=0.0)


class TestValidation:
    """Cross-field checks on manifests"""

    def test_listing_must_match_counts(self, tmp_path, burger):
        """Test split counts must agree with the listed examples"""
        listed = _listed(tmp_path, burger)
        payload = listed.model_dump()
        payload["counts"] = {"train": 3, "test": 0}
        with pytest.raises(ValidationError):
            ExperimentManifest(**payload)

    def test_duplicate_names(self, tmp_path, burger):
        """Test duplicate example names are rejected"""
        payload = _listed(tmp_path, burger).model_dump()
        payload["examples"][1]["name"] = "ex0"
        with pytest.raises(ValidationError):
            ExperimentManifest(**payload)

    def test_checksum_pattern(self):
        """Test sha256 must be 64 lowercase hex digits"""
        with pytest.raises(ValidationError):
            FileEntry(path="a.pdtf", sha256="xyz")

    def test_lookup(self, tmp_path, burger):
        """Test splits and name lookup"""
        listed = _listed(tmp_path, burger)
        assert listed.generated
        assert [e.name for e in listed.split("test")] == ["ex2"]
        assert listed.example("ex1").split == "train"
        with pytest.raises(DatasetError):
            listed.example("ex9")


class TestPersistence:
    """Writing, loading and verifying manifests"""

    def test_round_trip(self, tmp_path, burger):
        """Test a written manifest loads back equal"""
        listed = _listed(tmp_path, burger)
        path = write_manifest(tmp_path, listed)
        assert path.name == MANIFEST_NAME
        assert manifest_path(tmp_path) == path
        assert manifest_path(path) == path
        assert load_manifest(tmp_path) == listed

    def test_missing_manifest(self, tmp_path):
        """Test a directory without a manifest raises DatasetError"""
        with pytest.raises(DatasetError):
            load_manifest(tmp_path)

    def test_invalid_json(self, tmp_path):
        """Test unparseable or invalid documents raise DatasetError"""
        (tmp_path / MANIFEST_NAME).write_text("{not json")
        with pytest.raises(DatasetError):
            load_manifest(tmp_path)
        (tmp_path / MANIFEST_NAME).write_text(json.dumps({"name": "x"}))
        with pytest.raises(DatasetError):
            load_manifest(tmp_path)

    def test_missing_file(self, tmp_path, burger):
        """Test a listed file that does not exist fails verification"""
        listed = _listed(tmp_path, burger)
        (tmp_path / "ex1" / "u.pdtf").unlink()
        with pytest.raises(DatasetError):
            verify_files(tmp_path, listed)

    def test_checksum_mismatch(self, tmp_path, burger):
        """Test a modified file fails verification but loads without verify"""
        listed = _listed(tmp_path, burger)
        write_manifest(tmp_path, listed)
        write_tensor(tmp_path / "ex0" / "u.pdtf", np.full(4, 7.0))
        with pytest.raises(DatasetError):
            load_manifest(tmp_path)
        assert load_manifest(tmp_path, verify=False).name == "burger"
