"""
Unit tests for dataset generation.

Grids and example counts are kept tiny; the natural-flow generator runs a
short fluid rollout and is the slowest case here.
"""
import numpy as np
import pytest

from src.common.exceptions import ConfigurationError
from src.data.generate import (
    bucket_masks,
    burger_example,
    example_rng,
    fluid_domain,
    fluid_indirect_example,
    fluid_natural_example,
    fluid_shapes_example,
    gen_burger,
    gen_fluid_shapes,
    generate,
    indirect_domain,
)
from src.data.manifest import default_manifest, load_manifest
from src.data.pdtf import read_tensor
from src.fields.grid import GridSpec
from src.physics.solver import default_viscosity


@pytest.fixture
def burger():
    return default_manifest("burger", dims=(16,), steps=4, counts={"train": 2, "test": 1}, seed=11)


@pytest.fixture
def shapes():
    return default_manifest("fluid_shapes", dims=(16, 16), counts={"train": 2, "test": 1}, seed=4)


@pytest.fixture
def indirect():
    return default_manifest("fluid_indirect", counts={"train": 2, "test": 1}, seed=9)


class TestExampleStreams:
    """Per-example random streams"""

    def test_streams_are_reproducible(self):
        """Test one (seed, index) pair always gives the same draws"""
        first = example_rng(3, 5).normal(size=4)
        np.testing.assert_array_equal(first, example_rng(3, 5).normal(size=4))

    def test_streams_are_independent(self):
        """Test different indices and seeds give different draws"""
        base = example_rng(3, 5).normal(size=4)
        assert not np.allclose(base, example_rng(3, 6).normal(size=4))
        assert not np.allclose(base, example_rng(4, 5).normal(size=4))


class TestBurgerGenerator:
    """Burger's examples"""

    def test_rollout_and_target(self, burger):
        """Test the stored rollout has steps + 1 frames ending at the target"""
        example = burger_example(burger, 0)
        u = example.sequences["u"]
        assert len(u) == burger.steps + 1
        np.testing.assert_array_equal(example.values["target"].data, u[-1].data)
        peak = np.abs(example.values["force"].data).max()
        assert example.meta["force_peak"] == pytest.approx(peak)

    def test_deterministic(self, burger):
        """Test an example depends only on the manifest and its index"""
        a = burger_example(burger, 2).sequences["u"][-1].data
        b = burger_example(burger, 2).sequences["u"][-1].data
        np.testing.assert_array_equal(a, b)


class TestFluidGenerators:
    """Natural flow, shape pairs and indirect control"""

    def test_natural_flow(self):
        """Test the rollout shapes and non-negative density"""
        manifest = default_manifest(
            "fluid_natural", dims=(16, 16), steps=2, counts={"train": 1, "test": 0}, seed=2
        )
        example = fluid_natural_example(manifest, 0)
        density = example.sequences["density"]
        assert len(density) == 3
        assert len(example.sequences["velocity"]) == 3
        assert density[0].data.min() >= 0.0
        assert example.meta["mass_initial"] <= example.meta["mass_sampled"] + 1e-9
        assert example.values["target"] is density[-1]

    def test_shape_pairs_match_mass(self, shapes):
        """Test initial and target shapes carry the configured mass"""
        example = fluid_shapes_example(shapes, 0)
        mass = shapes.params["mass"]
        assert example.values["density0"].total() == pytest.approx(mass)
        assert example.values["target"].total() == pytest.approx(mass)
        assert len(example.meta["shapes"]) == 1

    def test_multishape_parts(self, shapes):
        """Test several shapes are stored individually and as a sum"""
        manifest = shapes.model_copy(update={"shapes_per_example": 2})
        example = fluid_shapes_example(manifest, 0)
        parts = example.values["density0_0"].data + example.values["density0_1"].data
        np.testing.assert_allclose(example.values["density0"].data, parts)
        assert example.values["target"].total() == pytest.approx(2 * shapes.params["mass"])

    def test_indirect_target_in_bucket(self, indirect):
        """Test the target lies inside the chosen bucket with the blob's mass"""
        example = fluid_indirect_example(indirect, 0)
        region = bucket_masks(indirect)[example.meta["bucket"]]
        target = example.values["target"].data
        assert target[~region].sum() == 0.0
        assert example.values["target"].total() == pytest.approx(example.values["density0"].total())

    def test_indirect_blob_avoids_control(self, indirect):
        """Test the initial blob starts outside the control region and buckets"""
        domain, buckets = indirect_domain(indirect.grid, indirect.params)
        for index in range(3):
            blob = fluid_indirect_example(indirect, index).values["density0"].data > 0
            assert blob.any()
            assert not np.any(blob & domain.control)
            assert not np.any(blob & np.any(buckets, axis=0))


class TestDomains:
    """Geometry derived from manifests"""

    def test_indirect_layout(self, indirect):
        """Test three disjoint buckets, walls between them and an open top"""
        domain, buckets = indirect_domain(indirect.grid, indirect.params)
        assert len(buckets) == 3
        assert not np.any(buckets[0] & buckets[1])
        assert domain.obstacle.sum() > 0
        assert not np.any(domain.obstacle & domain.control)
        assert not np.any(np.any(buckets, axis=0) & domain.control)

    def test_indirect_grid_too_small(self):
        """Test a grid without room for the buckets raises"""
        with pytest.raises(ConfigurationError):
            indirect_domain(GridSpec((8, 8)), {})

    def test_buckets_only_for_indirect(self, shapes):
        """Test other experiments have no buckets"""
        with pytest.raises(ConfigurationError):
            bucket_masks(shapes)

    def test_domain_kinds(self, shapes):
        """Test natural flow is open at the top and shapes are closed"""
        natural = default_manifest("fluid_natural", dims=(16, 16))
        assert fluid_domain(natural).open_faces.components[1][:, -1].all()
        assert not fluid_domain(shapes).open_faces.components[1][:, -1].any()


class TestWriters:
    """Datasets written to disk"""

    def test_burger_dataset(self, tmp_path, burger):
        """Test the written manifest lists every example with checksums"""
        manifest = gen_burger(burger, tmp_path)
        assert [e.name for e in manifest.examples] == ["ex0", "ex1", "ex2"]
        assert [e.split for e in manifest.examples] == ["train", "train", "test"]
        assert manifest.nu == pytest.approx(default_viscosity(burger.grid, burger.dt))
        assert manifest.spacing == (1.0,)
        assert load_manifest(tmp_path) == manifest
        assert read_tensor(tmp_path / "ex0" / "u.pdtf").shape == (5, 16)

    def test_same_seed_same_files(self, tmp_path, shapes):
        """Test generation is reproducible and independent of the worker count"""
        first = gen_fluid_shapes(shapes, tmp_path / "a")
        second = gen_fluid_shapes(shapes, tmp_path / "b", workers=2)
        digests = lambda m: [(f.path, f.sha256) for e in m.examples for f in e.files]
        assert digests(first) == digests(second)
        assert first.domain is not None

    def test_kind_mismatch(self, tmp_path, shapes):
        """Test a gen_* helper refuses another experiment's manifest"""
        with pytest.raises(ConfigurationError):
            gen_burger(shapes, tmp_path)

    def test_generate_replaces_listing(self, tmp_path, burger):
        """Test regenerating over an existing listing starts from scratch"""
        manifest = generate(burger, tmp_path)
        again = generate(manifest, tmp_path)
        assert len(again.examples) == 3
