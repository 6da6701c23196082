"""
Unit tests for the shape library.
"""
import numpy as np
import pytest

from src.common.exceptions import ConfigurationError, ShapeMismatchError
from src.data.shapes import ShapeLibrary, normalize_mass
from src.fields.grid import GridSpec


@pytest.fixture
def spec():
    return GridSpec((32, 32))


class TestRasterize:
    """Shape indicators on a grid"""

    def test_ten_shapes(self):
        """Test the library holds ten named shapes"""
        assert len(ShapeLibrary.names()) == 10
        assert "disk" in ShapeLibrary.names()

    @pytest.mark.parametrize("name", ShapeLibrary.names())
    @pytest.mark.parametrize("size", [4.0, 9.0])
    def test_shapes_cover_cells(self, spec, name, size):
        """Test every shape is a non-empty 0/1 mask within its extent"""
        mask = ShapeLibrary.rasterize(name, spec, (16.0, 16.0), size)
        assert mask.shape == spec.dims
        assert mask.sum() > 0
        assert set(np.unique(mask)) <= {0.0, 1.0}
        xs, ys = np.nonzero(mask)
        assert np.all(np.abs(xs + 0.5 - 16.0) <= size / 2)
        assert np.all(np.abs(ys + 0.5 - 16.0) <= size / 2)

    def test_disk_is_symmetric(self, spec):
        """Test a disk centred on a vertex is mirror symmetric"""
        mask = ShapeLibrary.rasterize("disk", spec, (16.0, 16.0), 8.0)
        np.testing.assert_array_equal(mask, mask[::-1, :])
        np.testing.assert_array_equal(mask, mask.T)

    def test_errors(self, spec):
        """Test invalid grids, names and sizes"""
        with pytest.raises(ShapeMismatchError):
            ShapeLibrary.rasterize("disk", GridSpec((16,)), (8.0,), 4.0)
        with pytest.raises(ConfigurationError):
            ShapeLibrary.rasterize("hexagon", spec, (16.0, 16.0), 4.0)
        with pytest.raises(ConfigurationError):
            ShapeLibrary.rasterize("disk", spec, (16.0, 16.0), 0.0)


class TestSampling:
    """Random shape placement"""

    def test_mass_and_meta(self, spec):
        """Test a sampled density carries exactly the requested mass"""
        rng = np.random.default_rng(1)
        density, meta = ShapeLibrary.sample(rng, spec, (4.0, 8.0), 40.0)
        assert density.total() == pytest.approx(40.0)
        assert meta["shape"] in ShapeLibrary.names()
        assert 4.0 <= meta["size"] <= 8.0
        assert len(meta["center"]) == 2

    def test_named_and_seeded(self, spec):
        """Test the same seed reproduces the same shape"""
        first, _ = ShapeLibrary.sample(np.random.default_rng(5), spec, (4.0, 8.0), 10.0, "ring")
        second, meta = ShapeLibrary.sample(np.random.default_rng(5), spec, (4.0, 8.0), 10.0, "ring")
        assert meta["shape"] == "ring"
        np.testing.assert_array_equal(first.data, second.data)

    def test_shapes_stay_off_the_border(self, spec):
        """Test sampled shapes leave the outermost cell ring empty"""
        rng = np.random.default_rng(2)
        for _ in range(20):
            density, _ = ShapeLibrary.sample(rng, spec, (4.0, 10.0), 1.0)
            data = density.data
            border = (data[0, :], data[-1, :], data[:, 0], data[:, -1])
            assert all(edge.sum() == 0.0 for edge in border)

    def test_too_large(self):
        """Test a shape that cannot fit raises"""
        with pytest.raises(ConfigurationError):
            ShapeLibrary.placement_bounds(GridSpec((8, 8)), 20.0)

    def test_normalize_mass(self):
        """Test scaling honours the cell volume and rejects empty input"""
        scaled = normalize_mass(np.ones((2, 2)), 2.0, cell_volume=0.25)
        assert scaled.sum() * 0.25 == pytest.approx(2.0)
        with pytest.raises(ConfigurationError):
            normalize_mass(np.zeros((2, 2)), 1.0)
