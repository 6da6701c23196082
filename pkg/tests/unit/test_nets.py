"""
Unit tests for src/nets: U-net layout, parameters, OP banks and CFEs.
"""
import numpy as np
import pytest

from src.autodiff import ops
from src.autodiff.tape import Tape
from src.common.exceptions import ConfigurationError, MissingScaleError, ShapeMismatchError
from src.fields.grid import CenteredField, GridSpec, StaggeredField
from src.nets import (
    CFEModel,
    ForceEstimator,
    NetSpec,
    OPModelBank,
    ParamSet,
    Predictor,
    analytic_cfe_burger,
    bound_parameters,
    cfe_infer,
    forward,
    init_params,
    op_predict,
    parameter_count,
    scales_for,
    split_parameters,
    terminal_force_burger,
    zero_params,
)
from src.physics import BurgerState, BurgerSystem, DomainSpec, FluidSystem, burger_step

SMALL_1D = dict(levels=2, base_features=2, feature_cap=4, rank=1)
SMALL_2D = dict(levels=2, base_features=2, feature_cap=4)


@pytest.fixture
def rng():
    return np.random.default_rng(5)


def _randomised(spec, seed=1, shape=None):
    """Parameters with a non-zero head so the network output is non-trivial."""
    params = init_params(spec, seed, shape)
    rng = np.random.default_rng(seed)
    return params.replace({"head.w": rng.uniform(-0.3, 0.3, size=params["head.w"].shape)})


# -----------------------------------------------------------------------
# Network layout
# -----------------------------------------------------------------------

class TestNetSpec:
    """Layer bookkeeping of NetSpec"""

    def test_feature_widths_capped(self):
        """Test features double per level up to the cap"""
        spec = NetSpec(2, 1)
        assert [spec.features(level) for level in range(4)] == [4, 8, 16, 16]

    def test_padded_shape(self):
        """Test padding reaches a multiple of 2**levels with coarsest size >= 2"""
        spec = NetSpec(2, 1, levels=3)
        assert spec.padded_shape((8, 8)) == (16, 16)
        assert spec.padded_shape((20, 33)) == (24, 40)
        assert spec.level_shapes((20,))[-1] == (3,)

    def test_layer_shapes(self):
        """Test stem and head shapes follow channels and rank"""
        layers = NetSpec(4, 2).layer_shapes()
        assert layers["stem.w"] == (4, 4, 3, 3)
        assert layers["head.w"] == (2, 4, 3, 3)
        assert layers["enc1.down.w"] == (8, 4, 2, 2)
        assert layers["dec0.merge.w"] == (4, 12, 3, 3)
        assert "bottleneck.w" not in layers

    def test_bottleneck_needs_shape(self):
        """Test a dense bottleneck is sized from the input shape"""
        spec = NetSpec(2, 1, bottleneck=True)
        with pytest.raises(ConfigurationError):
            spec.layer_shapes()
        assert spec.layer_shapes((8, 8))["bottleneck.w"] == (64, 64)

    def test_invalid_specs_rejected(self):
        """Test impossible layouts raise"""
        with pytest.raises(ConfigurationError):
            NetSpec(2, 1, levels=0)
        with pytest.raises(ConfigurationError):
            NetSpec(0, 1)
        with pytest.raises(ConfigurationError):
            NetSpec(2, 1, rank=3)

    def test_parameter_count(self):
        """Test the count sums every layer"""
        spec = NetSpec(2, 1, **SMALL_1D)
        assert parameter_count(spec) == sum(a.size for a in zero_params(spec).values())


class TestParamSet:
    """Read-only parameter mappings"""

    def test_arrays_are_read_only(self):
        """Test stored arrays cannot be mutated"""
        params = init_params(NetSpec(2, 1, **SMALL_1D))
        with pytest.raises(ValueError):
            params["stem.w"][...] = 0.0

    def test_non_finite_rejected(self):
        """Test NaN parameters raise"""
        with pytest.raises(ConfigurationError):
            ParamSet({"w": np.array([np.nan])})

    def test_init_is_seeded_and_head_is_zero(self):
        """Test initialisation is reproducible with zero head and biases"""
        spec = NetSpec(2, 1, **SMALL_1D)
        a, b, c = init_params(spec, 3), init_params(spec, 3), init_params(spec, 4)
        np.testing.assert_array_equal(a["stem.w"], b["stem.w"])
        assert not np.array_equal(a["stem.w"], c["stem.w"])
        assert not a["head.w"].any()
        assert not any(a[name].any() for name in a if name.endswith(".b"))

    def test_bind_is_cached_per_tape(self):
        """Test binding twice to one tape records the leaves once"""
        params = init_params(NetSpec(2, 1, **SMALL_1D))
        tape = Tape()
        first = params.bind(tape)
        assert params.bind(tape) is first
        assert len(tape) == len(params)
        assert params.bind(Tape()) is not first

    def test_check(self):
        """Test layout validation against a spec"""
        spec = NetSpec(2, 1, **SMALL_1D)
        params = init_params(spec)
        params.check(spec)
        with pytest.raises(ShapeMismatchError):
            params.check(NetSpec(3, 1, **SMALL_1D))
        with pytest.raises(ShapeMismatchError):
            ParamSet({"stem.w": np.zeros(1)}).check(spec)

    def test_replace_returns_new_set(self):
        """Test replace leaves the original untouched"""
        params = init_params(NetSpec(2, 1, **SMALL_1D))
        updated = params.replace({"head.b": np.ones(1)})
        assert updated["head.b"][0] == 1.0
        assert params["head.b"][0] == 0.0


class TestForward:
    """U-net evaluation"""

    def test_untrained_network_outputs_zero(self, rng):
        """Test the zero head makes the output exactly 0"""
        spec = NetSpec(2, 3, **SMALL_2D)
        tape = Tape(enabled=False)
        x = tape.variable(rng.normal(size=(2, 6, 5)))
        out = forward(spec, init_params(spec).bind(tape), x)
        assert out.shape.dims == (3, 6, 5)
        assert not out.value.any()

    def test_output_shape_1d(self, rng):
        """Test 1D inputs are padded and cropped back"""
        spec = NetSpec(2, 1, **SMALL_1D)
        tape = Tape(enabled=False)
        out = forward(spec, _randomised(spec).bind(tape), tape.variable(rng.normal(size=(2, 13))))
        assert out.shape.dims == (1, 13)
        assert np.abs(out.value).max() > 0.0

    def test_bottleneck_forward(self, rng):
        """Test the dense bottleneck path evaluates"""
        spec = NetSpec(2, 1, bottleneck=True, **SMALL_2D)
        params = _randomised(spec, shape=(8, 8))
        tape = Tape(enabled=False)
        out = forward(spec, params.bind(tape), tape.variable(rng.normal(size=(2, 8, 8))))
        assert out.shape.dims == (1, 8, 8)

    def test_wrong_input_channels(self, rng):
        """Test mismatched channel counts raise"""
        spec = NetSpec(2, 1, **SMALL_2D)
        tape = Tape(enabled=False)
        with pytest.raises(ShapeMismatchError):
            forward(spec, init_params(spec).bind(tape), tape.variable(rng.normal(size=(3, 8, 8))))

    def test_parameter_gradients(self, rng):
        """Test every layer receives a gradient once the head is non-zero"""
        spec = NetSpec(2, 1, **SMALL_1D)
        params = _randomised(spec)
        tape = Tape()
        bound = params.bind(tape)
        out = forward(spec, bound, tape.variable(rng.normal(size=(2, 8))))
        grads = tape.backward(ops.sum_squares(out))
        assert np.abs(grads[bound["head.w"]]).max() > 0.0
        assert np.abs(grads[bound["stem.w"]]).max() > 0.0


# -----------------------------------------------------------------------
# Observation predictors
# -----------------------------------------------------------------------

class TestOPModelBank:
    """Per-scale OP banks"""

    def test_scales_are_powers_of_two(self):
        """Test create builds scales 2..horizon"""
        assert list(OPModelBank.create(16, NetSpec(2, 1, **SMALL_1D))) == [2, 4, 8, 16]
        assert list(OPModelBank.create(10, NetSpec(2, 1, **SMALL_1D))) == [2, 4, 8]
        assert list(scales_for(32)) == [2, 4, 8, 16, 32]

    def test_invalid_scale_rejected(self):
        """Test non power-of-two scales raise"""
        spec = NetSpec(2, 1, **SMALL_1D)
        with pytest.raises(ConfigurationError):
            OPModelBank({3: (spec, init_params(spec))})

    def test_wrong_channels_rejected(self):
        """Test an OP must map 2 channels to 1"""
        spec = NetSpec(3, 1, **SMALL_1D)
        with pytest.raises(ShapeMismatchError):
            OPModelBank({2: (spec, init_params(spec))})

    def test_missing_scale(self):
        """Test looking up an absent scale raises MissingScaleError"""
        with pytest.raises(MissingScaleError):
            OPModelBank.create(4, NetSpec(2, 1, **SMALL_1D))[8]

    def test_replace_keeps_other_scales(self):
        """Test replacing one scale leaves the rest"""
        spec = NetSpec(2, 1, **SMALL_1D)
        bank = OPModelBank.create(8, spec)
        new = zero_params(spec)
        replaced = bank.replace({4: new})
        assert replaced[4][1] is new
        assert replaced[2][1] is bank[2][1]

    def test_untrained_prediction_is_midpoint(self, rng):
        """Test an untrained OP predicts the average of its inputs"""
        grid = GridSpec((12,))
        bank = OPModelBank.create(4, NetSpec(2, 1, **SMALL_1D))
        a = CenteredField(grid, rng.normal(size=12))
        b = CenteredField(grid, rng.normal(size=12))
        np.testing.assert_allclose(op_predict(bank, 2, a, b).data, 0.5 * (a.data + b.data))

    def test_nonnegative_bank_clamps(self):
        """Test smoke predictions never go below zero"""
        grid = GridSpec((12,))
        bank = OPModelBank.create(2, NetSpec(2, 1, **SMALL_1D), nonnegative=True)
        low = CenteredField.full(grid, -1.0)
        assert op_predict(bank, 2, low, low).data.min() == 0.0

    def test_predictor_records_on_tape(self, rng):
        """Test the callable form works on taped observations"""
        grid = GridSpec((12,))
        predictor = Predictor(OPModelBank.create(2, NetSpec(2, 1, **SMALL_1D)))
        tape = Tape()
        a = tape.variable(CenteredField(grid, rng.normal(size=12)))
        b = tape.variable(CenteredField(grid, rng.normal(size=12)))
        grads = tape.backward(ops.total(predictor(2, a, b)))
        np.testing.assert_allclose(grads[a].data, 0.5)


# -----------------------------------------------------------------------
# Control force estimators
# -----------------------------------------------------------------------

class TestCFE:
    """CFE networks and the analytic Burger's estimator"""

    @pytest.mark.parametrize(
        "mode,channels_in,channels_out",
        [("burger", 2, 1), ("stream", 4, 1), ("direct", 4, 2), ("indirect", 4, 2)],
    )
    def test_create_channels(self, mode, channels_in, channels_out):
        """Test channel counts per control mode"""
        model = CFEModel.create(mode, levels=1)
        assert model.spec.in_channels == channels_in
        assert model.spec.out_channels == channels_out
        assert model.spec.rank == (1 if mode == "burger" else 2)
        assert model.mode == mode

    def test_invalid_mode_and_channels(self):
        """Test unknown modes and mismatched outputs raise"""
        with pytest.raises(ConfigurationError):
            CFEModel.create("teleport")
        spec = NetSpec(4, 1, levels=1)
        with pytest.raises(ShapeMismatchError):
            CFEModel(spec, init_params(spec), mode="direct")

    def test_untrained_direct_cfe_is_zero(self, rng):
        """Test an untrained CFE yields a zero staggered force"""
        grid = GridSpec((8, 8))
        model = CFEModel.create("direct", levels=1)
        tape = Tape(enabled=False)
        rho = tape.variable(CenteredField(grid, rng.uniform(size=grid.dims)))
        v = tape.variable(StaggeredField.zeros(grid))
        force = cfe_infer(model, rho, rho, v).value
        assert isinstance(force, StaggeredField)
        assert force.max_abs() == 0.0

    def test_indirect_needs_control_faces(self, rng):
        """Test indirect inference without a mask raises"""
        grid = GridSpec((8, 8))
        tape = Tape(enabled=False)
        rho = tape.variable(CenteredField.zeros(grid))
        v = tape.variable(StaggeredField.zeros(grid))
        with pytest.raises(ConfigurationError):
            cfe_infer(CFEModel.create("indirect", levels=1), rho, rho, v)

    def test_analytic_burger(self):
        """Test F = (o_next - u) / dt"""
        grid = GridSpec((4,))
        u = CenteredField(grid, [0.0, 1.0, 2.0, 3.0])
        target = CenteredField.full(grid, 1.0)
        np.testing.assert_allclose(analytic_cfe_burger(u, target, 2.0).data, [0.5, 0.0, -0.5, -1.0])
        with pytest.raises(ConfigurationError):
            analytic_cfe_burger(u, target, 0.0)

    def test_terminal_force_lands_on_target(self, rng):
        """Test the exact terminal force reaches the target in one step"""
        system = BurgerSystem(GridSpec((16,)))
        u = CenteredField(system.spec, np.sin(np.linspace(0, np.pi, 16)))
        target = CenteredField(system.spec, rng.normal(size=16))
        force = terminal_force_burger(system, u, target)
        reached = burger_step(BurgerState(u), force, system.dt, system.nu).u
        np.testing.assert_allclose(reached.data, target.data, atol=1e-10)


class TestForceEstimator:
    """Estimator construction and dispatch"""

    def test_fluid_requires_model(self):
        """Test fluid systems without a network raise"""
        system = FluidSystem(DomainSpec.closed_box(GridSpec((8, 8))))
        with pytest.raises(ConfigurationError):
            ForceEstimator(system)

    def test_exact_terminal_burger_only(self):
        """Test the exact terminal rule is rejected for fluids"""
        system = FluidSystem(DomainSpec.closed_box(GridSpec((8, 8))))
        with pytest.raises(ConfigurationError):
            ForceEstimator(system, CFEModel.create("stream", levels=1), exact_terminal=True)

    def test_analytic_default_for_burger(self, rng):
        """Test a Burger's estimator without a model uses the analytic rule"""
        system = BurgerSystem(GridSpec((8,)))
        estimator = ForceEstimator(system)
        tape = Tape(enabled=False)
        u = tape.variable(CenteredField(system.spec, rng.normal(size=8)))
        target = tape.variable(CenteredField(system.spec, rng.normal(size=8)))
        force = estimator((u,), target, 0, 4).value
        np.testing.assert_allclose(force.data, (target.value.data - u.value.data) / system.dt)

    def test_exact_terminal_last_step(self, rng):
        """Test the last step switches to the terminal force"""
        system = BurgerSystem(GridSpec((8,)))
        estimator = ForceEstimator(system, exact_terminal=True)
        tape = Tape(enabled=False)
        u_value = CenteredField(system.spec, 0.5 * rng.normal(size=8))
        target_value = CenteredField(system.spec, rng.normal(size=8))
        force = estimator((tape.variable(u_value),), tape.variable(target_value), 3, 4).value
        expected = terminal_force_burger(system, u_value, target_value)
        np.testing.assert_allclose(force.data, expected.data)


class TestParameterNaming:
    """Flat parameter naming shared by training and checkpoints"""

    def test_bound_and_split_round_trip(self):
        """Test op<n>/ and cfe/ keys split back into groups"""
        bank = OPModelBank.create(4, NetSpec(2, 1, **SMALL_1D))
        cfe = CFEModel.create("burger", levels=1)
        bound = bound_parameters(Tape(), bank, cfe)
        assert any(key.startswith("op2/") for key in bound)
        assert any(key.startswith("cfe/") for key in bound)
        by_scale, cfe_arrays = split_parameters(bound)
        assert sorted(by_scale) == [2, 4]
        assert set(by_scale[2]) == set(bank[2][1])
        assert set(cfe_arrays) == set(cfe.params)
