"""
Unit tests for src/control: execution schemes, traces and invocation counts.

The schemes run on a small Burger's system with the analytic force estimator
and a midpoint predictor, so no network is involved.
"""
import numpy as np
import pytest

from src.autodiff import ops
from src.autodiff.tape import Tape
from src.common.exceptions import FormatError, SchemeError, ShapeMismatchError
from src.control import (
    SCHEMES,
    Event,
    SchemeTrace,
    Trajectory,
    center_of_mass,
    check_horizon,
    compose_multishape,
    count_ops,
    execute,
    follow_predictions,
    hierarchical_predict,
    multishape_execute,
    reconstruct_values,
    straight_line_predictions,
    sum_predictions,
)
from src.fields.grid import CenteredField, GridSpec
from src.nets import ForceEstimator
from src.physics import BurgerSystem

HORIZONS = [1, 2, 4, 8, 16, 32]


def midpoint(n, o_i, o_j):
    return ops.scale(ops.add(o_i, o_j), 0.5)


@pytest.fixture
def system():
    return BurgerSystem(GridSpec((8,)))


@pytest.fixture
def endpoints(system):
    x = np.linspace(0.0, np.pi, 8)
    return CenteredField(system.spec, 0.3 * np.sin(x)), CenteredField(system.spec, -0.2 * np.cos(x))


# -----------------------------------------------------------------------
# Traces
# -----------------------------------------------------------------------

class TestSchemeTrace:
    """Trace recording, validation and text form"""

    def test_counts_and_scales(self):
        """Test counts tally events by kind"""
        trace = SchemeTrace()
        trace.op(4, 2)
        trace.op(2, 1)
        trace.cfe(0)
        trace.solver(0)
        assert trace.counts() == (2, 1, 1)
        assert trace.op_scales() == {4: 1, 2: 1}

    def test_text_round_trip(self):
        """Test to_text/from_text preserve every event"""
        trace = SchemeTrace()
        trace.op(2, 1)
        trace.cfe(0)
        trace.solver(0)
        text = trace.to_text()
        assert text.splitlines()[0] == "EVENT OP 1 2"
        assert SchemeTrace.from_text(text).events == trace.events

    @pytest.mark.parametrize(
        "line", ["EVENT OP 1", "EVT CFE 0 1", "EVENT FOO 0 1", "EVENT CFE x 1"]
    )
    def test_malformed_lines(self, line):
        """Test malformed trace lines raise FormatError"""
        with pytest.raises(FormatError):
            Event.from_line(line)

    def test_solver_needs_preceding_cfe(self):
        """Test a solver step without its CFE is rejected"""
        trace = SchemeTrace()
        trace.solver(0)
        with pytest.raises(SchemeError):
            trace.validate(1)

    def test_solver_steps_must_cover_horizon(self):
        """Test missing or out-of-order steps are rejected"""
        trace = SchemeTrace()
        for t in (1, 0):
            trace.cfe(t)
            trace.solver(t)
        with pytest.raises(SchemeError):
            trace.validate(2)


class TestCountOps:
    """Closed-form invocation counts"""

    def test_known_values(self):
        """Test counts for n = 8"""
        assert count_ops(8, "chain") == (0, 8, 8)
        assert count_ops(8, "two_stage") == (7, 8, 8)
        assert count_ops(8, "staggered") == (7, 8, 8)
        assert count_ops(8, "refined") == (15, 8, 8)

    @pytest.mark.parametrize("n", [0, 3, 12, -4])
    def test_horizon_must_be_power_of_two(self, n):
        """Test invalid horizons raise SchemeError"""
        with pytest.raises(SchemeError):
            check_horizon(n)

    def test_unknown_scheme(self):
        """Test unknown scheme names raise"""
        with pytest.raises(SchemeError):
            count_ops(4, "sideways")


# -----------------------------------------------------------------------
# Schemes
# -----------------------------------------------------------------------

class TestSchemes:
    """Execution schemes on a Burger's system"""

    @pytest.mark.parametrize("scheme", SCHEMES)
    @pytest.mark.parametrize("n", HORIZONS)
    def test_counts_match_closed_form(self, system, endpoints, scheme, n):
        """Test every scheme issues exactly the closed-form number of calls"""
        u0, target = endpoints
        estimator = ForceEstimator(system)
        trajectory = reconstruct_values(scheme, system, (u0,), target, n, estimator, midpoint)
        assert trajectory.trace.counts() == count_ops(n, scheme)
        assert trajectory.horizon == n
        assert len(trajectory.state_values()) == n + 1
        trajectory.trace.validate(n)

    @pytest.mark.parametrize("scheme", SCHEMES)
    def test_exact_terminal_reaches_target(self, system, endpoints, scheme):
        """Test the exact terminal rule lands on the target"""
        u0, target = endpoints
        cfe = ForceEstimator(system, exact_terminal=True)
        trajectory = reconstruct_values(scheme, system, (u0,), target, 8, cfe, midpoint)
        final = trajectory.state_values()[-1][0]
        assert np.abs(final.data - target.data).max() <= 1e-10

    def test_refined_scales(self, system, endpoints):
        """Test refinement uses only scales up to the horizon"""
        u0, target = endpoints
        estimator = ForceEstimator(system)
        trajectory = reconstruct_values("refined", system, (u0,), target, 16, estimator, midpoint)
        assert max(trajectory.trace.op_scales()) == 16
        assert min(trajectory.trace.op_scales()) == 2

    def test_predictions_cover_interior_times(self, system, endpoints):
        """Test the final predictions exist for t_1..t_{n-1}"""
        u0, target = endpoints
        estimator = ForceEstimator(system)
        for scheme in ("two_stage", "staggered", "refined"):
            trajectory = reconstruct_values(scheme, system, (u0,), target, 8, estimator, midpoint)
            assert sorted(trajectory.prediction_values()) == list(range(1, 8))

    def test_chain_makes_no_predictions(self, system, endpoints):
        """Test the CFE chain never calls an OP"""
        u0, target = endpoints
        trajectory = reconstruct_values("chain", system, (u0,), target, 4, ForceEstimator(system))
        assert trajectory.predictions == {}
        assert len(trajectory.control_values()) == 4

    def test_predictor_required(self, system, endpoints):
        """Test non-chain schemes without a predictor raise"""
        u0, target = endpoints
        with pytest.raises(SchemeError):
            reconstruct_values("staggered", system, (u0,), target, 4, ForceEstimator(system))
        with pytest.raises(SchemeError):
            reconstruct_values("zigzag", system, (u0,), target, 4, ForceEstimator(system), midpoint)

    def test_taped_execution_is_differentiable(self, system, endpoints):
        """Test gradients reach the initial state through a taped scheme"""
        u0, target = endpoints
        tape = Tape()
        state0 = system.variables(tape, (u0,))
        estimator = ForceEstimator(system)
        goal = tape.variable(target)
        trajectory = execute("staggered", system, state0, goal, 4, estimator, midpoint)
        loss = ops.sum_squares(system.observe(trajectory.states[-1]))
        grad = tape.backward(loss)[state0[0]]
        assert np.abs(grad.data).max() > 0.0

    def test_hierarchical_scales(self, system, endpoints):
        """Test bisection issues one call at scale n, two at n/2 and so on"""
        u0, target = endpoints
        tape = Tape(enabled=False)
        trace = SchemeTrace()
        start, goal = tape.variable(u0), tape.variable(target)
        predictions = hierarchical_predict(start, goal, 8, midpoint, trace)
        assert sorted(predictions) == list(range(1, 8))
        assert trace.op_scales() == {8: 1, 4: 2, 2: 4}
        np.testing.assert_allclose(predictions[4].value.data, 0.5 * (u0.data + target.data))

    def test_follow_predictions(self, system, endpoints):
        """Test each step aims at its own target"""
        u0, target = endpoints
        tape = Tape(enabled=False)
        targets = [tape.variable(target * (k / 3)) for k in (1, 2, 3)]
        estimator = ForceEstimator(system)
        trajectory = follow_predictions(system, system.variables(tape, (u0,)), targets, estimator)
        assert trajectory.horizon == 3
        assert sorted(trajectory.predictions) == [1, 2]

    def test_trajectory_length_checked(self, system, endpoints):
        """Test states and controls must line up"""
        with pytest.raises(ShapeMismatchError):
            Trajectory(states=[], controls=[])


class TestMultishape:
    """Several shapes sharing one force per step"""

    def test_shared_controls(self, system, endpoints):
        """Test every shape is driven by the same controls"""
        u0, target = endpoints
        tape = Tape(enabled=False)
        states0 = [system.variables(tape, (u0,)), system.variables(tape, (u0 * 0.5,))]
        o_stars = [tape.variable(target), tape.variable(target * 0.5)]
        estimator = ForceEstimator(system)
        trajectories = multishape_execute(system, states0, o_stars, 4, midpoint, estimator)
        assert len(trajectories) == 2
        assert trajectories[0].controls == trajectories[1].controls
        assert trajectories[0].trace.counts() == (0, 4, 4)
        assert all(len(t.states) == 5 for t in trajectories)

    def test_mismatched_inputs(self, system, endpoints):
        """Test shape counts and target lengths must agree"""
        u0, target = endpoints
        tape = Tape(enabled=False)
        state = system.variables(tape, (u0,))
        goal = tape.variable(target)
        estimator = ForceEstimator(system)
        with pytest.raises(ShapeMismatchError):
            compose_multishape(system, [state], [[goal], [goal]], estimator)
        with pytest.raises(ShapeMismatchError):
            compose_multishape(system, [state, state], [[goal], [goal, goal]], estimator)
        with pytest.raises(ShapeMismatchError):
            sum_predictions([])


class TestStraightLine:
    """Mass-preserving straight-line reference targets"""

    @staticmethod
    def _blob(spec, corner):
        data = np.zeros(spec.dims)
        data[corner[0]:corner[0] + 2, corner[1]:corner[1] + 2] = 1.0
        return CenteredField(spec, data)

    def test_translation_and_mass(self):
        """Test intermediate targets move along the line and keep mass"""
        spec = GridSpec((16, 16))
        o0, o_star = self._blob(spec, (4, 4)), self._blob(spec, (8, 8))
        targets = straight_line_predictions(o0, o_star, 4)
        assert len(targets) == 4
        assert targets[-1] is o_star
        start = center_of_mass(o0)
        for t, field in enumerate(targets[:-1], start=1):
            assert field.total() == pytest.approx(o0.total())
            np.testing.assert_allclose(center_of_mass(field), start + t, atol=1e-9)

    def test_empty_field_has_no_center(self):
        """Test a field without positive mass raises"""
        with pytest.raises(ShapeMismatchError):
            center_of_mass(CenteredField.zeros(GridSpec((4, 4))))

    def test_invalid_horizon(self):
        """Test horizons below one raise"""
        spec = GridSpec((4, 4))
        with pytest.raises(SchemeError):
            straight_line_predictions(self._blob(spec, (0, 0)), self._blob(spec, (2, 2)), 0)
