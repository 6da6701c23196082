"""
Execution schemes combining observation predictors, a force estimator and
the solver into a reconstructed trajectory.

All schemes record on the tape of the initial state, so the same code serves
inference (disabled tape) and differentiable-physics training (enabled
tape). ``predictor(n, o_i, o_j)`` returns the midpoint prediction between
observations ``n`` steps apart; ``cfe(state, target, index, horizon)``
returns the control parameter for step ``index``.
"""
from dataclasses import dataclass, field
from functools import reduce
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.autodiff import ops
from src.autodiff.tape import Tape, Value, VarId
from src.common.exceptions import SchemeError, ShapeMismatchError
from src.common.logging_config import get_logger
from src.control.trace import SCHEMES, SchemeTrace, check_horizon
from src.fields.grid import CenteredField
from src.fields.operators import interpolate_linear
from src.physics.systems import ControlledSystem, State, StateValues

logger = get_logger(__name__)

PredictorFn = Callable[[int, VarId, VarId], VarId]
CfeFn = Callable[[State, VarId, int, int], VarId]


@dataclass
class Trajectory:
    """States ``u(t_0..t_n)``, controls ``F(t_0..t_{n-1})`` and final predictions."""

    states: List[State]
    controls: List[VarId]
    predictions: Dict[int, VarId] = field(default_factory=dict)
    trace: SchemeTrace = field(default_factory=SchemeTrace)

    def __post_init__(self):
        if len(self.states) != len(self.controls) + 1:
            raise ShapeMismatchError(
                f"Trajectory has {len(self.states)} states for {len(self.controls)} controls"
            )

    @property
    def horizon(self) -> int:
        return len(self.controls)

    def state_values(self) -> Tuple[StateValues, ...]:
        return tuple(tuple(v.value for v in state) for state in self.states)

    def control_values(self) -> Tuple[Value, ...]:
        return tuple(c.value for c in self.controls)

    def prediction_values(self) -> Dict[int, Value]:
        return {t: p.value for t, p in sorted(self.predictions.items())}


class _Execution:
    """Mutable bookkeeping shared by the recursive schemes."""

    def __init__(self, system: ControlledSystem, state0: State, horizon: int, cfe: CfeFn,
                 predictor: Optional[PredictorFn] = None, trace: Optional[SchemeTrace] = None):
        self.system = system
        self.horizon = horizon
        self.cfe = cfe
        self.predictor = predictor
        self.trace = trace if trace is not None else SchemeTrace()
        self.states: List[State] = [state0]
        self.controls: List[VarId] = []
        self.predictions: Dict[int, VarId] = {}

    def observation(self, time: int) -> VarId:
        return self.system.observe(self.states[time])

    def predict(self, scale: int, left: VarId, right: VarId, time: int) -> VarId:
        self.trace.op(scale, time)
        prediction = self.predictor(scale, left, right)
        self.predictions[time] = prediction
        return prediction

    def advance(self, target: VarId) -> VarId:
        index = len(self.controls)
        state = self.states[-1]
        self.trace.cfe(index)
        control = self.cfe(state, target, index, self.horizon)
        self.trace.solver(index)
        self.states.append(self.system.step(state, control))
        self.controls.append(control)
        return self.system.observe(self.states[-1])

    def result(self) -> Trajectory:
        self.trace.validate(self.horizon)
        return Trajectory(self.states, self.controls, self.predictions, self.trace)


def cfe_chain(
    system: ControlledSystem, state0: State, o_star: VarId, n: int, cfe: CfeFn
) -> Trajectory:
    """Every step aims directly at the target; no predictions are made."""
    if n < 1:
        raise SchemeError(f"Horizon must be >= 1, got {n}")
    run = _Execution(system, state0, n, cfe)
    for _ in range(n):
        run.advance(o_star)
    return run.result()


def _hierarchical(run: _Execution, o0: VarId, o_star: VarId, n: int) -> Dict[int, VarId]:
    known = {0: o0, n: o_star}
    span = n
    while span > 1:
        for left in range(0, n, span):
            right = left + span
            mid = left + span // 2
            known[mid] = run.predict(span, known[left], known[right], mid)
        span //= 2
    return known


def hierarchical_predict(
    o0: VarId, o_star: VarId, n: int, predictor: PredictorFn, trace: Optional[SchemeTrace] = None
) -> Dict[int, VarId]:
    """
    Predictions for ``t_1..t_{n-1}`` by recursive bisection, coarsest first.

    Issues exactly ``n - 1`` OP events: one at scale ``n``, two at ``n/2``
    and so on down to ``n/2`` calls at scale 2.
    """
    check_horizon(n)
    run = _Execution(None, (o0,), n, None, predictor, trace)
    known = _hierarchical(run, o0, o_star, n)
    return {t: known[t] for t in range(1, n)}


def follow_predictions(
    system: ControlledSystem,
    state0: State,
    targets: Sequence[VarId],
    cfe: CfeFn,
    trace: Optional[SchemeTrace] = None,
) -> Trajectory:
    """CFE chain where step ``i`` aims at ``targets[i]`` (the observation for ``t_{i+1}``)."""
    n = len(targets)
    run = _Execution(system, state0, n, cfe, trace=trace)
    for target in targets:
        run.advance(target)
    run.predictions = {t + 1: p for t, p in enumerate(targets[:-1])}
    return run.result()


def two_stage_execute(
    system: ControlledSystem,
    state0: State,
    o_star: VarId,
    n: int,
    predictor: PredictorFn,
    cfe: CfeFn,
) -> Trajectory:
    """All predictions first, then a chain that follows them."""
    check_horizon(n)
    trace = SchemeTrace()
    predictions = hierarchical_predict(system.observe(state0), o_star, n, predictor, trace)
    targets = [predictions[t] for t in range(1, n)] + [o_star]
    return follow_predictions(system, state0, targets, cfe, trace)


def staggered_execute(
    system: ControlledSystem,
    state0: State,
    o_star: VarId,
    n: int,
    predictor: PredictorFn,
    cfe: CfeFn,
) -> Trajectory:
    """
    Advance the solver as soon as the prediction for the next step exists.

    Every OP takes the reconstructed observation at its left end, so later
    predictions see deviations of the trajectory so far.
    """
    check_horizon(n)
    run = _Execution(system, state0, n, cfe, predictor)

    def reconstruct(start: int, end: int, target: VarId) -> None:
        if end - start == 1:
            run.advance(target)
            return
        mid = (start + end) // 2
        prediction = run.predict(end - start, run.observation(start), target, mid)
        reconstruct(start, mid, prediction)
        reconstruct(mid, end, target)

    reconstruct(0, n, o_star)
    return run.result()


def refine_execute(
    system: ControlledSystem,
    state0: State,
    o_star: VarId,
    n: int,
    predictor: PredictorFn,
    cfe: CfeFn,
) -> Trajectory:
    """
    Prediction refinement.

    Like staggered execution, but whenever the reconstruction has covered half
    the distance to a pending prediction, that prediction is re-made by the
    finest OP that spans it from the latest reconstructed state. Every final
    prediction is conditioned on the reconstruction of the step before it.
    """
    check_horizon(n)
    run = _Execution(system, state0, n, cfe, predictor)

    def reconstruct(start: int, target: VarId, span: int, lookahead: Optional[VarId]) -> VarId:
        if span == 1:
            return run.advance(target)
        half = span // 2
        mid = start + half
        end = start + span
        middle = run.predict(span, run.observation(start), target, mid)
        reconstruct(start, middle, half, target)
        if lookahead is not None:
            beyond = run.predict(span, target, lookahead, end + half)
            target = run.predict(span, run.observation(mid), beyond, end)
        else:
            beyond = None
        return reconstruct(mid, target, half, beyond)

    reconstruct(0, o_star, n, None)
    return run.result()


def execute(
    scheme: str,
    system: ControlledSystem,
    state0: State,
    o_star: VarId,
    n: int,
    cfe: CfeFn,
    predictor: Optional[PredictorFn] = None,
) -> Trajectory:
    """Dispatch on a scheme name (``chain``, ``two_stage``, ``staggered``, ``refined``)."""
    if scheme == "chain":
        return cfe_chain(system, state0, o_star, n, cfe)
    if scheme not in SCHEMES:
        raise SchemeError(f"Unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if predictor is None:
        raise SchemeError(f"Scheme {scheme!r} needs an observation predictor")
    run = {
        "two_stage": two_stage_execute,
        "staggered": staggered_execute,
        "refined": refine_execute,
    }
    trajectory = run[scheme](system, state0, o_star, n, predictor, cfe)
    logger.debug(f"{scheme} execution over {n} steps: counts {trajectory.trace.counts()}")
    return trajectory


def reconstruct_values(
    scheme: str,
    system: ControlledSystem,
    values0: StateValues,
    o_star: Value,
    n: int,
    cfe: CfeFn,
    predictor: Optional[PredictorFn] = None,
    tape: Optional[Tape] = None,
) -> Trajectory:
    """:func:`execute` on plain state values, recorded on ``tape`` (untaped by default)."""
    tape = tape or Tape(enabled=False)
    state0 = system.variables(tape, values0)
    return execute(scheme, system, state0, tape.variable(o_star), n, cfe, predictor)


def sum_predictions(predictions: Sequence[VarId]) -> VarId:
    """Sum of per-shape predictions; a single prediction is returned unchanged."""
    if not predictions:
        raise ShapeMismatchError("Need at least one prediction to sum")
    return reduce(ops.add, predictions)


def _sum_states(states: Sequence[State]) -> State:
    return tuple(sum_predictions(parts) for parts in zip(*states))


def compose_multishape(
    system: ControlledSystem,
    states0: Sequence[State],
    targets: Sequence[Sequence[VarId]],
    cfe: CfeFn,
) -> Tuple[Trajectory, ...]:
    """
    Reconstruct several shapes on one grid with a single force per step.

    ``targets[k][i]`` is the observation shape ``k`` should reach at ``t_{i+1}``.
    The CFE sees the summed state and the summed target; the resulting control
    drives every shape's own simulation.
    """
    if len(states0) != len(targets) or not states0:
        raise ShapeMismatchError(
            f"Got {len(states0)} initial states for {len(targets)} target sequences"
        )
    horizon = len(targets[0])
    if any(len(t) != horizon for t in targets):
        raise ShapeMismatchError("Every shape needs the same number of targets")

    trace = SchemeTrace()
    shape_states: List[List[State]] = [[s] for s in states0]
    controls: List[VarId] = []
    for index in range(horizon):
        joint_state = _sum_states([s[-1] for s in shape_states])
        joint_target = sum_predictions([t[index] for t in targets])
        trace.cfe(index)
        control = cfe(joint_state, joint_target, index, horizon)
        trace.solver(index)
        for states in shape_states:
            states.append(system.step(states[-1], control))
        controls.append(control)
    trace.validate(horizon)
    return tuple(
        Trajectory(states, list(controls), {t + 1: p for t, p in enumerate(seq[:-1])}, trace)
        for states, seq in zip(shape_states, targets)
    )


def multishape_execute(
    system: ControlledSystem,
    states0: Sequence[State],
    o_stars: Sequence[VarId],
    n: int,
    predictor: PredictorFn,
    cfe: CfeFn,
) -> Tuple[Trajectory, ...]:
    """Hierarchical predictions per shape followed by :func:`compose_multishape`."""
    check_horizon(n)
    targets = []
    for state0, o_star in zip(states0, o_stars):
        predictions = hierarchical_predict(system.observe(state0), o_star, n, predictor)
        targets.append([predictions[t] for t in range(1, n)] + [o_star])
    return compose_multishape(system, states0, targets, cfe)


def center_of_mass(f: CenteredField) -> np.ndarray:
    weights = np.clip(f.data, 0.0, None)
    mass = weights.sum()
    if mass <= 0:
        raise ShapeMismatchError("Center of mass of a field without positive mass")
    points = f.spec.cell_centers().reshape(-1, f.spec.rank)
    return (weights.reshape(-1, 1) * points).sum(axis=0) / mass


def straight_line_predictions(
    o0: CenteredField, o_star: CenteredField, n: int
) -> List[CenteredField]:
    """
    Reference targets for ``t_1..t_n``: ``o0`` translated along the straight
    line between the two centres of mass, mass-preserving, ending at ``o_star``.
    """
    if n < 1:
        raise SchemeError(f"Horizon must be >= 1, got {n}")
    start = center_of_mass(o0)
    shift = center_of_mass(o_star) - start
    points = o0.spec.cell_centers().reshape(-1, o0.spec.rank)
    mass = o0.data.sum()
    out = []
    for t in range(1, n):
        moved = interpolate_linear(o0, points - shift * (t / n)).reshape(o0.spec.dims)
        moved = np.clip(moved, 0.0, None)
        out.append(o0.with_data(moved * (mass / moved.sum())) if moved.sum() > 0 else o0)
    out.append(o_star)
    return out
