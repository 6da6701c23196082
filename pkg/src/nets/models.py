"""
Observation predictors (OP) and control force estimators (CFE).

An OP maps two observations ``o_i``, ``o_j`` that are ``n`` steps apart to a
prediction of the observation halfway between them. The prediction is the
average of the inputs plus the network output, so an untrained bank predicts
the linear blend. A CFE maps the current observation (and, for fluids, the
velocity) plus the next desired observation to a control parameter.
"""
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Optional, Tuple

from src.autodiff import ops
from src.autodiff.tape import Tape, VarId
from src.common.exceptions import ConfigurationError, MissingScaleError, ShapeMismatchError
from src.common.logging_config import get_logger
from src.monitoring.metrics import get_metrics_collector
from src.nets.network import NetSpec, ParamSet, forward, init_params
from src.physics.systems import ControlledSystem, FluidSystem, State

logger = get_logger(__name__)

CFE_MODES = ("burger", "stream", "direct", "indirect")


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


class OPModelBank(Mapping):
    """Time scale ``n`` (a power of two >= 2) -> ``(NetSpec, ParamSet)``."""

    def __init__(self, models: Mapping[int, Tuple[NetSpec, ParamSet]], nonnegative: bool = False):
        for n, (spec, _) in models.items():
            if n < 2 or not _is_power_of_two(n):
                raise ConfigurationError(f"OP time scales must be powers of two >= 2, got {n}")
            if spec.in_channels != 2 or spec.out_channels != 1:
                raise ShapeMismatchError(f"OP for scale {n} must map 2 channels to 1")
        self._models = dict(models)
        self.nonnegative = nonnegative

    @classmethod
    def create(
        cls, horizon: int, spec: NetSpec, seed: int = 0, nonnegative: bool = False
    ) -> "OPModelBank":
        """One freshly initialised model per scale 2, 4, ..., ``horizon``."""
        models = {}
        n = 2
        while n <= horizon:
            models[n] = (spec, init_params(spec, seed + n))
            n *= 2
        logger.debug(f"Initialised OP bank with scales {sorted(models)}")
        return cls(models, nonnegative)

    def __getitem__(self, n: int) -> Tuple[NetSpec, ParamSet]:
        if n not in self._models:
            raise MissingScaleError(f"No observation predictor for time scale {n}")
        return self._models[n]

    def __iter__(self):
        return iter(sorted(self._models))

    def __len__(self) -> int:
        return len(self._models)

    def replace(self, params: Mapping[int, ParamSet]) -> "OPModelBank":
        models = dict(self._models)
        for n, p in params.items():
            models[n] = (self[n][0], p)
        return OPModelBank(models, self.nonnegative)


def op_predict(bank: OPModelBank, n: int, o_i, o_j, tape: Optional[Tape] = None):
    """
    Midpoint observation between ``o_i`` and ``o_j`` (``n`` steps apart).

    Works on ``VarId`` handles (recording on their tape) or on plain fields.
    """
    if not isinstance(o_i, VarId):
        tape = tape or Tape(enabled=False)
        return op_predict(bank, n, tape.variable(o_i), tape.variable(o_j)).value
    if o_i.shape != o_j.shape:
        raise ShapeMismatchError("OP inputs must share one grid")
    spec, params = bank[n]
    field_spec = o_i.shape.spec
    x = ops.to_channels(o_i, o_j)
    y = ops.channel_to_field(forward(spec, params.bind(o_i.tape), x), 0, field_spec)
    prediction = ops.add(ops.scale(ops.add(o_i, o_j), 0.5), y)
    if bank.nonnegative:
        prediction = ops.clamp_min(prediction, 0.0)
    get_metrics_collector().inc_op_invocations()
    return prediction


@dataclass(frozen=True)
class CFEModel:
    """A CFE network and how its output is turned into a control parameter."""

    spec: NetSpec
    params: ParamSet
    mode: str = "burger"

    def __post_init__(self):
        if self.mode not in CFE_MODES:
            raise ConfigurationError(f"Unknown CFE mode {self.mode!r}; expected one of {CFE_MODES}")
        expected_out = 2 if self.mode in ("direct", "indirect") else 1
        if self.spec.out_channels != expected_out:
            raise ShapeMismatchError(
                f"CFE mode {self.mode} needs {expected_out} output channels, "
                f"got {self.spec.out_channels}"
            )

    @staticmethod
    def input_channels(mode: str) -> int:
        return 2 if mode == "burger" else 4

    @classmethod
    def create(cls, mode: str, seed: int = 0, **spec_kwargs) -> "CFEModel":
        if mode not in CFE_MODES:
            raise ConfigurationError(f"Unknown CFE mode {mode!r}; expected one of {CFE_MODES}")
        rank = 1 if mode == "burger" else 2
        out = 2 if mode in ("direct", "indirect") else 1
        spec = NetSpec(cls.input_channels(mode), out, rank=rank, **spec_kwargs)
        return cls(spec, init_params(spec, seed), mode)


def cfe_infer(
    model: CFEModel,
    o_u: VarId,
    o_next: VarId,
    velocity: Optional[VarId] = None,
    control_faces=None,
) -> VarId:
    """
    Control parameter for reaching ``o_next`` from the current observation.

    burger:    force F (cell-centred)
    stream:    stream function phi (see ``physics.apply_stream_control``)
    direct:    staggered force
    indirect:  staggered force multiplied by ``control_faces``
    """
    if o_u.shape != o_next.shape:
        raise ShapeMismatchError("CFE observations must share one grid")
    spec = o_u.shape.spec
    inputs = (o_u, o_next) if velocity is None else (o_u, velocity, o_next)
    x = ops.to_channels(*inputs)
    y = forward(model.spec, model.params.bind(o_u.tape), x)
    get_metrics_collector().inc_cfe_invocations()
    if model.mode in ("burger", "stream"):
        return ops.channel_to_field(y, 0, spec)
    force = ops.channels_to_faces(y, spec)
    if model.mode == "indirect":
        if control_faces is None:
            raise ConfigurationError("Indirect control needs a control-face mask")
        force = ops.mask(force, control_faces)
    return force


def analytic_cfe_burger(u, o_next, dt: float):
    """``F = (o_next - u) / dt``."""
    if dt <= 0:
        raise ConfigurationError(f"dt must be > 0, got {dt}")
    if isinstance(u, VarId):
        return ops.scale(ops.sub(o_next, u), 1.0 / dt)
    return (o_next - u) / dt


def terminal_force_burger(system: ControlledSystem, u, o_star):
    """
    Force that makes the next Burger's step land on ``o_star`` exactly.

    The force acts after transport and diffusion, so
    ``F = (o_star - Solver[u, 0]) / dt``.
    """
    if not isinstance(u, VarId):
        tape = Tape(enabled=False)
        return terminal_force_burger(system, tape.variable(u), tape.variable(o_star)).value
    unforced = system.step((u,), None)[0]
    return ops.scale(ops.sub(o_star, unforced), 1.0 / system.dt)


class ForceEstimator:
    """
    Callable CFE used by the execution schemes.

    ``estimator(state, target, index, horizon)`` returns the control parameter
    for step ``index``. With ``exact_terminal`` the last Burger's step uses
    :func:`terminal_force_burger`.
    """

    def __init__(
        self,
        system: ControlledSystem,
        model: Optional[CFEModel] = None,
        exact_terminal: bool = False,
    ):
        if exact_terminal and system.kind != "burger":
            raise ConfigurationError("The exact terminal rule only applies to Burger's")
        if model is None and system.kind != "burger":
            raise ConfigurationError("Fluid systems need a CFE network")
        self.system = system
        self.model = model
        self.exact_terminal = exact_terminal

    def __call__(self, state: State, target: VarId, index: int, horizon: int) -> VarId:
        u = self.system.observe(state)
        if self.exact_terminal and index == horizon - 1:
            get_metrics_collector().inc_cfe_invocations()
            return terminal_force_burger(self.system, u, target)
        if self.model is None:
            get_metrics_collector().inc_cfe_invocations()
            return analytic_cfe_burger(u, target, self.system.dt)
        velocity = state[1] if len(state) > 1 else None
        faces = self.system.domain.control_faces if isinstance(self.system, FluidSystem) else None
        return cfe_infer(self.model, u, target, velocity, faces)


class Predictor:
    """Callable OP used by the execution schemes: ``predictor(n, o_i, o_j)``."""

    def __init__(self, bank: OPModelBank):
        self.bank = bank

    def __call__(self, n: int, o_i: VarId, o_j: VarId) -> VarId:
        return op_predict(self.bank, n, o_i, o_j)


def bound_parameters(
    tape: Tape, bank: Optional[OPModelBank], cfe: Optional[CFEModel]
) -> Dict[str, VarId]:
    """Every trainable ``VarId`` on ``tape``, keyed ``op<n>/<name>`` or ``cfe/<name>``."""
    out: Dict[str, VarId] = {}
    if bank is not None:
        for n in bank:
            for name, var in bank[n][1].bind(tape).items():
                out[f"op{n}/{name}"] = var
    if cfe is not None:
        for name, var in cfe.params.bind(tape).items():
            out[f"cfe/{name}"] = var
    return out


def split_parameters(
    flat: Mapping[str, object]
) -> Tuple[Dict[int, Dict[str, object]], Dict[str, object]]:
    """Inverse of the ``bound_parameters`` naming: (per-scale OP arrays, CFE arrays)."""
    ops_by_scale: Dict[int, Dict[str, object]] = {}
    cfe: Dict[str, object] = {}
    for key, value in flat.items():
        group, name = key.split("/", 1)
        if group == "cfe":
            cfe[name] = value
        else:
            ops_by_scale.setdefault(int(group[2:]), {})[name] = value
    return ops_by_scale, cfe


def scales_for(horizon: int) -> Iterable[int]:
    n = 2
    while n <= horizon:
        yield n
        n *= 2
