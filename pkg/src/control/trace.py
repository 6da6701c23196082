"""
Execution traces and closed-form invocation counts.

A trace is the ordered list of OP, CFE and Solver events an execution scheme
issued. Traces serialise to one line per event::

    EVENT OP 4 8
    EVENT CFE 0 1
    EVENT SOLVER 0 1

``time`` is the time index the event produces (the predicted index for OP
events, the step index for CFE/Solver events); ``scale`` is the OP time scale
and 1 for CFE and Solver events.
"""
from collections import Counter
from dataclasses import dataclass, field
from math import log2
from typing import Dict, List, Tuple

from src.common.exceptions import FormatError, SchemeError
from src.common.logging_config import get_logger

logger = get_logger(__name__)

OP = "OP"
CFE = "CFE"
SOLVER = "SOLVER"
EVENT_KINDS = (OP, CFE, SOLVER)

SCHEMES = ("chain", "two_stage", "staggered", "refined")


@dataclass(frozen=True)
class Event:
    kind: str
    time: int
    scale: int = 1

    def to_line(self) -> str:
        return f"EVENT {self.kind} {self.time} {self.scale}"

    @classmethod
    def from_line(cls, line: str) -> "Event":
        parts = line.split()
        if len(parts) != 4 or parts[0] != "EVENT" or parts[1] not in EVENT_KINDS:
            raise FormatError(f"Malformed trace line: {line!r}")
        try:
            return cls(parts[1], int(parts[2]), int(parts[3]))
        except ValueError as e:
            raise FormatError(f"Malformed trace line: {line!r}") from e


@dataclass
class SchemeTrace:
    """Ordered OP / CFE / Solver events of one scheme execution."""

    events: List[Event] = field(default_factory=list)

    def op(self, scale: int, time: int) -> None:
        self.events.append(Event(OP, time, scale))

    def cfe(self, time: int) -> None:
        self.events.append(Event(CFE, time))

    def solver(self, time: int) -> None:
        self.events.append(Event(SOLVER, time))

    def counts(self) -> Tuple[int, int, int]:
        """``(n_op, n_cfe, n_solver)``."""
        tally = Counter(e.kind for e in self.events)
        return tally[OP], tally[CFE], tally[SOLVER]

    def op_scales(self) -> Dict[int, int]:
        return dict(Counter(e.scale for e in self.events if e.kind == OP))

    def validate(self, horizon: int) -> None:
        """
        Raise ``SchemeError`` unless Solver events run 0..horizon-1 in order
        and each is immediately preceded by the CFE event of the same step.
        """
        solver_times = []
        for k, event in enumerate(self.events):
            if event.kind != SOLVER:
                continue
            previous = self.events[k - 1] if k > 0 else None
            if previous is None or previous.kind != CFE or previous.time != event.time:
                raise SchemeError(f"Solver step {event.time} is not directly preceded by its CFE")
            solver_times.append(event.time)
        if solver_times != list(range(horizon)):
            raise SchemeError(f"Solver steps {solver_times} do not cover 0..{horizon - 1} in order")

    def to_text(self) -> str:
        return "".join(e.to_line() + "\n" for e in self.events)

    @classmethod
    def from_text(cls, text: str) -> "SchemeTrace":
        return cls([Event.from_line(line) for line in text.splitlines() if line.strip()])


def check_horizon(n: int) -> None:
    if not isinstance(n, int) or n < 1 or n & (n - 1):
        raise SchemeError(f"Horizon must be a power of two >= 1, got {n!r}")


def count_ops(n: int, scheme: str) -> Tuple[int, int, int]:
    """Closed-form ``(n_op, n_cfe, n_solver)`` for ``scheme`` over ``n`` steps."""
    check_horizon(n)
    if scheme == "chain":
        return 0, n, n
    if scheme in ("two_stage", "staggered"):
        return n - 1, n, n
    if scheme == "refined":
        return 3 * n - 2 * int(log2(n)) - 3, n, n
    raise SchemeError(f"Unknown scheme {scheme!r}; expected one of {SCHEMES}")
