"""
Run ID management for log tracing.
Generates and propagates a run ID across one CLI invocation (generation,
training, reconstruction, shooting) so all log records of a run can be grouped.
"""
import logging
import uuid
from contextvars import ContextVar
from typing import Optional

# Context variable for run ID (async-safe and thread-safe)
_run_id_var: ContextVar[Optional[str]] = ContextVar("run_id", default=None)

# Context variable for component name (subcommand or library area)
_component_var: ContextVar[Optional[str]] = ContextVar("component", default=None)

# Context variable for the experiment kind being processed
_experiment_var: ContextVar[Optional[str]] = ContextVar("experiment", default=None)


def generate_run_id() -> str:
    """
    Generate a new unique run ID.

    Returns:
        UUID4 string
    """
    return str(uuid.uuid4())


def set_run_id(run_id: str) -> None:
    """Set the run ID for the current context."""
    _run_id_var.set(run_id)


def get_run_id() -> Optional[str]:
    """Get the run ID from the current context, or None if not set."""
    return _run_id_var.get()


def clear_run_id() -> None:
    """Clear the run ID from the current context."""
    _run_id_var.set(None)


def set_component(component: str) -> None:
    """
    Set the component name for the current context.

    Args:
        component: Component name (e.g., "gen", "train", "shoot")
    """
    _component_var.set(component)


def get_component() -> Optional[str]:
    """Get the component name from the current context."""
    return _component_var.get()


def set_experiment(experiment: Optional[str]) -> None:
    """Set the experiment kind (burger, fluid_shapes, ...) for the current context."""
    _experiment_var.set(experiment)


def get_experiment() -> Optional[str]:
    """Get the experiment kind from the current context."""
    return _experiment_var.get()


class RunFilter(logging.Filter):
    """
    Logging filter that injects run_id, component and experiment into records.
    Reads from ContextVars so every log statement inside a run is tagged
    without explicit passing.
    """

    def filter(self, record: logging.LogRecord) -> bool:
        record.run_id = get_run_id() or ""
        record.component = get_component() or ""
        record.experiment = get_experiment() or ""
        return True


class RunContext:
    """
    Context manager for setting the run ID within a scope.
    Restores the previous run ID on exit.

    Usage:
        with RunContext() as ctx:
            logger.info("tagged with ctx.run_id")
    """

    def __init__(self, run_id: Optional[str] = None, experiment: Optional[str] = None):
        """
        Initialize run context.

        Args:
            run_id: Specific run ID. If None, a new UUID4 is generated.
            experiment: Optional experiment kind to tag records with
        """
        self.run_id = run_id or generate_run_id()
        self.experiment = experiment
        self._previous_id: Optional[str] = None
        self._previous_experiment: Optional[str] = None

    def __enter__(self) -> "RunContext":
        self._previous_id = get_run_id()
        self._previous_experiment = get_experiment()
        set_run_id(self.run_id)
        if self.experiment is not None:
            set_experiment(self.experiment)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        if self._previous_id is not None:
            set_run_id(self._previous_id)
        else:
            clear_run_id()
        set_experiment(self._previous_experiment)
