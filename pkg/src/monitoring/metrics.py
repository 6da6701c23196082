"""
Prometheus metrics for solver, network and optimisation activity.

Batch runs are short-lived, so besides the optional HTTP exporter the
registry can be dumped to a textfile (node-exporter textfile collector
format) when a CLI command finishes.

Usage:
    from src.monitoring.metrics import get_metrics_collector

    metrics = get_metrics_collector()
    metrics.inc_solver_steps("fluid")
    metrics.observe_cg_iterations(120)
    metrics.observe_inference_latency(0.012)
"""
import threading
import time
from typing import Optional

from prometheus_client import (
    REGISTRY,
    Counter,
    Gauge,
    Histogram,
    Info,
    start_http_server,
    write_to_textfile,
)

from src.common.logging_config import get_logger

logger = get_logger(__name__)

# ---------------------------------------------------------------------------
# Prometheus metric definitions (module-level singletons)
# ---------------------------------------------------------------------------

# -- Counters --
SOLVER_STEPS_TOTAL = Counter(
    "diffctl_solver_steps_total",
    "Total number of PDE solver steps executed",
    ["pde"],
)

CG_SOLVES_TOTAL = Counter(
    "diffctl_cg_solves_total",
    "Total number of conjugate-gradient Poisson solves (forward and adjoint)",
)

OP_INVOCATIONS_TOTAL = Counter(
    "diffctl_op_invocations_total",
    "Total number of observation predictor evaluations",
)

CFE_INVOCATIONS_TOTAL = Counter(
    "diffctl_cfe_invocations_total",
    "Total number of control force estimator evaluations",
)

OPTIMIZATION_ITERATIONS_TOTAL = Counter(
    "diffctl_optimization_iterations_total",
    "Total number of optimiser iterations",
    ["kind"],
)

EXAMPLES_GENERATED_TOTAL = Counter(
    "diffctl_examples_generated_total",
    "Total number of dataset examples generated",
    ["experiment"],
)

# -- Histograms --
CG_ITERATIONS = Histogram(
    "diffctl_cg_iterations",
    "Conjugate-gradient iterations per Poisson solve",
    buckets=(1, 5, 10, 25, 50, 100, 250, 500, 1000, 2500, 5000),
)

INFERENCE_LATENCY = Histogram(
    "diffctl_inference_latency_seconds",
    "Wall-clock time of a full trajectory reconstruction",
    buckets=(0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 10.0, 60.0),
)

# -- Gauges --
LAST_OBJECTIVE = Gauge(
    "diffctl_last_objective",
    "Most recent objective value reported by an optimiser",
    ["kind"],
)

UPTIME_SECONDS = Gauge(
    "diffctl_uptime_seconds",
    "Seconds since the metrics collector was created",
)

# -- Info --
BUILD_INFO = Info(
    "diffctl",
    "Differentiable control toolkit build / version info",
)


class MetricsCollector:
    """
    Convenience wrapper around Prometheus metrics.

    Provides named helper methods so callers don't need to import the raw
    metric objects. All methods are thread-safe (Prometheus client handles it).
    """

    def __init__(self) -> None:
        self._start_time = time.time()
        BUILD_INFO.info({"version": "1.0.0", "component": "diffctl"})

    # -- Counters -----------------------------------------------------------

    def inc_solver_steps(self, pde: str, count: int = 1) -> None:
        """Increment solver step counter for ``pde`` (burger | fluid)."""
        SOLVER_STEPS_TOTAL.labels(pde=pde).inc(count)

    def inc_cg_solves(self, count: int = 1) -> None:
        CG_SOLVES_TOTAL.inc(count)

    def inc_op_invocations(self, count: int = 1) -> None:
        OP_INVOCATIONS_TOTAL.inc(count)

    def inc_cfe_invocations(self, count: int = 1) -> None:
        CFE_INVOCATIONS_TOTAL.inc(count)

    def inc_optimization_iterations(self, kind: str, count: int = 1) -> None:
        OPTIMIZATION_ITERATIONS_TOTAL.labels(kind=kind).inc(count)

    def inc_examples_generated(self, experiment: str, count: int = 1) -> None:
        EXAMPLES_GENERATED_TOTAL.labels(experiment=experiment).inc(count)

    # -- Histograms ---------------------------------------------------------

    def observe_cg_iterations(self, iterations: int) -> None:
        CG_ITERATIONS.observe(iterations)

    def observe_inference_latency(self, seconds: float) -> None:
        INFERENCE_LATENCY.observe(seconds)

    # -- Gauges -------------------------------------------------------------

    def set_last_objective(self, kind: str, value: float) -> None:
        LAST_OBJECTIVE.labels(kind=kind).set(value)

    def update_uptime(self) -> None:
        UPTIME_SECONDS.set(time.time() - self._start_time)

    # -- Accessors for testing ----------------------------------------------

    @staticmethod
    def get_solver_steps_total(pde: str) -> float:
        return SOLVER_STEPS_TOTAL.labels(pde=pde)._value.get()

    @staticmethod
    def get_cg_solves_total() -> float:
        return CG_SOLVES_TOTAL._value.get()

    @staticmethod
    def get_op_invocations_total() -> float:
        return OP_INVOCATIONS_TOTAL._value.get()

    @staticmethod
    def get_cfe_invocations_total() -> float:
        return CFE_INVOCATIONS_TOTAL._value.get()


# ---------------------------------------------------------------------------
# Module-level helpers
# ---------------------------------------------------------------------------

_metrics_collector: Optional[MetricsCollector] = None
_metrics_lock = threading.Lock()


def get_metrics_collector() -> MetricsCollector:
    """
    Return the singleton ``MetricsCollector`` instance.
    Creates one on first call (thread-safe).
    """
    global _metrics_collector
    if _metrics_collector is None:
        with _metrics_lock:
            if _metrics_collector is None:
                _metrics_collector = MetricsCollector()
    return _metrics_collector


def start_metrics_server(port: int) -> None:
    """
    Start the Prometheus metrics HTTP server on *port*.

    Catches ``OSError`` when the port is already in use.
    """
    try:
        start_http_server(port)
        logger.info(f"Prometheus metrics server started on port {port}")
    except OSError as exc:
        logger.error(f"Failed to start metrics server on port {port}: {exc}")


def write_metrics_textfile(path: str) -> None:
    """
    Dump the default registry to *path* in the Prometheus text format.

    Args:
        path: Output file; written atomically by prometheus_client
    """
    get_metrics_collector().update_uptime()
    write_to_textfile(path, REGISTRY)
    logger.debug(f"Metrics written to {path}")


def reset_metrics() -> None:
    """
    Reset all counters / gauges to zero.
    Useful in test suites to get deterministic values.
    """
    global _metrics_collector
    for c in (CG_SOLVES_TOTAL, OP_INVOCATIONS_TOTAL, CFE_INVOCATIONS_TOTAL):
        c._value.set(0)
    for labelled in (
        SOLVER_STEPS_TOTAL,
        OPTIMIZATION_ITERATIONS_TOTAL,
        EXAMPLES_GENERATED_TOTAL,
        LAST_OBJECTIVE,
    ):
        labelled._metrics.clear()
    UPTIME_SECONDS._value.set(0)
    _metrics_collector = None
