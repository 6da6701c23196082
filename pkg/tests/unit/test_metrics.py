"""
Unit tests for src/monitoring/metrics.py

Tests the MetricsCollector and module helpers.
"""
import pytest
from unittest.mock import patch

from src.monitoring.metrics import (
    CG_ITERATIONS,
    EXAMPLES_GENERATED_TOTAL,
    INFERENCE_LATENCY,
    LAST_OBJECTIVE,
    OPTIMIZATION_ITERATIONS_TOTAL,
    UPTIME_SECONDS,
    MetricsCollector,
    get_metrics_collector,
    reset_metrics,
    start_metrics_server,
    write_metrics_textfile,
)


@pytest.fixture(autouse=True)
def _reset():
    """Reset all metrics before each test for isolation."""
    reset_metrics()
    yield
    reset_metrics()


def _histogram_count(histogram) -> float:
    for metric in histogram.collect():
        for sample in metric.samples:
            if sample.name.endswith("_count"):
                return sample.value
    return 0.0


# -----------------------------------------------------------------------
# MetricsCollector – counter helpers
# -----------------------------------------------------------------------

class TestMetricsCollectorCounters:
    """Tests for counter increment methods."""

    def test_inc_solver_steps_per_pde(self):
        mc = MetricsCollector()
        mc.inc_solver_steps("fluid")
        mc.inc_solver_steps("fluid", 4)
        mc.inc_solver_steps("burger")
        assert mc.get_solver_steps_total("fluid") == 5.0
        assert mc.get_solver_steps_total("burger") == 1.0

    def test_inc_cg_solves(self):
        mc = MetricsCollector()
        mc.inc_cg_solves(3)
        assert mc.get_cg_solves_total() == 3.0

    def test_inc_op_and_cfe_invocations(self):
        mc = MetricsCollector()
        mc.inc_op_invocations()
        mc.inc_op_invocations(6)
        mc.inc_cfe_invocations(8)
        assert mc.get_op_invocations_total() == 7.0
        assert mc.get_cfe_invocations_total() == 8.0

    def test_inc_optimization_iterations(self):
        mc = MetricsCollector()
        mc.inc_optimization_iterations("shooting", 10)
        assert OPTIMIZATION_ITERATIONS_TOTAL.labels(kind="shooting")._value.get() == 10.0

    def test_inc_examples_generated(self):
        mc = MetricsCollector()
        mc.inc_examples_generated("burger", 2)
        assert EXAMPLES_GENERATED_TOTAL.labels(experiment="burger")._value.get() == 2.0


# -----------------------------------------------------------------------
# Histograms and gauges
# -----------------------------------------------------------------------

class TestMetricsCollectorObservations:
    """Tests for histogram and gauge helpers."""

    def test_observe_cg_iterations(self):
        mc = MetricsCollector()
        before = _histogram_count(CG_ITERATIONS)
        mc.observe_cg_iterations(42)
        assert _histogram_count(CG_ITERATIONS) == before + 1

    def test_observe_inference_latency(self):
        mc = MetricsCollector()
        before = _histogram_count(INFERENCE_LATENCY)
        mc.observe_inference_latency(0.004)
        assert _histogram_count(INFERENCE_LATENCY) == before + 1

    def test_set_last_objective(self):
        mc = MetricsCollector()
        mc.set_last_objective("diffphys", 0.25)
        assert LAST_OBJECTIVE.labels(kind="diffphys")._value.get() == 0.25

    def test_update_uptime_non_negative(self):
        mc = MetricsCollector()
        mc.update_uptime()
        assert UPTIME_SECONDS._value.get() >= 0.0


# -----------------------------------------------------------------------
# Module helpers
# -----------------------------------------------------------------------

class TestModuleHelpers:
    """Tests for the singleton and exporters."""

    def test_singleton(self):
        assert get_metrics_collector() is get_metrics_collector()

    def test_reset_drops_singleton(self):
        first = get_metrics_collector()
        first.inc_cg_solves(5)
        reset_metrics()
        assert get_metrics_collector() is not first
        assert get_metrics_collector().get_cg_solves_total() == 0.0

    def test_write_textfile(self, tmp_path):
        get_metrics_collector().inc_solver_steps("burger", 3)
        path = tmp_path / "diffctl.prom"
        write_metrics_textfile(str(path))
        text = path.read_text()
        assert 'diffctl_solver_steps_total{pde="burger"} 3.0' in text

    def test_start_server_handles_port_in_use(self):
        with patch("src.monitoring.metrics.start_http_server", side_effect=OSError("in use")):
            start_metrics_server(9100)

    def test_start_server_calls_exporter(self):
        with patch("src.monitoring.metrics.start_http_server") as server:
            start_metrics_server(9101)
        server.assert_called_once_with(9101)
