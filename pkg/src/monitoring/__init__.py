"""
Monitoring module - Prometheus metrics.
Provides counters, histograms, and gauges for observability of batch runs.
"""
from src.monitoring.metrics import (
    MetricsCollector,
    get_metrics_collector,
    reset_metrics,
    start_metrics_server,
    write_metrics_textfile,
)

__all__ = [
    "MetricsCollector",
    "get_metrics_collector",
    "reset_metrics",
    "start_metrics_server",
    "write_metrics_textfile",
]
