"""
Unit tests for structured JSON logging configuration.
"""
import json
import logging
import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from src.common.correlation import RunFilter
from src.common.logging_config import JSONFormatter, get_logger, setup_logging


def _record(level=logging.INFO, msg="msg", args=(), exc_info=None):
    return logging.LogRecord(
        name="test", level=level, pathname="", lineno=1, msg=msg, args=args, exc_info=exc_info
    )


class TestJSONFormatter:
    """Test JSONFormatter output"""

    def setup_method(self):
        self.formatter = JSONFormatter()

    def test_format_basic_fields(self):
        """Test that basic log fields are present in JSON output"""
        record = logging.LogRecord(
            name="src.physics.fluid",
            level=logging.INFO,
            pathname="fluid.py",
            lineno=42,
            msg="CG converged after %d iterations",
            args=(17,),
            exc_info=None
        )
        data = json.loads(self.formatter.format(record))

        assert data["level"] == "INFO"
        assert data["logger"] == "src.physics.fluid"
        assert data["message"] == "CG converged after 17 iterations"
        assert data["line"] == 42
        assert data["timestamp"].endswith("Z")

    def test_format_includes_run_context(self):
        """Test run_id, component and experiment are included when present"""
        record = _record()
        record.run_id = "abc-123"
        record.component = "train"
        record.experiment = "fluid_shapes"
        data = json.loads(self.formatter.format(record))

        assert data["run_id"] == "abc-123"
        assert data["component"] == "train"
        assert data["experiment"] == "fluid_shapes"

    def test_format_excludes_empty_context(self):
        """Test empty context fields are left out"""
        record = _record()
        record.run_id = ""
        data = json.loads(self.formatter.format(record))

        assert "run_id" not in data
        assert "experiment" not in data

    def test_format_includes_step(self):
        """Test an optimisation step passed via extra is included"""
        record = _record()
        record.step = 250
        data = json.loads(self.formatter.format(record))

        assert data["step"] == 250

    def test_format_includes_exception(self):
        """Test exception info is included"""
        try:
            raise FloatingPointError("objective is nan")
        except FloatingPointError:
            exc_info = sys.exc_info()

        record = _record(logging.ERROR, "diverged", exc_info=exc_info)
        data = json.loads(self.formatter.format(record))

        assert "FloatingPointError: objective is nan" in data["exception"]

    def test_format_returns_valid_json(self):
        """Test output is always valid JSON"""
        data = json.loads(self.formatter.format(_record(msg="residual ≤ 1e-5 ✓ \"quoted\"")))
        assert "residual" in data["message"]


class TestSetupLogging:
    """Test setup_logging function"""

    def test_returns_logger(self):
        """Test that setup_logging returns a Logger"""
        logger = setup_logging("test.setup", level="DEBUG")
        assert isinstance(logger, logging.Logger)
        assert logger.name == "test.setup"

    def test_sets_level(self):
        """Test that the logger level is set correctly"""
        logger = setup_logging("test.level", level="warning")
        assert logger.level == logging.WARNING

    def test_uses_json_formatter(self):
        """Test that the handler uses JSONFormatter"""
        logger = setup_logging("test.formatter")
        assert isinstance(logger.handlers[0].formatter, JSONFormatter)

    def test_attaches_run_filter(self):
        """Test that RunFilter is attached"""
        logger = setup_logging("test.filter_attach")
        assert any(isinstance(f, RunFilter) for f in logger.filters)

    def test_no_duplicate_handlers(self):
        """Test that calling setup_logging twice doesn't duplicate handlers"""
        setup_logging("test.dedup")
        logger = setup_logging("test.dedup")
        assert len(logger.handlers) == 1
        assert sum(isinstance(f, RunFilter) for f in logger.filters) == 1

    def test_propagation_disabled(self):
        """Test that propagation to root logger is disabled"""
        assert setup_logging("test.propagate").propagate is False


class TestGetLogger:
    """Test get_logger function"""

    def test_get_logger_with_level(self):
        """Test get_logger with explicit level"""
        assert get_logger("test.get_level", level="ERROR").level == logging.ERROR

    def test_get_logger_creates_new_if_no_handlers(self):
        """Test get_logger configures a logger that has no handlers yet"""
        name = "test.get_new_logger_unique_42"
        logging.getLogger(name).handlers.clear()

        assert len(get_logger(name).handlers) > 0

    def test_get_logger_reuses_configured_logger(self):
        """Test get_logger keeps an existing configuration"""
        configured = setup_logging("test.reuse", level="DEBUG")
        assert get_logger("test.reuse") is configured
        assert configured.level == logging.DEBUG
