"""
Unit tests for RunContext and RunFilter.
"""
import logging
import unittest
from src.common.correlation import (
    RunContext,
    RunFilter,
    clear_run_id,
    generate_run_id,
    get_component,
    get_experiment,
    get_run_id,
    set_component,
    set_experiment,
    set_run_id,
)


class TestRunId(unittest.TestCase):
    """Tests for run ID functions."""

    def setUp(self):
        clear_run_id()
        set_experiment(None)

    def test_generate_returns_uuid(self):
        rid = generate_run_id()
        self.assertIsInstance(rid, str)
        self.assertEqual(len(rid), 36)
        self.assertEqual(rid.count("-"), 4)

    def test_set_and_get(self):
        set_run_id("run-123")
        self.assertEqual(get_run_id(), "run-123")

    def test_clear(self):
        set_run_id("run-123")
        clear_run_id()
        self.assertIsNone(get_run_id())

    def test_default_is_none(self):
        self.assertIsNone(get_run_id())

    def test_component_set_get(self):
        set_component("train")
        self.assertEqual(get_component(), "train")

    def test_experiment_set_get(self):
        set_experiment("fluid_shapes")
        self.assertEqual(get_experiment(), "fluid_shapes")


class TestRunContext(unittest.TestCase):
    """Tests for RunContext context manager."""

    def setUp(self):
        clear_run_id()
        set_experiment(None)

    def test_auto_generates_id(self):
        with RunContext() as ctx:
            self.assertIsNotNone(ctx.run_id)
            self.assertEqual(get_run_id(), ctx.run_id)

    def test_custom_id(self):
        with RunContext("my-run") as ctx:
            self.assertEqual(ctx.run_id, "my-run")
            self.assertEqual(get_run_id(), "my-run")

    def test_clears_on_exit(self):
        with RunContext("scoped"):
            pass
        self.assertIsNone(get_run_id())

    def test_restores_previous(self):
        set_run_id("outer")
        with RunContext("inner"):
            self.assertEqual(get_run_id(), "inner")
        self.assertEqual(get_run_id(), "outer")

    def test_sets_and_restores_experiment(self):
        set_experiment("burger")
        with RunContext(experiment="fluid_indirect"):
            self.assertEqual(get_experiment(), "fluid_indirect")
        self.assertEqual(get_experiment(), "burger")


class TestRunFilter(unittest.TestCase):
    """Tests for RunFilter."""

    def setUp(self):
        clear_run_id()
        set_component("")
        set_experiment(None)

    def _record(self):
        return logging.LogRecord("test", logging.INFO, "", 1, "msg", (), None)

    def test_injects_context(self):
        set_component("shoot")
        with RunContext("abc", experiment="burger"):
            record = self._record()
            self.assertTrue(RunFilter().filter(record))
        self.assertEqual(record.run_id, "abc")
        self.assertEqual(record.component, "shoot")
        self.assertEqual(record.experiment, "burger")

    def test_empty_strings_without_context(self):
        record = self._record()
        RunFilter().filter(record)
        self.assertEqual(record.run_id, "")
        self.assertEqual(record.experiment, "")


if __name__ == "__main__":
    unittest.main()
