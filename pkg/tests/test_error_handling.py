"""
Test error reporting and timing utilities.
"""
import io
import json

import pytest

from app.core.error_handling import (
    EXIT_OK,
    EXIT_PIPELINE_ERROR,
    EXIT_UNEXPECTED,
    reraise_os_errors,
    run_guarded,
)
from app.core.exceptions import SolverConvergenceError, StorageError, ZeroNormError
from app.core.metrics import MetricsCollector


class TestRunGuarded:
    """Exit codes and the JSON error line."""

    def test_success(self):
        assert run_guarded("noop", lambda: None) == EXIT_OK

    def test_pipeline_error(self):
        stream = io.StringIO()

        def fail():
            raise SolverConvergenceError(step=4, residual=1e-3, iterations=50)

        assert run_guarded("gen-data", fail, stream) == EXIT_PIPELINE_ERROR
        payload = json.loads(stream.getvalue())
        assert payload["error"]["code"] == "SOLVER_CONVERGENCE_ERROR"
        assert payload["error"]["command"] == "gen-data"

    def test_unexpected_error(self):
        stream = io.StringIO()

        def crash():
            raise RuntimeError("boom")

        assert run_guarded("train", crash, stream) == EXIT_UNEXPECTED
        assert json.loads(stream.getvalue())["error"]["code"] == "INTERNAL_ERROR"

    def test_error_to_dict(self):
        assert ZeroNormError().to_dict()["error_code"] == "ZERO_NORM"

    def test_os_errors_become_storage_errors(self, tmp_path):
        with pytest.raises(StorageError):
            with reraise_os_errors(str(tmp_path)):
                raise PermissionError("read-only")


class TestMetricsCollector:
    """Timers and medians."""

    def test_timer_records_seconds(self):
        metrics = MetricsCollector()
        for _ in range(3):
            with metrics.timer("fom", {"scenario": "a"}):
                pass
        assert len(metrics.samples("fom_seconds", {"scenario": "a"})) == 3
        assert metrics.median("fom_seconds", {"scenario": "a"}) >= 0.0

    def test_median_of_histogram(self):
        metrics = MetricsCollector()
        for value in [3.0, 1.0, 2.0]:
            metrics.histogram("latency", value)
        assert metrics.median("latency") == 2.0
        assert metrics.get_metrics_summary()["histograms"]["latency"]["count"] == 3

    def test_median_without_samples(self):
        with pytest.raises(KeyError):
            MetricsCollector().median("missing")
