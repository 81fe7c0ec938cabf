"""
Unit tests for the exception hierarchy, random streams and logging setup.
"""
import json
import logging

import numpy as np
import pytest
import structlog

from app.core.exceptions import (
    DatasetError,
    DatasetLoadError,
    EmptyFrontError,
    ExperimentError,
    InvalidConfigurationError,
    LabelError,
    RuleMinerError,
    SelectionError,
    UnknownSsfMethodError,
)
from app.core.seeding import STREAMS, derive_seed, make_rng
from app.telemetry.logging import add_service_info, bind_run_context, round_floats, setup_logging


class TestExceptions:
    """Test error records and the hierarchy."""

    def test_to_dict(self):
        """Test the machine-readable error record."""
        error = DatasetLoadError("Cannot read dataset", path="missing.csv")
        record = error.to_dict()

        assert record["error"] == "DATASET_LOAD_FAILED"
        assert record["message"] == "Cannot read dataset"
        assert record["details"] == {"path": "missing.csv"}
        assert record["exit_code"] == 1
        json.dumps(record, default=str)

    def test_hierarchy(self):
        """Test that specific errors are caught by their base classes."""
        assert issubclass(LabelError, DatasetError)
        assert issubclass(UnknownSsfMethodError, SelectionError)
        assert issubclass(EmptyFrontError, RuleMinerError)

    def test_context_merges_with_details(self):
        """Test that explicit details and named context are combined."""
        error = InvalidConfigurationError("bad n", config_key="n", details={"n": 3})
        assert error.details == {"n": 3, "config_key": "n"}

    def test_experiment_error_carries_cause(self):
        """Test that trial context and the cause's details are attached."""
        cause = UnknownSsfMethodError(method="nope")
        error = ExperimentError("trial failed", trial=2, method="pors:nope", cause=cause)

        assert error.error_code == "EXPERIMENT_FAILED"
        assert error.details["trial"] == 2
        assert error.details["cause"] == "UNKNOWN_SSF_METHOD"
        assert error.details["method"] == "pors:nope"


class TestSeeding:
    """Test named random streams."""

    def test_derive_seed_is_stable(self):
        """Test that equal inputs give equal seeds."""
        assert derive_seed(7, "split") == derive_seed(7, "split")

    def test_streams_are_distinct(self):
        """Test that different streams of one base seed differ."""
        seeds = {derive_seed(7, stream) for stream in STREAMS}
        assert len(seeds) == len(STREAMS)

    def test_base_seeds_are_distinct(self):
        """Test that different base seeds give different streams."""
        assert derive_seed(1, "ssf") != derive_seed(2, "ssf")

    def test_unknown_stream(self):
        """Test that unknown stream names are rejected."""
        with pytest.raises(KeyError):
            derive_seed(0, "weather")

    def test_make_rng_reproducible(self):
        """Test that generators of the same stream draw the same numbers."""
        a = make_rng(3, "nsga2").random(5)
        b = make_rng(3, "nsga2").random(5)
        np.testing.assert_array_equal(a, b)


class TestLogging:
    """Test structured logging processors."""

    def test_add_service_info(self):
        """Test service metadata on every event."""
        event = add_service_info(None, "info", {"event": "pors_started"})
        assert event["service"] == "pors-rules"
        assert "environment" in event

    def test_round_floats(self):
        """Test that float context is rounded and other values kept."""
        event = round_floats(None, "info", {"event": "x", "train_hv": 0.123456789, "rounds": 3})
        assert event["train_hv"] == 0.123457
        assert event["rounds"] == 3

    def test_setup_logging_level(self):
        """Test that an explicit level is applied to the root logger."""
        setup_logging("DEBUG")
        assert logging.getLogger().level == logging.DEBUG
        setup_logging("WARNING")
        assert logging.getLogger().level == logging.WARNING

    def test_run_context_replaced_per_command(self):
        """Test that binding a new command drops the previous context."""
        bind_run_context(command="stage1", seed=3)
        bind_run_context(command="select", seed=0)
        context = structlog.contextvars.get_contextvars()

        assert context == {"command": "select", "seed": 0}
        structlog.contextvars.clear_contextvars()
