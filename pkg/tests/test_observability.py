"""
Tests for structured logging and runtime settings.
"""

import io
import json
import sys

import pytest
from structlog.testing import capture_logs

from ssni.config import ExecutionMode, LogFormat, LoggingSettings, RuntimeSettings, settings
from ssni.errors import ConfigError, NonFiniteError, SSNIError, TrainingDivergedError
from ssni.utils.logger import get_logger, log_attack_step, log_stage, log_training_step, setup_logging


class TestLogHelpers:
    def test_stage_event(self):
        with capture_logs() as logs:
            log_stage("calibrate", seed=3)
        assert logs == [{"event": "stage", "stage": "calibrate", "seed": 3, "log_level": "info"}]

    def test_training_step_event(self):
        with capture_logs() as logs:
            log_training_step("denoiser", 100, 0.25, heldout=0.3)
        (entry,) = logs
        assert entry["event"] == "training_step"
        assert entry["model"] == "denoiser"
        assert entry["step"] == 100
        assert entry["heldout"] == 0.3

    def test_attack_step_is_debug(self):
        with capture_logs() as logs:
            log_attack_step("pgd_eot", 4, 1.5)
        (entry,) = logs
        assert entry["log_level"] == "debug"
        assert entry["iteration"] == 4


class TestRendering:
    @pytest.fixture
    def restore_logging(self, monkeypatch):
        yield monkeypatch
        monkeypatch.undo()
        setup_logging()

    def test_json_format(self, restore_logging):
        buffer = io.StringIO()
        restore_logging.setattr(settings.logging, "format", LogFormat.JSON)
        restore_logging.setattr(settings.logging, "level", "DEBUG")
        restore_logging.setattr(sys, "stderr", buffer)
        setup_logging()
        get_logger("render-check").info("hello", answer=42)
        record = json.loads(buffer.getvalue().strip().splitlines()[-1])
        assert record["event"] == "hello"
        assert record["answer"] == 42
        assert record["level"] == "info"
        assert "timestamp" in record

    def test_level_filter(self, restore_logging):
        buffer = io.StringIO()
        restore_logging.setattr(settings.logging, "format", LogFormat.JSON)
        restore_logging.setattr(settings.logging, "level", "WARNING")
        restore_logging.setattr(sys, "stderr", buffer)
        setup_logging()
        get_logger("render-check").info("dropped")
        get_logger("render-check").warning("kept")
        events = [json.loads(line)["event"] for line in buffer.getvalue().strip().splitlines()]
        assert events == ["kept"]


class TestSettings:
    def test_deterministic_mode_forces_one_worker(self):
        runtime = RuntimeSettings(mode="deterministic", num_workers=4)
        assert runtime.num_workers == 1
        assert runtime.float64

    def test_fast_mode_keeps_workers(self):
        runtime = RuntimeSettings(mode="fast", num_workers=4)
        assert runtime.num_workers == 4
        assert not runtime.deterministic

    def test_environment_prefix(self, monkeypatch):
        monkeypatch.setenv("SSNI_MODE", "fast")
        assert RuntimeSettings().mode == ExecutionMode.FAST

    def test_log_format_from_environment(self, monkeypatch):
        monkeypatch.setenv("SSNI_LOG_FORMAT", "json")
        assert LoggingSettings().format == LogFormat.JSON


def test_error_hierarchy():
    assert issubclass(ConfigError, ValueError)
    assert issubclass(ConfigError, SSNIError)
    assert issubclass(TrainingDivergedError, NonFiniteError)
    assert issubclass(NonFiniteError, RuntimeError)
