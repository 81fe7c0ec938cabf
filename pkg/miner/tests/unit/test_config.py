"""
Unit tests for configuration module.
"""
import os
from unittest.mock import patch

import pytest
from pydantic import ValidationError

from app.core.config import Settings, get_settings


class TestSettings:
    """Test the Settings configuration class."""

    def test_default_settings(self):
        """Test default configuration values."""
        with patch.dict(os.environ, {}, clear=True):
            settings = Settings()

        assert settings.ENVIRONMENT == "development"
        assert settings.LOG_LEVEL == "INFO"
        assert settings.MAX_BINS == 32
        assert settings.MAX_RULE_LENGTH == 6
        assert settings.N_RULES == 500
        assert settings.SSF_K == 10
        assert settings.MAX_ROUNDS == 30
        assert settings.TRIALS == 5
        assert settings.NSGA_POPULATION == 50
        assert settings.NSGA_MUTATION_RATE == 0.02

    def test_production_settings(self):
        """Test production configuration detection."""
        with patch.dict(os.environ, {"ENVIRONMENT": "production"}):
            settings = Settings()
            assert settings.is_production is True
            assert settings.is_development is False

    def test_development_settings(self):
        """Test development configuration detection."""
        with patch.dict(os.environ, {"ENVIRONMENT": "development"}):
            settings = Settings()
            assert settings.is_development is True
            assert settings.is_production is False

    def test_path_overrides(self):
        """Test environment overrides for default paths."""
        with patch.dict(os.environ, {"DATA_DIR": "/srv/datasets", "OUTPUT_DIR": "/srv/runs"}):
            settings = Settings()
            assert settings.DATA_DIR == "/srv/datasets"
            assert settings.OUTPUT_DIR == "/srv/runs"

    def test_search_settings(self):
        """Test PORS and baseline knobs from the environment."""
        with patch.dict(os.environ, {
            "SSF_K": "15",
            "MAX_ROUNDS": "12",
            "NSGA_GENERATIONS": "200",
            "GREEDY_BEAM": "4",
        }):
            settings = Settings()
            assert settings.SSF_K == 15
            assert settings.MAX_ROUNDS == 12
            assert settings.NSGA_GENERATIONS == 200
            assert settings.GREEDY_BEAM == 4

    def test_log_level_is_normalised(self):
        """Test that log levels are upper-cased."""
        with patch.dict(os.environ, {"LOG_LEVEL": "debug"}):
            assert Settings().LOG_LEVEL == "DEBUG"

    def test_unknown_log_level_rejected(self):
        """Test that non-standard log levels fail validation."""
        with patch.dict(os.environ, {"LOG_LEVEL": "chatty"}):
            with pytest.raises(ValidationError):
                Settings()

    @pytest.mark.parametrize("key,value", [
        ("SSF_K", "0"),
        ("THREADS", "-1"),
        ("MAX_BINS", "1"),
        ("NSGA_POPULATION", "51"),
        ("NSGA_POPULATION", "2"),
        ("NSGA_MUTATION_RATE", "1.5"),
    ])
    def test_invalid_values_rejected(self, key, value):
        """Test validators on counts, rates and the population size."""
        with patch.dict(os.environ, {key: value}):
            with pytest.raises(ValidationError):
                Settings()

    def test_invalid_environment_rejected(self):
        """Test that unknown environments fail validation."""
        with patch.dict(os.environ, {"ENVIRONMENT": "invalid"}):
            with pytest.raises(ValidationError):
                Settings()

    def test_get_settings_reads_env_file(self, tmp_path):
        """Test that get_settings loads values from a dotenv file."""
        env_file = tmp_path / ".env"
        env_file.write_text("SSF_K=7\nTRIALS=2\n", encoding="utf-8")
        with patch.dict(os.environ, {}, clear=True):
            settings = get_settings(str(env_file))
        assert settings.SSF_K == 7
        assert settings.TRIALS == 2
