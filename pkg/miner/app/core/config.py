"""
Core configuration module using pydantic-settings for environment variable management.
"""
import os
from typing import Literal, Optional

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_file=None,  # Set dynamically below
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore"
    )

    # Runtime
    LOG_LEVEL: str = Field(default="INFO", description="Logging level")
    LOG_FORMAT: Literal["console", "json"] = Field(
        default="console", description="Log renderer used outside development"
    )
    ENVIRONMENT: Literal["development", "staging", "production", "test"] = Field(
        default="development", description="Environment"
    )
    THREADS: int = Field(default=1, description="Upper bound on worker threads")
    DEFAULT_SEED: int = Field(default=0, description="Base seed when --seed is not given")

    # Paths
    DATA_DIR: str = Field(default="data", description="Default directory for input datasets")
    OUTPUT_DIR: str = Field(default="output", description="Default directory for run artifacts")
    CSV_DELIMITER: str = Field(default=",", description="Default input column delimiter")

    # Stage 1
    MAX_BINS: int = Field(default=32, description="Maximum bins per feature when deriving conditions")
    MAX_RULE_LENGTH: int = Field(default=6, description="Maximum number of conditions per rule")
    N_RULES: int = Field(default=500, description="Stage-1 rule budget")
    BEAM_WIDTH: int = Field(default=1, description="Beam width for rule growth")
    FOREST_TREES: int = Field(default=100, description="Trees in the forest rule extractor")

    # PORS and solution selection
    SSF_K: int = Field(default=10, description="Solutions selected per PORS round")
    MAX_ROUNDS: int = Field(default=30, description="Maximum PORS expansion rounds")
    TSP_MAX_PASSES: int = Field(default=1000, description="2-opt pass limit for equi-jaccard")
    KMEDOIDS_MAX_ITER: int = Field(default=100, description="SWAP iteration limit for k-medoids")

    # Baselines
    NSGA_POPULATION: int = Field(default=50, description="NSGA-II population size")
    NSGA_GENERATIONS: int = Field(default=1000, description="NSGA-II generations")
    NSGA_MUTATION_RATE: float = Field(default=0.02, description="Per-bit mutation probability")
    NSGA_CROSSOVER_RATE: float = Field(default=0.9, description="Uniform crossover probability")
    GREEDY_BEAM: int = Field(default=10, description="Beam width of the greedy F-beta baseline")

    # Experiments
    TRIALS: int = Field(default=5, description="Repeated trials per experiment")

    @field_validator("LOG_LEVEL")
    @classmethod
    def validate_log_level(cls, v):
        """Only accept standard logging level names."""
        if v.upper() not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"LOG_LEVEL must be a standard logging level, got {v!r}")
        return v.upper()

    @field_validator(
        "THREADS", "MAX_BINS", "MAX_RULE_LENGTH", "N_RULES", "BEAM_WIDTH", "FOREST_TREES",
        "SSF_K", "MAX_ROUNDS", "TSP_MAX_PASSES", "KMEDOIDS_MAX_ITER",
        "NSGA_GENERATIONS", "GREEDY_BEAM", "TRIALS",
    )
    @classmethod
    def validate_positive(cls, v):
        """Counts must be positive."""
        if v < 1:
            raise ValueError("Counts must be at least 1")
        return v

    @field_validator("MAX_BINS")
    @classmethod
    def validate_max_bins(cls, v):
        """A feature needs at least two bins to yield a threshold."""
        if v < 2:
            raise ValueError("MAX_BINS must be at least 2")
        return v

    @field_validator("NSGA_POPULATION")
    @classmethod
    def validate_population(cls, v):
        """Binary tournament pairs parents, so the population must be even."""
        if v < 4 or v % 2:
            raise ValueError("NSGA_POPULATION must be even and at least 4")
        return v

    @field_validator("NSGA_MUTATION_RATE", "NSGA_CROSSOVER_RATE")
    @classmethod
    def validate_rate(cls, v):
        """Rates are probabilities."""
        if not 0.0 <= v <= 1.0:
            raise ValueError("Rates must lie in [0, 1]")
        return v

    @property
    def is_production(self) -> bool:
        """Check if running in production environment."""
        return self.ENVIRONMENT == "production"

    @property
    def is_development(self) -> bool:
        """Check if running in development environment."""
        return self.ENVIRONMENT == "development"


# Global settings instance
def get_settings(env_file: Optional[str] = None) -> Settings:
    if env_file is None:
        env_file = ".env.test" if os.getenv("ENVIRONMENT") == "test" else ".env"
    return Settings(_env_file=env_file)

# Create settings instance at module level
settings = get_settings()
