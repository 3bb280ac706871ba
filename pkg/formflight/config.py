from __future__ import annotations

import os
from functools import lru_cache
from pathlib import Path

import structlog
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

logger = structlog.get_logger()


def _env_flag(name: str, default: str) -> bool:
    return os.getenv(name, default).lower() == "true"


class Settings(BaseModel):
    """Runtime settings for the formation toolkit."""

    # defaults come from the environment through default_factory and must be validated too
    model_config = ConfigDict(case_sensitive=True, validate_default=True)

    # Output
    output_dir: Path = Field(
        default_factory=lambda: Path(os.getenv("FORMFLIGHT_OUTPUT_DIR", "runs")),
        description="Default directory for command outputs",
    )

    # Parallelism
    jobs: int = Field(
        default_factory=lambda: int(os.getenv("FORMFLIGHT_JOBS", "1")),
        ge=1,
        le=256,
        description="Maximum worker processes for independent scenarios",
    )

    # Resource limits
    max_turbulence_samples: int = Field(
        default_factory=lambda: int(os.getenv("FORMFLIGHT_MAX_TURBULENCE_SAMPLES", "8388608")),
        ge=1024,
        le=1_073_741_824,
        description="Largest turbulence grid that may be synthesized",
    )
    divergence_threshold: float = Field(
        default_factory=lambda: float(os.getenv("FORMFLIGHT_DIVERGENCE_THRESHOLD", "1e9")),
        gt=0.0,
        description="State magnitude treated as numerical blow-up",
    )

    # Logging and monitoring
    log_level: str = Field(
        default_factory=lambda: os.getenv("FORMFLIGHT_LOG_LEVEL", "INFO"),
        description="Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)",
    )
    metrics_enabled: bool = Field(
        default_factory=lambda: _env_flag("FORMFLIGHT_METRICS_ENABLED", "false"),
        description="Write a Prometheus textfile next to command outputs",
    )

    # Development and debugging
    debug: bool = Field(
        default_factory=lambda: _env_flag("FORMFLIGHT_DEBUG", "false"),
        description="Include tracebacks in error documents",
    )

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        valid_levels = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
        if v.upper() not in valid_levels:
            raise ValueError(f"log_level must be one of {valid_levels}")
        return v.upper()

    @field_validator("output_dir")
    @classmethod
    def validate_output_dir(cls, v: Path) -> Path:
        if not str(v).strip():
            raise ValueError("output_dir cannot be empty")
        return v

    @model_validator(mode="after")
    def validate_parallelism(self) -> Settings:
        cpus = os.cpu_count() or 1
        if self.jobs > cpus:
            logger.warning(
                "jobs exceeds available CPUs, workers will oversubscribe",
                jobs=self.jobs,
                cpus=cpus,
            )
        return self

    def get_env_info(self) -> dict:
        """Get environment information for debugging."""
        return {
            "output_dir": str(self.output_dir),
            "jobs": self.jobs,
            "max_turbulence_samples": self.max_turbulence_samples,
            "log_level": self.log_level,
            "metrics_enabled": self.metrics_enabled,
            "debug": self.debug,
        }


@lru_cache
def get_settings() -> Settings:
    """Get cached settings instance with validation."""
    try:
        settings = Settings()
        logger.debug("Configuration loaded successfully", **settings.get_env_info())
        return settings
    except Exception as e:
        logger.error("Failed to load configuration", error=str(e))
        raise
