"""
Configuration management with Pydantic Settings.
Supports loading from environment variables (prefix DGP_) and a .env file.
"""
from typing import Optional

from pydantic import field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-wide settings with environment variable support."""

    # Environment
    environment: str = "development"
    log_level: str = "INFO"

    # Sentry (optional error tracking for benchmark runs)
    sentry_dsn: Optional[str] = None

    # Thread pool width for per-expert / per-point maps (1 = sequential)
    n_workers: int = 1

    # Cholesky jitter escalation for expert Gram matrices, relative to mean diagonal
    cholesky_jitter_start: float = 1e-10
    cholesky_jitter_max: float = 1e-4

    # NPAE K_A solve: jitter escalation, then pseudo-inverse with this rank tolerance
    npae_jitter_start: float = 1e-10
    npae_jitter_max: float = 1e-6
    npae_rank_tol: float = 1e-10

    # Output
    output_dir: str = "results"

    # Location of the UCI Concrete CSV for the acceptance tests
    concrete_csv_path: Optional[str] = None

    model_config = SettingsConfigDict(
        env_prefix="DGP_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    @field_validator(
        "cholesky_jitter_start", "cholesky_jitter_max",
        "npae_jitter_start", "npae_jitter_max", "npae_rank_tol",
    )
    @classmethod
    def validate_positive(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("tolerances must be strictly positive")
        return v

    @field_validator("n_workers")
    @classmethod
    def validate_workers(cls, v: int) -> int:
        if v < 1:
            raise ValueError("N_WORKERS must be at least 1")
        return v

    @model_validator(mode="after")
    def validate_jitter_ranges(self) -> "Settings":
        if self.cholesky_jitter_start > self.cholesky_jitter_max:
            raise ValueError("cholesky_jitter_start must not exceed cholesky_jitter_max")
        if self.npae_jitter_start > self.npae_jitter_max:
            raise ValueError("npae_jitter_start must not exceed npae_jitter_max")
        return self


# Global settings instance
settings = Settings()
