"""SpinLab configuration module."""

import os
from functools import lru_cache

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Numerical settings shared by all pipelines.

    Every field can be overridden through a ``SPINLAB_``-prefixed
    environment variable or a ``.env`` file.
    """

    model_config = SettingsConfigDict(
        env_prefix="SPINLAB_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Application
    app_name: str = "SpinLab"
    log_level: str = "INFO"
    log_json: bool = True

    # Enumeration
    threads: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1)
    enumeration_budget: int = Field(default=20_000_000, ge=1)
    enumeration_block_size: int = Field(default=2**15, ge=1)
    max_ursell_points: int = 6
    zero_tolerance: float = 1e-13
    normalizer_tolerance: float = 1e-12

    # Transfer operators
    max_transfer_states: int = 256
    degenerate_tolerance: float = 1e-12
    eigvec_condition_cap: float = 1e10

    # Lee-Yang zeros and wedge certificates
    max_fugacity_sites: int = 12
    root_residual_tolerance: float = 1e-10
    kappa_cap: float = 10.0
    kappa_grid_points: int = 256
    kappa_refine_tolerance: float = 1e-6
    kappa_max_refinements: int = 6
    wedge_u_points: int = 24
    wedge_alpha_points: int = 32
    wedge_u_span: float = 64.0

    # Cluster expansion
    cluster_epsilon: float = 1.0 / 6.0
    polymer_max_size: int = 5
    polymer_budget: int = 1_000_000
    m_infinity: float = 10.0
    field_cap: float = 64.0
    field_start: float = 2.0**-4
    field_grid_ratio: float = 2.0**0.25

    # Maximum-principle checks
    boundary_points: int = 512
    interior_points: int = 128
    max_principle_tolerance: float = 1e-9
    max_principle_refinements: int = 1


@lru_cache
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()
