from pathlib import Path

from pydantic import Field
from pydantic_settings import BaseSettings

from .. import __version__

PACKAGE_FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


class Settings(BaseSettings):
    # Fixture store and outputs
    fixtures_path: Path = Field(default=PACKAGE_FIXTURES, alias="FLUID_FCFS_FIXTURES")
    output_dir: Path = Field(default=Path("out"), alias="FLUID_FCFS_OUT_DIR")

    # Logging
    log_level: str = Field(default="INFO", alias="FLUID_FCFS_LOG_LEVEL")
    debug: bool = Field(default=False, alias="DEBUG")

    # Numerical tolerances
    crp_tolerance: float = Field(default=1e-9, gt=0, alias="FLUID_FCFS_CRP_TOL")
    merge_tolerance: float = Field(default=1e-9, gt=0, alias="FLUID_FCFS_MERGE_TOL")
    lp_tolerance: float = Field(default=1e-11, gt=0, alias="FLUID_FCFS_LP_TOL")

    # Search limits
    exhaustive_limit: int = Field(default=10, ge=1, alias="FLUID_FCFS_EXHAUSTIVE_LIMIT")
    max_fluid_events: int = Field(default=10000, ge=1, alias="FLUID_FCFS_MAX_EVENTS")

    # Simulation protocol defaults
    warmup_services: int = Field(default=100_000, ge=0, alias="FLUID_FCFS_WARMUP")
    measured_services: int = Field(default=1_000_000, ge=1, alias="FLUID_FCFS_SERVICES")
    replications: int = Field(default=100, ge=2, alias="FLUID_FCFS_REPS")
    seed: int = Field(default=20240101, ge=0, alias="FLUID_FCFS_SEED")
    jobs: int = Field(default=1, ge=1, alias="FLUID_FCFS_JOBS")
    rng_block_size: int = Field(default=4096, ge=16, alias="FLUID_FCFS_RNG_BLOCK")

    tool_version: str = __version__

    model_config = {"env_file": ".env", "extra": "ignore"}


settings = Settings()
