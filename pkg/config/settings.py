"""
Configuration management using Pydantic Settings.
Loads configuration from environment variables with validation.
"""
from pathlib import Path
from typing import Optional, Tuple

from dotenv import load_dotenv
from pydantic import Field, model_validator
from pydantic_settings import BaseSettings

from src.common.exceptions import ConfigurationError

# Load .env file into os.environ so all nested BaseSettings pick up values
_env_path = Path(__file__).resolve().parent.parent / ".env"
load_dotenv(_env_path)


class SolverSettings(BaseSettings):
    """Time stepping, pressure solve and checkpointing configuration"""
    dt: float = Field(default=1.0, gt=0)
    cg_tolerance: float = Field(default=1e-6, gt=0)
    cg_max_iterations: int = Field(default=2000, ge=1)
    buoyancy: Tuple[float, float] = Field(default=(0.0, -0.1))
    checkpoint_threshold: int = Field(default=16, ge=1)
    burger_viscosity_factor: float = Field(default=0.01, ge=0)

    class Config:
        env_prefix = "SOLVER_"


class NetSettings(BaseSettings):
    """Desk-scale U-net configuration"""
    levels: int = Field(default=3, ge=1)
    base_features: int = Field(default=4, ge=1)
    feature_cap: int = Field(default=16, ge=1)
    leaky_slope: float = Field(default=0.1, ge=0)

    class Config:
        env_prefix = "NET_"


class TrainingSettings(BaseSettings):
    """Supervised and differentiable-physics training configuration"""
    batch_size: int = Field(default=8, ge=4, le=16)
    supervised_epochs: int = Field(default=20, ge=0)
    diffphys_epochs: int = Field(default=10, ge=0)
    supervised_lr_start: float = Field(default=1e-3, gt=0)
    supervised_lr_end: float = Field(default=1e-5, gt=0)
    diffphys_lr: float = Field(default=1e-4, gt=0)
    blur_start: float = Field(default=16.0, gt=0)
    blur_end: float = Field(default=2.0, gt=0)
    log_every: int = Field(default=50, ge=1)

    class Config:
        env_prefix = "TRAIN_"


class ShootingSettings(BaseSettings):
    """Iterative (shooting) optimisation configuration"""
    burger_lr: float = Field(default=0.01, gt=0)
    fluid_lr: float = Field(default=0.01, gt=0)
    indirect_lr: float = Field(default=0.1, gt=0)
    init_sigma: float = Field(default=0.01, ge=0)
    ms_decay: float = Field(default=0.7, gt=0, le=1)
    iterations: int = Field(default=300, ge=0)

    class Config:
        env_prefix = "SHOOT_"


class LoggingSettings(BaseSettings):
    """Logging configuration"""
    level: str = Field(default="INFO")
    format: str = Field(default="json")

    class Config:
        env_prefix = "LOG_"


class MonitoringSettings(BaseSettings):
    """Metrics export configuration"""
    textfile: Optional[str] = Field(default=None)
    port: int = Field(default=0, ge=0)

    class Config:
        env_prefix = "METRICS_"


class Settings(BaseSettings):
    """Main settings aggregating all configuration sections"""
    solver: SolverSettings = Field(default_factory=SolverSettings)
    net: NetSettings = Field(default_factory=NetSettings)
    training: TrainingSettings = Field(default_factory=TrainingSettings)
    shooting: ShootingSettings = Field(default_factory=ShootingSettings)
    logging: LoggingSettings = Field(default_factory=LoggingSettings)
    monitoring: MonitoringSettings = Field(default_factory=MonitoringSettings)

    class Config:
        extra = "ignore"

    @model_validator(mode="after")
    def check_schedules(self) -> "Settings":
        """Reject learning-rate and blur schedules that run the wrong way."""
        if self.training.supervised_lr_end > self.training.supervised_lr_start:
            raise ConfigurationError(
                "supervised_lr_end must not exceed supervised_lr_start"
            )
        if self.training.blur_end > self.training.blur_start:
            raise ConfigurationError("blur_end must not exceed blur_start")
        if self.net.feature_cap < self.net.base_features:
            raise ConfigurationError("feature_cap must be >= base_features")
        return self


# Singleton instance - import this in other modules
settings = Settings()
