"""
Validated configuration of one CLI invocation.

Precedence: command-line flags, then the dataset manifest, then the
``config.settings`` defaults. ``RunConfig`` only holds what was given on the
command line; commands resolve the rest.
"""
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, Field, ValidationError, model_validator

from src.common.exceptions import ConfigurationError
from src.control.trace import SCHEMES
from src.data.manifest import EXPERIMENTS

COMMANDS = ("gen", "train", "reconstruct", "shoot", "eval", "render")
STAGES = ("supervised", "diffphys")
MODELS = ("all", "cfe", "ops")


class RunConfig(BaseModel):
    command: Literal["gen", "train", "reconstruct", "shoot", "eval", "render"]
    experiment: Optional[str] = None
    manifest: Optional[Path] = None
    out: Optional[Path] = None
    seed: int = Field(default=0, ge=0)
    scheme: str = "staggered"
    schemes: List[str] = Field(default_factory=list)
    stage: Literal["supervised", "diffphys"] = "supervised"
    init: List[Path] = Field(default_factory=list)
    warm_start: Optional[Path] = None
    iters: Optional[int] = Field(default=None, ge=0)
    lr: Optional[float] = Field(default=None, gt=0)
    alpha: Optional[float] = Field(default=None, ge=0)
    example: Optional[str] = None
    steps: Optional[int] = Field(default=None, ge=1)
    epochs: Optional[int] = Field(default=None, ge=0)
    batch_size: Optional[int] = Field(default=None, ge=1)
    train_count: Optional[int] = Field(default=None, ge=0)
    test_count: Optional[int] = Field(default=None, ge=0)
    shapes: Optional[int] = Field(default=None, ge=1)
    workers: int = Field(default=1, ge=1)
    model: Literal["all", "cfe", "ops"] = "all"
    successive: bool = False
    multiscale: bool = False
    shooting: bool = False
    reference: bool = False
    timing: bool = False
    limit: Optional[int] = Field(default=None, ge=1)
    inputs: List[Path] = Field(default_factory=list)
    sequence: bool = False

    @model_validator(mode="after")
    def check_references(self) -> "RunConfig":
        if self.experiment is not None and self.experiment not in EXPERIMENTS:
            raise ConfigurationError(
                f"Unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}"
            )
        for scheme in [self.scheme] + self.schemes:
            if scheme not in SCHEMES:
                raise ConfigurationError(f"Unknown scheme {scheme!r}; expected one of {SCHEMES}")
        if self.command == "gen" and self.manifest is None and self.experiment is None:
            raise ConfigurationError("gen needs --experiment or --manifest")
        if self.command in ("train", "reconstruct", "shoot", "eval") and self.manifest is None:
            raise ConfigurationError(f"{self.command} needs --manifest")
        if self.command == "render" and not self.inputs:
            raise ConfigurationError("render needs at least one input file")
        reads = list(self.init) + list(self.inputs)
        if self.command != "gen" and self.manifest is not None:
            reads.append(self.manifest)
        if self.warm_start is not None:
            reads.append(self.warm_start)
        missing = [str(p) for p in reads if not p.exists()]
        if missing:
            raise ConfigurationError(f"Input paths do not exist: {', '.join(missing)}")
        return self

    @classmethod
    def from_args(cls, **values) -> "RunConfig":
        try:
            return cls(**{k: v for k, v in values.items() if v is not None})
        except ValidationError as e:
            raise ConfigurationError(f"Invalid {values.get('command')} options: {e}") from e
