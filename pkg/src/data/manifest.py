"""
Experiment manifests.

A manifest is the JSON document ``<name>/manifest.json`` describing how a
dataset was generated (grid, time step, step count, physical constants, seed,
split sizes) and listing every file it contains with a sha256 checksum.
A manifest without examples is a generation request.
"""
import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, ValidationError, model_validator

from config.settings import settings
from src.common.exceptions import ConfigurationError, DatasetError
from src.common.logging_config import get_logger
from src.common.retry import retry_on_io_error
from src.data.pdtf import file_checksum
from src.fields.grid import GridSpec

logger = get_logger(__name__)

MANIFEST_NAME = "manifest.json"
EXPERIMENTS = ("burger", "fluid_natural", "fluid_shapes", "fluid_indirect")
ExperimentKind = Literal["burger", "fluid_natural", "fluid_shapes", "fluid_indirect"]
Split = Literal["train", "test"]


class FileEntry(BaseModel):
    path: str
    sha256: str = Field(pattern=r"^[0-9a-f]{64}$")


class ExampleEntry(BaseModel):
    name: str
    split: Split
    files: List[FileEntry]
    meta: Dict[str, Any] = Field(default_factory=dict)


class Counts(BaseModel):
    train: int = Field(ge=0)
    test: int = Field(ge=0)

    @property
    def total(self) -> int:
        return self.train + self.test


class ExperimentManifest(BaseModel):
    version: int = 1
    name: str
    experiment: ExperimentKind
    dims: Tuple[int, ...]
    spacing: Tuple[float, ...] = ()
    dt: float = Field(gt=0)
    steps: int = Field(ge=1)
    nu: Optional[float] = Field(default=None, ge=0)
    buoyancy: Tuple[float, ...] = ()
    cg_tolerance: float = Field(gt=0)
    seed: int = Field(ge=0)
    counts: Counts
    shapes_per_example: int = Field(default=1, ge=1)
    params: Dict[str, float] = Field(default_factory=dict)
    domain: Optional[Dict[str, Any]] = None
    examples: List[ExampleEntry] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_layout(self) -> "ExperimentManifest":
        rank = 1 if self.experiment == "burger" else 2
        if len(self.dims) != rank:
            raise ValueError(f"{self.experiment} needs a {rank}D grid, got dims {self.dims}")
        if self.examples:
            train = sum(1 for e in self.examples if e.split == "train")
            test = len(self.examples) - train
            if (train, test) != (self.counts.train, self.counts.test):
                raise ValueError(
                    f"counts {self.counts.train}/{self.counts.test} do not match the "
                    f"listing {train}/{test}"
                )
            names = [e.name for e in self.examples]
            if len(set(names)) != len(names):
                raise ValueError("Duplicate example names in listing")
        return self

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.dims, self.spacing)

    @property
    def generated(self) -> bool:
        return bool(self.examples)

    def split(self, split: Split) -> List[ExampleEntry]:
        return [e for e in self.examples if e.split == split]

    def example(self, name: str) -> ExampleEntry:
        for entry in self.examples:
            if entry.name == name:
                return entry
        raise DatasetError(f"Dataset {self.name} has no example {name}")


_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "burger": {"dims": (32,), "steps": 32, "counts": {"train": 64, "test": 16}},
    "fluid_natural": {
        "dims": (32, 32), "steps": 64, "counts": {"train": 32, "test": 8}, "buoyancy": (0.0, 0.0),
    },
    "fluid_shapes": {
        "dims": (32, 32), "steps": 16, "counts": {"train": 64, "test": 8}, "buoyancy": (0.0, 0.0),
    },
    "fluid_indirect": {"dims": (32, 32), "steps": 16, "counts": {"train": 360, "test": 20}},
}

# Random initial-state distributions, in cells (lengths) or grid units.
_PARAMS: Dict[str, Dict[str, float]] = {
    "burger": {
        "amplitude_min": 0.5, "amplitude_max": 1.5,
        "width_min": 1.5, "width_max": 4.0,
        "force_amplitude": 0.05, "force_width_min": 2.0, "force_width_max": 6.0,
    },
    "fluid_natural": {
        "blobs_min": 1, "blobs_max": 3, "blob_radius_min": 2.0, "blob_radius_max": 5.0,
        "potential_smoothing": 3.0, "velocity_scale": 0.5, "cleanup_passes": 3,
    },
    "fluid_shapes": {"size_min": 4.0, "size_max": 8.0, "mass": 40.0},
    "fluid_indirect": {
        "blob_radius": 3.0, "bucket_depth": 6.0, "wall_thickness": 1.0, "control_width": 6.0,
    },
}


def default_manifest(
    experiment: str, name: Optional[str] = None, seed: int = 0, **overrides
) -> ExperimentManifest:
    """
    Generation request with the desk-scale defaults of ``experiment``.
    ``overrides`` replace top-level fields; ``params`` entries are merged.
    """
    if experiment not in EXPERIMENTS:
        raise ConfigurationError(
            f"Unknown experiment {experiment!r}; expected one of {EXPERIMENTS}"
        )
    fluid = experiment != "burger"
    payload: Dict[str, Any] = {
        "name": name or experiment,
        "experiment": experiment,
        "dt": settings.solver.dt,
        "cg_tolerance": settings.solver.cg_tolerance,
        "buoyancy": tuple(settings.solver.buoyancy) if fluid else (),
        "seed": seed,
        **_DEFAULTS[experiment],
        "params": dict(_PARAMS[experiment]),
    }
    payload["params"].update(overrides.pop("params", {}) or {})
    payload.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentManifest(**payload)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid {experiment} manifest: {e}") from e


@retry_on_io_error(max_attempts=3)
def write_manifest(root: Path, manifest: ExperimentManifest) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    path = root / MANIFEST_NAME
    path.write_text(manifest.model_dump_json(indent=2) + "\n")
    logger.debug(f"Wrote manifest {path} ({len(manifest.examples)} examples)")
    return path


def manifest_path(location) -> Path:
    """Accept either the dataset directory or the manifest file itself."""
    location = Path(location)
    return location / MANIFEST_NAME if location.is_dir() else location


def load_manifest(location, verify: bool = True) -> ExperimentManifest:
    """
    Parse and validate a manifest. With ``verify`` every listed file must
    exist and match its checksum.
    """
    path = manifest_path(location)
    if not path.exists():
        raise DatasetError(f"Manifest not found: {path}")
    try:
        manifest = ExperimentManifest(**json.loads(path.read_text()))
    except (ValidationError, json.JSONDecodeError) as e:
        raise DatasetError(f"Invalid manifest {path}: {e}") from e
    if verify:
        verify_files(path.parent, manifest)
    return manifest


def verify_files(root: Path, manifest: ExperimentManifest) -> None:
    for entry in manifest.examples:
        for item in entry.files:
            target = Path(root) / item.path
            if not target.exists():
                logger.error(f"Dataset file missing: {target}")
                raise DatasetError(f"Missing dataset file {item.path}")
            if file_checksum(target) != item.sha256:
                logger.error(f"Checksum mismatch for {target}")
                raise DatasetError(f"Checksum mismatch for {item.path}")
