"""
Loading generated datasets into systems, reconstruction tasks and
supervised training samples.
"""
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from src.common.exceptions import DatasetError
from src.common.logging_config import get_logger
from src.data.generate import bucket_masks, burger_viscosity, fluid_domain
from src.data.manifest import ExampleEntry, ExperimentManifest, Split, load_manifest, manifest_path
from src.data.store import has_value, load_sequence, load_value
from src.fields.grid import StaggeredField
from src.nets.models import scales_for
from src.optimize.training import CFESample, ControlExample, OPSample
from src.physics.domain import PoissonConfig
from src.physics.systems import BurgerSystem, ControlledSystem, FluidSystem

logger = get_logger(__name__)

DEFAULT_CONTROL = {
    "fluid_natural": "direct",
    "fluid_shapes": "stream",
    "fluid_indirect": "indirect",
}


class Dataset:
    """A generated dataset on disk: its manifest plus field access per example."""

    def __init__(self, root, manifest: ExperimentManifest):
        self.root = Path(root)
        self.manifest = manifest

    @classmethod
    def open(cls, location, verify: bool = True) -> "Dataset":
        manifest = load_manifest(location, verify=verify)
        if not manifest.generated:
            raise DatasetError(f"{manifest_path(location)} lists no examples; run gen first")
        return cls(manifest_path(location).parent, manifest)

    @property
    def experiment(self) -> str:
        return self.manifest.experiment

    def entries(self, split: Optional[Split] = None) -> List[ExampleEntry]:
        return self.manifest.examples if split is None else self.manifest.split(split)

    def system(self, control_mode: Optional[str] = None) -> ControlledSystem:
        m = self.manifest
        if m.experiment == "burger":
            return BurgerSystem(m.grid, m.dt, burger_viscosity(m))
        return FluidSystem(
            fluid_domain(m),
            m.dt,
            control_mode or DEFAULT_CONTROL[m.experiment],
            PoissonConfig(tolerance=m.cg_tolerance),
        )

    def value(self, name: str, field: str):
        return load_value(self.root / name, field, self.manifest.grid)

    def sequence(self, name: str, field: str) -> list:
        return load_sequence(self.root / name, field, self.manifest.grid)

    def observations(self, name: str) -> list:
        """Ground-truth observation sequence (Burger's and natural flow only)."""
        field = "u" if self.experiment == "burger" else "density"
        if self.experiment not in ("burger", "fluid_natural"):
            raise DatasetError(f"{self.experiment} datasets store no ground-truth rollout")
        return self.sequence(name, field)

    def initial_state(self, name: str, shape: Optional[int] = None) -> tuple:
        spec = self.manifest.grid
        if self.experiment == "burger":
            return (self.sequence(name, "u")[0],)
        if self.experiment == "fluid_natural":
            return (self.sequence(name, "density")[0], self.sequence(name, "velocity")[0])
        field = "density0" if shape is None else f"density0_{shape}"
        return (self.value(name, field), StaggeredField.zeros(spec))

    def target(self, name: str, shape: Optional[int] = None):
        return self.value(name, "target" if shape is None else f"target_{shape}")

    def control_example(self, name: str, horizon: Optional[int] = None) -> ControlExample:
        horizon = horizon or self.manifest.steps
        return ControlExample(self.initial_state(name), self.target(name), horizon)

    def control_examples(
        self, split: Optional[Split] = None, horizon: Optional[int] = None
    ) -> List[ControlExample]:
        return [self.control_example(e.name, horizon) for e in self.entries(split)]

    def shape_parts(self, name: str) -> Dict[str, list]:
        """Per-shape initial states and targets of a multi-shape example."""
        count = self.manifest.shapes_per_example
        if count == 1 or not has_value(self.root / name, "density0_0"):
            return {"initial": [self.initial_state(name)], "target": [self.target(name)]}
        return {
            "initial": [self.initial_state(name, k) for k in range(count)],
            "target": [self.target(name, k) for k in range(count)],
        }

    def bucket_region(self, name: str) -> np.ndarray:
        entry = self.manifest.example(name)
        return bucket_masks(self.manifest)[int(entry.meta["bucket"])]

    def op_samples(self, split: Split = "train", horizon: Optional[int] = None) -> List[OPSample]:
        """
        Midpoint samples for every power-of-two scale ``n <= horizon`` from the
        stored rollouts, with window starts every ``n / 2`` steps.
        """
        horizon = horizon or self.manifest.steps
        samples = []
        for entry in self.entries(split):
            obs = self.observations(entry.name)
            for n in scales_for(horizon):
                for start in range(0, len(obs) - n, max(1, n // 2)):
                    samples.append(OPSample(n, obs[start], obs[start + n], obs[start + n // 2]))
        logger.debug(f"Collected {len(samples)} OP samples from {self.manifest.name}/{split}")
        return samples

    def cfe_samples(self, split: Split = "train") -> List[CFESample]:
        """
        One sample per stored step: the ground-truth force for Burger's, the
        next velocity for natural flow.
        """
        samples = []
        for entry in self.entries(split):
            if self.experiment == "burger":
                u = self.sequence(entry.name, "u")
                force = self.value(entry.name, "force")
                samples.extend(CFESample((u[t],), u[t + 1], force=force) for t in range(len(u) - 1))
            elif self.experiment == "fluid_natural":
                rho = self.sequence(entry.name, "density")
                v = self.sequence(entry.name, "velocity")
                samples.extend(
                    CFESample((rho[t], v[t]), rho[t + 1], next_velocity=v[t + 1])
                    for t in range(len(rho) - 1)
                )
            else:
                raise DatasetError(f"{self.experiment} datasets have no supervised CFE targets")
        return samples
