"""
Dataset generation for the Burger's, natural-flow, shape-transition and
indirect-control experiments.

Every example is a pure function of ``(manifest, index)``: example ``k`` draws
from its own PCG64 stream ``SeedSequence(manifest.seed, spawn_key=(k,))``, so
examples can be generated in any order or in parallel and a fixed seed always
gives bit-identical files.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from src.common.exceptions import ConfigurationError
from src.common.logging_config import get_logger
from src.data.manifest import ExampleEntry, ExperimentManifest, write_manifest
from src.data.shapes import ShapeLibrary, normalize_mass
from src.data.store import save_sequence, save_value
from src.fields.grid import CenteredField, GridSpec, StaggeredField
from src.fields.operators import blur, curl2d, interpolate_linear
from src.monitoring.metrics import get_metrics_collector
from src.physics.domain import DomainSpec, PoissonConfig
from src.physics.solver import default_viscosity
from src.physics.systems import BurgerSystem, FluidSystem

logger = get_logger(__name__)


def example_rng(seed: int, index: int) -> np.random.Generator:
    """Independent, portable stream for example ``index`` of a dataset seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


@dataclass
class GeneratedExample:
    values: Dict[str, Any] = field(default_factory=dict)
    sequences: Dict[str, List[Any]] = field(default_factory=dict)
    meta: Dict[str, Any] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Systems and domains
# ---------------------------------------------------------------------------


def indirect_domain(
    spec: GridSpec, params: Dict[str, float], buoyancy=None
) -> Tuple[DomainSpec, List[np.ndarray]]:
    """
    Open-top box with three buckets along the top separated by walls and a
    peripheral control region (left, right and bottom strips below the buckets).

    Returns the domain and one boolean mask per bucket.
    """
    nx, ny = spec.dims
    depth = int(params.get("bucket_depth", 6))
    wall = max(1, int(params.get("wall_thickness", 1)))
    strip = max(1, int(round(params.get("control_width", nx / 5))))
    if 3 * wall + 6 > nx or depth + 2 * strip + 4 > ny:
        raise ConfigurationError(f"Grid {spec.dims} is too small for the bucket layout")

    width = (nx - 2 * wall) // 3
    obstacle = np.zeros(spec.dims, dtype=bool)
    buckets = []
    x0 = 0
    for k in range(3):
        x1 = nx if k == 2 else x0 + width
        bucket = np.zeros(spec.dims, dtype=bool)
        bucket[x0:x1, ny - depth:] = True
        buckets.append(bucket)
        if k < 2:
            obstacle[x1:x1 + wall, ny - depth:] = True
        x0 = x1 + wall

    control = np.zeros(spec.dims, dtype=bool)
    control[:strip, :] = True
    control[nx - strip:, :] = True
    control[:, :strip] = True
    control[:, ny - depth - 1:] = False
    control &= ~obstacle
    kwargs = {} if buoyancy is None else {"buoyancy": tuple(buoyancy)}
    domain = DomainSpec.open_top(spec, obstacle=obstacle, control=control, **kwargs)
    return domain, buckets


def fluid_domain(manifest: ExperimentManifest) -> DomainSpec:
    spec = manifest.grid
    if manifest.domain is not None:
        return DomainSpec.from_dict(spec, manifest.domain)
    buoyancy = {"buoyancy": tuple(manifest.buoyancy)} if manifest.buoyancy else {}
    if manifest.experiment == "fluid_indirect":
        return indirect_domain(spec, manifest.params, manifest.buoyancy or None)[0]
    if manifest.experiment == "fluid_natural":
        return DomainSpec.open_top(spec, **buoyancy)
    return DomainSpec.closed_box(spec, **buoyancy)


def bucket_masks(manifest: ExperimentManifest) -> List[np.ndarray]:
    if manifest.experiment != "fluid_indirect":
        raise ConfigurationError("Only the indirect-control experiment has buckets")
    return indirect_domain(manifest.grid, manifest.params)[1]


def burger_viscosity(manifest: ExperimentManifest) -> float:
    return default_viscosity(manifest.grid, manifest.dt) if manifest.nu is None else manifest.nu


# ---------------------------------------------------------------------------
# Per-example generators
# ---------------------------------------------------------------------------


def _gaussian(x: np.ndarray, center: float, width: float) -> np.ndarray:
    return np.exp(-((x - center) / width) ** 2)


def burger_example(manifest: ExperimentManifest, index: int) -> GeneratedExample:
    """
    Two Gaussian waves of random amplitude, width and position moving toward
    each other (positive on the left, negative on the right) and a constant
    Gaussian force drawn the same way.
    """
    rng = example_rng(manifest.seed, index)
    p = manifest.params
    spec = manifest.grid
    dx = spec.spacing[0]
    length = spec.dims[0] * dx
    x = spec.cell_centers()[..., 0]

    def wave(lo: float, hi: float) -> np.ndarray:
        amplitude = rng.uniform(p["amplitude_min"], p["amplitude_max"])
        width = rng.uniform(p["width_min"], p["width_max"]) * dx
        return amplitude * _gaussian(x, rng.uniform(lo * length, hi * length), width)

    u0 = wave(0.15, 0.4) - wave(0.6, 0.85)
    force = rng.uniform(-p["force_amplitude"], p["force_amplitude"]) * _gaussian(
        x,
        rng.uniform(0.1 * length, 0.9 * length),
        rng.uniform(p["force_width_min"], p["force_width_max"]) * dx,
    )
    system = BurgerSystem(spec, manifest.dt, burger_viscosity(manifest))
    force_field = CenteredField(spec, force)
    states = system.rollout((CenteredField(spec, u0),), [force_field] * manifest.steps)
    u = [s[0] for s in states]
    return GeneratedExample(
        values={"force": force_field, "target": u[-1]},
        sequences={"u": u},
        meta={"force_peak": float(np.abs(force).max())},
    )


def _smooth_potential(
    rng: np.random.Generator, spec: GridSpec, smoothing: float, scale: float
) -> CenteredField:
    noise = blur(CenteredField(spec, rng.normal(size=spec.dims)), smoothing).data.copy()
    noise[:1, :] = noise[-1:, :] = 0.0
    noise[:, :1] = noise[:, -1:] = 0.0
    phi = CenteredField(spec, noise)
    peak = curl2d(phi).max_abs()
    return phi * (scale / peak) if peak > 0 else phi


def _escaping_cells(
    spec: GridSpec, velocities: List[StaggeredField], dt: float, margin: float = 1.0
) -> np.ndarray:
    """Cells whose forward-traced parcels leave the box (or come within ``margin`` cells)."""
    points = spec.cell_centers().reshape(-1, spec.rank)
    origin, spacing = np.array(spec.origin), np.array(spec.spacing)
    low = origin + margin * spacing
    high = origin + (np.array(spec.dims) - margin) * spacing
    escaped = np.zeros(len(points), dtype=bool)
    for v in velocities:
        points = points + dt * interpolate_linear(v, points)
        escaped |= np.any((points < low) | (points > high), axis=1)
    mask = escaped.reshape(spec.dims)
    grown = mask.copy()
    grown[1:, :] |= mask[:-1, :]
    grown[:-1, :] |= mask[1:, :]
    grown[:, 1:] |= mask[:, :-1]
    grown[:, :-1] |= mask[:, 1:]
    return grown


def fluid_natural_example(manifest: ExperimentManifest, index: int) -> GeneratedExample:
    """
    Random smooth smoke blobs in a random divergence-free flow (curl of a
    smoothed random potential), simulated unforced. Smoke whose forward trace
    leaves the domain is removed from the initial density and the rollout is
    repeated.
    """
    rng = example_rng(manifest.seed, index)
    p = manifest.params
    spec = manifest.grid
    extent = np.array(spec.dims) * np.array(spec.spacing)
    points = spec.cell_centers()

    density = np.zeros(spec.dims)
    for _ in range(int(rng.integers(int(p["blobs_min"]), int(p["blobs_max"]) + 1))):
        radius = rng.uniform(p["blob_radius_min"], p["blob_radius_max"]) * spec.spacing[0]
        gap = radius + 2 * np.array(spec.spacing)
        center = rng.uniform(gap, extent - gap)
        distance2 = np.sum((points - center) ** 2, axis=-1)
        density += rng.uniform(0.5, 1.0) * np.exp(-distance2 / radius ** 2)
    speed = p["velocity_scale"] * spec.spacing[0] / manifest.dt
    phi = _smooth_potential(rng, spec, p["potential_smoothing"], speed)
    velocity = curl2d(phi)

    poisson = PoissonConfig(tolerance=manifest.cg_tolerance)
    system = FluidSystem(fluid_domain(manifest), manifest.dt, "direct", poisson)
    mass0 = float(density.sum())
    removed = 0
    passes = 0
    while True:
        states = system.rollout((CenteredField(spec, density), velocity), [None] * manifest.steps)
        lost = float(density.sum()) - states[-1][0].total()
        if passes >= int(p["cleanup_passes"]) or lost <= 0.01 * max(float(density.sum()), 1e-12):
            break
        escaping = _escaping_cells(spec, [s[1] for s in states[:-1]], manifest.dt) & (density > 0)
        if not escaping.any():
            break
        removed += int(escaping.sum())
        density = np.where(escaping, 0.0, density)
        passes += 1

    if density.sum() <= 0:
        logger.warning(f"Natural-flow example {index}: cleanup removed all smoke")
    return GeneratedExample(
        values={"target": states[-1][0]},
        sequences={"density": [s[0] for s in states], "velocity": [s[1] for s in states]},
        meta={
            "mass_sampled": mass0,
            "mass_initial": float(density.sum()),
            "mass_final": states[-1][0].total(),
            "cells_removed": removed,
            "cleanup_passes": passes,
        },
    )


def fluid_shapes_example(manifest: ExperimentManifest, index: int) -> GeneratedExample:
    """``shapes_per_example`` independent mass-matched (initial, target) shape pairs."""
    rng = example_rng(manifest.seed, index)
    p = manifest.params
    spec = manifest.grid
    size_range = (p["size_min"] * spec.spacing[0], p["size_max"] * spec.spacing[0])
    example = GeneratedExample()
    initial, target, shapes = [], [], []
    for _ in range(manifest.shapes_per_example):
        start, start_meta = ShapeLibrary.sample(rng, spec, size_range, p["mass"])
        end, end_meta = ShapeLibrary.sample(rng, spec, size_range, p["mass"])
        initial.append(start)
        target.append(end)
        shapes.append({"initial": start_meta, "target": end_meta})
    example.values["density0"] = sum(initial[1:], initial[0])
    example.values["target"] = sum(target[1:], target[0])
    if manifest.shapes_per_example > 1:
        for k, (start, end) in enumerate(zip(initial, target)):
            example.values[f"density0_{k}"] = start
            example.values[f"target_{k}"] = end
    example.meta["shapes"] = shapes
    return example


def fluid_indirect_example(manifest: ExperimentManifest, index: int) -> GeneratedExample:
    """
    A smoke disk at a random position in the uncontrolled centre region and
    its footprint inside a randomly chosen bucket as the target.
    """
    rng = example_rng(manifest.seed, index)
    p = manifest.params
    spec = manifest.grid
    domain, buckets = indirect_domain(spec, p)
    radius = p["blob_radius"] * spec.spacing[0]

    free = ~domain.control & ~domain.obstacle & ~np.any(buckets, axis=0)
    candidates = []
    points = spec.cell_centers()
    cells = np.argwhere(free)
    for cell in cells:
        blob = ShapeLibrary.rasterize("disk", spec, points[tuple(cell)], 2 * radius).astype(bool)
        if blob.any() and not np.any(blob & ~free):
            candidates.append(cell)
    if not candidates:
        raise ConfigurationError(f"No room for a smoke blob of radius {radius} in grid {spec.dims}")
    cell = candidates[int(rng.integers(len(candidates)))]
    center = points[tuple(cell)] + rng.uniform(-0.25, 0.25, size=2) * np.array(spec.spacing)
    blob = ShapeLibrary.rasterize("disk", spec, center, 2 * radius)
    if np.any((blob > 0) & ~free):
        blob = ShapeLibrary.rasterize("disk", spec, points[tuple(cell)], 2 * radius)
    mass = float(blob.sum()) * spec.cell_volume

    bucket = int(rng.integers(3))
    region = buckets[bucket]
    xs, ys = np.nonzero(region)
    cell = np.array([xs.mean() + 0.5, ys.mean() + 0.5])
    bucket_center = np.array(spec.origin) + cell * np.array(spec.spacing)
    footprint = ShapeLibrary.rasterize("disk", spec, bucket_center, 2 * radius) * region
    target = normalize_mass(footprint, mass, spec.cell_volume)
    return GeneratedExample(
        values={"density0": CenteredField(spec, blob), "target": CenteredField(spec, target)},
        meta={"bucket": bucket, "center": center.tolist()},
    )


GENERATORS: Dict[str, Callable[[ExperimentManifest, int], GeneratedExample]] = {
    "burger": burger_example,
    "fluid_natural": fluid_natural_example,
    "fluid_shapes": fluid_shapes_example,
    "fluid_indirect": fluid_indirect_example,
}


# ---------------------------------------------------------------------------
# Dataset writers
# ---------------------------------------------------------------------------


def _write_example(root: Path, manifest: ExperimentManifest, index: int) -> ExampleEntry:
    example = GENERATORS[manifest.experiment](manifest, index)
    name = f"ex{index}"
    directory = root / name
    files = []
    for key, value in sorted(example.values.items()):
        files.extend(save_value(root, directory, key, value))
    for key, values in sorted(example.sequences.items()):
        files.extend(save_sequence(root, directory, key, values))
    get_metrics_collector().inc_examples_generated(manifest.experiment)
    split = "train" if index < manifest.counts.train else "test"
    logger.debug(f"Generated {manifest.experiment} example {name} ({split})")
    return ExampleEntry(name=name, split=split, files=files, meta=example.meta)


def _resolved(manifest: ExperimentManifest) -> ExperimentManifest:
    """Fill in the constants a dataset depends on so loaders never recompute defaults."""
    updates: Dict[str, Any] = {}
    if manifest.experiment == "burger":
        updates["nu"] = burger_viscosity(manifest)
    else:
        updates["domain"] = fluid_domain(manifest).to_dict()
    if not manifest.spacing:
        updates["spacing"] = manifest.grid.spacing
    return manifest.model_copy(update=updates)


def generate(manifest: ExperimentManifest, root, workers: int = 1) -> ExperimentManifest:
    """
    Generate every example of ``manifest`` below ``root`` and write the
    completed manifest (with checksummed listing) to ``root/manifest.json``.
    """
    root = Path(root)
    manifest = _resolved(manifest.model_copy(update={"examples": []}))
    indices = range(manifest.counts.total)
    logger.info(
        f"Generating {manifest.counts.total} {manifest.experiment} examples "
        f"({manifest.counts.train} train / {manifest.counts.test} test) on grid {manifest.dims}"
    )
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(lambda k: _write_example(root, manifest, k), indices))
    else:
        entries = [_write_example(root, manifest, k) for k in indices]
    examples = [e.model_dump() for e in entries]
    manifest = ExperimentManifest(**{**manifest.model_dump(), "examples": examples})
    write_manifest(root, manifest)
    logger.info(f"Dataset {manifest.name} written to {root}")
    return manifest


def gen_burger(manifest: ExperimentManifest, root, workers: int = 1) -> ExperimentManifest:
    return _generate_kind("burger", manifest, root, workers)


def gen_fluid_natural(manifest: ExperimentManifest, root, workers: int = 1) -> ExperimentManifest:
    return _generate_kind("fluid_natural", manifest, root, workers)


def gen_fluid_shapes(manifest: ExperimentManifest, root, workers: int = 1) -> ExperimentManifest:
    return _generate_kind("fluid_shapes", manifest, root, workers)


def gen_fluid_indirect(manifest: ExperimentManifest, root, workers: int = 1) -> ExperimentManifest:
    return _generate_kind("fluid_indirect", manifest, root, workers)


def _generate_kind(
    kind: str, manifest: ExperimentManifest, root, workers: int
) -> ExperimentManifest:
    if manifest.experiment != kind:
        raise ConfigurationError(f"Expected a {kind} manifest, got {manifest.experiment}")
    return generate(manifest, root, workers)
