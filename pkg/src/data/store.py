"""
Fields and field sequences on disk.

A ``CenteredField`` is one PDTF file ``<name>.pdtf``; a ``StaggeredField`` is
one file per component, ``<name>.<k>.pdtf``. Sequences stack their entries
along a new leading axis.
"""
from pathlib import Path
from typing import List, Sequence

import numpy as np

from src.common.exceptions import DatasetError, ShapeMismatchError
from src.data.manifest import FileEntry
from src.data.pdtf import read_tensor, write_tensor
from src.fields.grid import CenteredField, GridSpec, StaggeredField

SUFFIX = ".pdtf"


def _entry(root: Path, path: Path, digest: str) -> FileEntry:
    return FileEntry(path=path.relative_to(root).as_posix(), sha256=digest)


def save_value(root: Path, directory: Path, name: str, value) -> List[FileEntry]:
    """Write one field below ``directory``; returned paths are relative to ``root``."""
    if isinstance(value, CenteredField):
        path = directory / f"{name}{SUFFIX}"
        return [_entry(root, path, write_tensor(path, value.data))]
    if isinstance(value, StaggeredField):
        entries = []
        for k, component in enumerate(value.components):
            path = directory / f"{name}.{k}{SUFFIX}"
            entries.append(_entry(root, path, write_tensor(path, component)))
        return entries
    raise ShapeMismatchError(f"Cannot store {type(value).__name__} as a field")


def save_sequence(root: Path, directory: Path, name: str, values: Sequence) -> List[FileEntry]:
    """Write a time series of fields of one kind as stacked arrays."""
    if not values:
        raise ShapeMismatchError(f"Sequence {name} is empty")
    first = values[0]
    if isinstance(first, CenteredField):
        path = directory / f"{name}{SUFFIX}"
        return [_entry(root, path, write_tensor(path, np.stack([v.data for v in values])))]
    entries = []
    for k in range(first.spec.rank):
        path = directory / f"{name}.{k}{SUFFIX}"
        stacked = np.stack([v.components[k] for v in values])
        entries.append(_entry(root, path, write_tensor(path, stacked)))
    return entries


def _component_paths(directory: Path, name: str, rank: int) -> List[Path]:
    return [directory / f"{name}.{k}{SUFFIX}" for k in range(rank)]


def has_value(directory: Path, name: str) -> bool:
    return (directory / f"{name}{SUFFIX}").exists() or (directory / f"{name}.0{SUFFIX}").exists()


def load_value(directory: Path, name: str, spec: GridSpec):
    centered = directory / f"{name}{SUFFIX}"
    if centered.exists():
        return CenteredField(spec, read_tensor(centered))
    paths = _component_paths(directory, name, spec.rank)
    if not all(p.exists() for p in paths):
        raise DatasetError(f"Field {name} not found in {directory}")
    return StaggeredField(spec, tuple(read_tensor(p) for p in paths))


def load_sequence(directory: Path, name: str, spec: GridSpec) -> list:
    centered = directory / f"{name}{SUFFIX}"
    if centered.exists():
        return [CenteredField(spec, frame) for frame in read_tensor(centered)]
    paths = _component_paths(directory, name, spec.rank)
    if not all(p.exists() for p in paths):
        raise DatasetError(f"Sequence {name} not found in {directory}")
    stacks = [read_tensor(p) for p in paths]
    if len({s.shape[0] for s in stacks}) != 1:
        raise DatasetError(f"Components of {name} have different lengths")
    return [StaggeredField(spec, tuple(s[t] for s in stacks)) for t in range(stacks[0].shape[0])]
