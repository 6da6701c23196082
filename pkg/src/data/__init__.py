"""
Datasets, the PDTF tensor format, checkpoints and run outputs.
"""
from src.data.checkpoints import Checkpoint, load_checkpoint, save_checkpoint
from src.data.datasets import Dataset
from src.data.generate import (
    GENERATORS,
    example_rng,
    gen_burger,
    gen_fluid_indirect,
    gen_fluid_natural,
    gen_fluid_shapes,
    generate,
    indirect_domain,
)
from src.data.manifest import (
    EXPERIMENTS,
    ExampleEntry,
    ExperimentManifest,
    FileEntry,
    default_manifest,
    load_manifest,
    write_manifest,
)
from src.data.pdtf import MAGIC, decode, encode, read_tensor, write_tensor
from src.data.shapes import ShapeLibrary

__all__ = [
    "Checkpoint",
    "Dataset",
    "EXPERIMENTS",
    "ExampleEntry",
    "ExperimentManifest",
    "FileEntry",
    "GENERATORS",
    "MAGIC",
    "ShapeLibrary",
    "decode",
    "default_manifest",
    "encode",
    "example_rng",
    "gen_burger",
    "gen_fluid_indirect",
    "gen_fluid_natural",
    "gen_fluid_shapes",
    "generate",
    "indirect_domain",
    "load_checkpoint",
    "load_manifest",
    "read_tensor",
    "save_checkpoint",
    "write_manifest",
    "write_tensor",
]
