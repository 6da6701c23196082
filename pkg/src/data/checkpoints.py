"""
Network and optimiser checkpoints.

A checkpoint is a directory holding ``checkpoint.json`` (network layouts,
ADAM hyper-parameters and step counter, training metadata, file listing with
checksums) and one PDTF file per parameter array and per ADAM moment:

    params/<key>.pdtf      key = op<n>/<layer> or cfe/<layer>
    adam/m/<key>.pdtf
    adam/v/<key>.pdtf

``/`` inside keys is stored as ``__``.
"""
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from src.common.exceptions import DatasetError
from src.common.logging_config import get_logger
from src.common.retry import retry_on_io_error
from src.data.manifest import FileEntry
from src.data.pdtf import file_checksum, read_tensor, write_tensor
from src.nets.models import CFEModel, OPModelBank
from src.nets.network import NetSpec, ParamSet
from src.optimize.adam import AdamState

logger = get_logger(__name__)

HEADER = "checkpoint.json"


def _filename(key: str) -> str:
    return key.replace("/", "__") + ".pdtf"


@dataclass
class Checkpoint:
    bank: Optional[OPModelBank] = None
    cfe: Optional[CFEModel] = None
    adam: Optional[AdamState] = None
    meta: Dict[str, Any] = field(default_factory=dict)


def _arrays(bank: Optional[OPModelBank], cfe: Optional[CFEModel]) -> Dict[str, np.ndarray]:
    arrays: Dict[str, np.ndarray] = {}
    if bank is not None:
        for n in bank:
            arrays.update({f"op{n}/{k}": v for k, v in bank[n][1].items()})
    if cfe is not None:
        arrays.update({f"cfe/{k}": v for k, v in cfe.params.items()})
    return arrays


@retry_on_io_error(max_attempts=3)
def _write_header(path: Path, header: Dict[str, Any]) -> None:
    path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")


def save_checkpoint(directory, checkpoint: Checkpoint) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files: List[FileEntry] = []

    def put(relative: str, array: np.ndarray) -> None:
        files.append(FileEntry(path=relative, sha256=write_tensor(directory / relative, array)))

    params = _arrays(checkpoint.bank, checkpoint.cfe)
    for key, array in params.items():
        put(f"params/{_filename(key)}", array)
    adam = None
    if checkpoint.adam is not None:
        state = checkpoint.adam
        adam = {
            "lr": state.lr,
            "beta1": state.beta1,
            "beta2": state.beta2,
            "eps": state.eps,
            "step": state.step,
        }
        for key in state.m:
            put(f"adam/m/{_filename(key)}", state.m[key])
            put(f"adam/v/{_filename(key)}", state.v[key])
        adam["keys"] = sorted(state.m)

    header = {
        "version": 1,
        "ops": None if checkpoint.bank is None else {
            "scales": {str(n): asdict(checkpoint.bank[n][0]) for n in checkpoint.bank},
            "nonnegative": checkpoint.bank.nonnegative,
        },
        "cfe": None if checkpoint.cfe is None else {
            "mode": checkpoint.cfe.mode, "spec": asdict(checkpoint.cfe.spec),
        },
        "params": sorted(params),
        "adam": adam,
        "meta": checkpoint.meta,
        "files": [f.model_dump() for f in files],
    }
    _write_header(directory / HEADER, header)
    logger.info(f"Saved checkpoint to {directory} ({len(files)} arrays)")
    return directory


def load_checkpoint(directory, verify: bool = True) -> Checkpoint:
    directory = Path(directory)
    path = directory / HEADER
    if not path.exists():
        raise DatasetError(f"No checkpoint header at {path}")
    try:
        header = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DatasetError(f"Corrupted checkpoint header {path}: {e}") from e
    if verify:
        for item in header.get("files", []):
            target = directory / item["path"]
            if not target.exists() or file_checksum(target) != item["sha256"]:
                logger.error(f"Checkpoint file missing or corrupted: {target}")
                raise DatasetError(f"Checkpoint file missing or corrupted: {item['path']}")

    keys = header.get("params", [])

    def arrays(prefix: str, spec: NetSpec) -> ParamSet:
        params = ParamSet({
            key.split("/", 1)[1]: read_tensor(directory / "params" / _filename(key))
            for key in keys
            if key.split("/", 1)[0] == prefix
        })
        if not spec.bottleneck:
            params.check(spec)
        return params

    bank = None
    if header.get("ops"):
        models = {}
        for n, spec_dict in header["ops"]["scales"].items():
            spec = NetSpec(**spec_dict)
            models[int(n)] = (spec, arrays(f"op{n}", spec))
        bank = OPModelBank(models, header["ops"]["nonnegative"])
    cfe = None
    if header.get("cfe"):
        spec = NetSpec(**header["cfe"]["spec"])
        cfe = CFEModel(spec, arrays("cfe", spec), header["cfe"]["mode"])
    adam = None
    if header.get("adam"):
        info = dict(header["adam"])
        moments = info.pop("keys", [])
        adam = AdamState(
            **info,
            m={k: read_tensor(directory / "adam" / "m" / _filename(k)) for k in moments},
            v={k: read_tensor(directory / "adam" / "v" / _filename(k)) for k in moments},
        )
    return Checkpoint(bank, cfe, adam, header.get("meta", {}))
