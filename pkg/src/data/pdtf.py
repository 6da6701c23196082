"""
PDTF tensor files.

Layout (all integers little-endian):

    magic    8 bytes   b"PDTF0001"
    rank     u32
    dims     rank x u64
    payload  prod(dims) x f64, row-major

Fields are stored as plain arrays: a ``CenteredField`` as its ``dims``-shaped
data, a ``StaggeredField`` as one file per component (see ``data.store``).
"""
import hashlib
import struct
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from src.common.exceptions import FormatError
from src.common.logging_config import get_logger
from src.common.retry import retry_on_io_error

logger = get_logger(__name__)

MAGIC = b"PDTF0001"
_RANK = struct.Struct("<I")
_DIM = struct.Struct("<Q")
_PAYLOAD = np.dtype("<f8")

PathLike = Union[str, Path]


def encode(array) -> bytes:
    """Serialise ``array`` (any real dtype, rank >= 1) to PDTF bytes."""
    array = np.asarray(array)
    if array.ndim == 0:
        array = array.reshape(1)
    if not np.issubdtype(array.dtype, np.number) or np.iscomplexobj(array):
        raise FormatError(f"PDTF stores real arrays only, got dtype {array.dtype}")
    header = MAGIC + _RANK.pack(array.ndim) + b"".join(_DIM.pack(d) for d in array.shape)
    return header + np.ascontiguousarray(array, dtype=_PAYLOAD).tobytes(order="C")


def decode(blob: bytes) -> np.ndarray:
    """Parse PDTF bytes; any structural defect raises ``FormatError``."""
    if len(blob) < len(MAGIC) + _RANK.size:
        raise FormatError("PDTF stream too short for a header")
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError(f"Bad PDTF magic {blob[:len(MAGIC)]!r}")
    offset = len(MAGIC)
    (rank,) = _RANK.unpack_from(blob, offset)
    offset += _RANK.size
    if rank < 1:
        raise FormatError(f"PDTF rank must be >= 1, got {rank}")
    if len(blob) < offset + rank * _DIM.size:
        raise FormatError(f"PDTF stream truncated inside the {rank} dims")
    dims = tuple(_DIM.unpack_from(blob, offset + k * _DIM.size)[0] for k in range(rank))
    offset += rank * _DIM.size
    expected = int(np.prod(dims, dtype=np.uint64)) * _PAYLOAD.itemsize
    if len(blob) - offset != expected:
        raise FormatError(
            f"PDTF payload has {len(blob) - offset} bytes, dims {dims} need {expected}"
        )
    return np.frombuffer(blob, dtype=_PAYLOAD, offset=offset).reshape(dims).astype(np.float64)


def read_stream(stream: BinaryIO) -> np.ndarray:
    return decode(stream.read())


def write_stream(stream: BinaryIO, array) -> None:
    stream.write(encode(array))


@retry_on_io_error(max_attempts=3)
def write_tensor(path: PathLike, array) -> str:
    """Write ``array`` to ``path``; returns the sha256 hex digest of the file."""
    blob = encode(array)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(blob)
    logger.debug(f"Wrote {path} ({len(blob)} bytes)")
    return hashlib.sha256(blob).hexdigest()


@retry_on_io_error(max_attempts=3)
def read_tensor(path: PathLike) -> np.ndarray:
    return decode(Path(path).read_bytes())


def file_checksum(path: PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
