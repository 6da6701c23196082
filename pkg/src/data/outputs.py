"""
Run outputs besides tensors: loss curves (CSV), reports (JSON), result tables
(CSV plus aligned text), trace files and 8-bit PGM frames with a JSON sidecar
holding the normalisation bounds.
"""
import csv
import io
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Tuple

import numpy as np

from src.common.exceptions import FormatError
from src.common.logging_config import get_logger
from src.common.retry import retry_on_io_error

logger = get_logger(__name__)

LOSS_COLUMNS = ("iter", "force_loss", "obs_loss", "total")


@retry_on_io_error(max_attempts=3)
def write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    logger.debug(f"Wrote {path}")
    return path


def write_json(path, payload: Dict[str, Any]) -> Path:
    return write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in row])
    return buffer.getvalue()


def write_loss_csv(path, history, start: int = 0) -> Path:
    """One ``iter,force_loss,obs_loss,total`` row per ``LossReport`` in ``history``."""
    rows = (
        (start + k, r.force_loss, r.observation_loss, r.total) for k, r in enumerate(history)
    )
    return write_text(path, _csv_text(LOSS_COLUMNS, rows))


def read_csv(path) -> List[Dict[str, str]]:
    with open(path, newline="") as handle:
        return list(csv.DictReader(handle))


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    return write_text(path, _csv_text(header, rows))


def format_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    """Left-aligned columns separated by two spaces."""
    cells = [list(header)] + [[str(c) for c in row] for row in rows]
    widths = [max(len(row[k]) for row in cells) for k in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
    return "\n".join(lines) + "\n"


def normalize_frame(data: np.ndarray) -> Tuple[np.ndarray, float, float]:
    """Min-max scale to 0..255; a constant frame maps to 0."""
    data = np.asarray(data, dtype=np.float64)
    lo, hi = float(data.min()), float(data.max())
    if hi > lo:
        scaled = np.rint((data - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.zeros_like(data)
    return scaled.astype(np.uint8), lo, hi


def pgm_bytes(pixels: np.ndarray) -> bytes:
    """Binary PGM; ``pixels[row, col]`` with row 0 at the top."""
    height, width = pixels.shape
    header = f"P5 {width} {height} 255\n".encode("ascii")
    return header + np.ascontiguousarray(pixels, dtype=np.uint8).tobytes()


def field_pixels(data: np.ndarray) -> np.ndarray:
    """Grid array (axis 0 = x, axis 1 = y up, or 1D) -> image rows top to bottom."""
    data = np.asarray(data)
    if data.ndim == 1:
        return data[None, :]
    if data.ndim != 2:
        raise FormatError(f"Only 1D and 2D fields can be rendered, got rank {data.ndim}")
    return data.T[::-1]


@retry_on_io_error(max_attempts=3)
def write_pgm(path, data: np.ndarray) -> Dict[str, Any]:
    """Write a min-max normalised frame and its ``.json`` sidecar; returns the sidecar."""
    path = Path(path)
    pixels, lo, hi = normalize_frame(field_pixels(data))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(pgm_bytes(pixels))
    sidecar = {"min": lo, "max": hi, "width": int(pixels.shape[1]), "height": int(pixels.shape[0])}
    write_json(path.with_suffix(".json"), sidecar)
    return sidecar


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    parts = blob.split(b"\n", 1)
    fields = parts[0].split()
    if len(parts) != 2 or len(fields) != 4 or fields[0] != b"P5" or fields[3] != b"255":
        raise FormatError(f"{path} is not an 8-bit binary PGM")
    width, height = int(fields[1]), int(fields[2])
    pixels = np.frombuffer(parts[1], dtype=np.uint8)
    if pixels.size != width * height:
        raise FormatError(f"{path} payload has {pixels.size} pixels, header says {width}x{height}")
    return pixels.reshape(height, width)


def denormalize(pixels: np.ndarray, sidecar: Dict[str, Any]) -> np.ndarray:
    """Approximate field values of a frame from its sidecar bounds."""
    lo, hi = sidecar["min"], sidecar["max"]
    return lo + pixels.astype(np.float64) / 255.0 * (hi - lo)
