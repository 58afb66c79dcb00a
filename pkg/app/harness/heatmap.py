"""Grayscale PGM dumps of aggregated attention maps."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from app.numcore import Tensor


def to_gray(A: np.ndarray) -> np.ndarray:
    """Min-max normalize to 0..255; a constant map becomes all zeros."""

    lo, hi = float(A.min()), float(A.max())
    if hi == lo:
        return np.zeros(A.shape, dtype=np.uint8)
    return np.rint((A - lo) / (hi - lo) * 255.0).astype(np.uint8)


def csv_path(pgm_path: Path) -> Path:
    return Path(pgm_path).with_suffix(".csv")


def dump_heatmap(A: Union[Tensor, np.ndarray], path: Path) -> Tuple[Path, Path]:
    """Write ``A`` as binary P5 PGM plus a CSV of the raw floats; returns both paths."""

    values = A.numpy() if isinstance(A, Tensor) else np.array(A, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"heatmap needs a 2-D map, got shape {values.shape}")
    if np.any(values < 0):
        raise ValueError("heatmap values must be non-negative")
    path = Path(path)
    sidecar = csv_path(path)
    rows, cols = values.shape
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
            f.write(to_gray(values).tobytes())
        with open(sidecar, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            for row in values:
                writer.writerow([repr(float(v)) for v in row])
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write heatmap: {exc.strerror}", str(exc.filename or path)) from exc
    return path, sidecar


def read_pgm(path: Path) -> np.ndarray:
    """Parse the P5 files written by ``dump_heatmap``."""

    blob = Path(path).read_bytes()
    header, _, rest = blob.partition(b"\n")
    if header != b"P5":
        raise ValueError(f"{path} is not a binary PGM")
    dims, _, rest = rest.partition(b"\n")
    _maxval, _, pixels = rest.partition(b"\n")
    cols, rows = (int(v) for v in dims.split())
    return np.frombuffer(pixels, dtype=np.uint8).reshape(rows, cols)


def read_heatmap_csv(path: Path) -> np.ndarray:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return np.array([[float(v) for v in row] for row in csv.reader(f)])


__all__ = ["csv_path", "dump_heatmap", "read_heatmap_csv", "read_pgm", "to_gray"]
