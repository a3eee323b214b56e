"""
8-bit binary PGM (P5) output for guide dumps.
"""

from pathlib import Path
from typing import Union

import numpy as np

from src.core.exceptions import InputError


def to_gray8(values: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] to bytes as ``round(255 * v)``; out-of-range values are clipped."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.rint(v * 255.0).astype(np.uint8)


def encode_pgm(values: np.ndarray) -> bytes:
    array = np.asarray(values)
    if array.ndim != 2 or array.size == 0:
        raise InputError(f"PGM output needs a non-empty 2-D array, got shape {array.shape}")
    h, w = array.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + to_gray8(array).tobytes()


def write_pgm(values: np.ndarray, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_pgm(values))
    return path


def read_pgm(path: Union[str, Path]) -> np.ndarray:
    """Read back a file written by :func:`write_pgm` as ``uint8 [H, W]``."""
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5" or parts[2] != b"255":
        raise InputError(f"{path} is not an 8-bit binary PGM")
    w, h = (int(x) for x in parts[1].split())
    pixels = np.frombuffer(parts[3], dtype=np.uint8)
    if pixels.size != w * h:
        raise InputError(f"{path}: expected {w * h} pixels, found {pixels.size}")
    return pixels.reshape(h, w)
