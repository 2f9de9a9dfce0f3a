"""8-bit grayscale PNG/PGM reading and writing."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError


def to_uint8(img01: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(img01, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_gray(path: str | Path, img01: np.ndarray) -> None:
    """Write a ``[0, 1]`` float image; format follows the suffix (.png or .pgm)."""
    path = Path(path)
    if path.suffix.lower() not in (".png", ".pgm"):
        raise DataError(f"unsupported image format {path.suffix!r}")
    try:
        Image.fromarray(to_uint8(img01)).save(path)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def write_mask(path: str | Path, mask: np.ndarray) -> None:
    write_gray(path, (np.asarray(mask) > 0).astype(np.float64))


def read_gray(path: str | Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"), dtype=np.float64)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return arr / 255.0


def read_mask(path: str | Path) -> np.ndarray:
    return (read_gray(path) > 0.5).astype(np.uint8)
