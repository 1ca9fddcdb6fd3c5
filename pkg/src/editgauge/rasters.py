"""Lossless raster file I/O. In-memory rasters are uint8 RGB arrays."""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np


class RasterError(IOError):
    """Raised when a raster file cannot be read or written."""


def read_raster(path) -> np.ndarray:
    path = Path(path)
    bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise RasterError(f"cannot read raster {path}")
    return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)


def write_raster(path, raster: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(raster, dtype=np.uint8)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    ok = cv2.imwrite(str(path), cv2.cvtColor(arr, cv2.COLOR_RGB2BGR))
    if not ok:
        raise RasterError(f"cannot write raster {path}")
