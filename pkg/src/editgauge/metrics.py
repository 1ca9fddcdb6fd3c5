"""Atomic normalized metric computations.

Every operation maps valid inputs into [0,1]. Rasters are uint8 arrays,
either (H, W) grayscale or (H, W, 3) RGB; comparison metrics convert to
unit-range floats internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import cv2
import numpy as np


class MetricError(ValueError):
    """Raised on invalid metric inputs."""


def iq_score(fid: float) -> float:
    """Image-quality score: 1 - tanh(fid / 25).

    The divisor keeps scores close to 1 for strong models; fid must be
    nonnegative.
    """
    if fid < 0:
        raise MetricError(f"fid must be nonnegative, got {fid}")
    return 1.0 - math.tanh(fid / 25.0)


def _require_unit(vec: np.ndarray, name: str, tol: float = 1e-4) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    norm = float(np.linalg.norm(vec))
    if abs(norm - 1.0) > tol:
        raise MetricError(f"{name} is not unit-norm (|v| = {norm})")
    return vec


def clip_alignment(text_vec: np.ndarray, image_vec: np.ndarray) -> float:
    """Text-image alignment: cosine similarity of unit vectors mapped to [0,1]."""
    t = _require_unit(text_vec, "text embedding")
    i = _require_unit(image_vec, "image embedding")
    if t.shape != i.shape:
        raise MetricError(f"embedding shapes differ: {t.shape} vs {i.shape}")
    cos = float(np.dot(t, i))
    return min(1.0, max(0.0, (cos + 1.0) / 2.0))


def distance_to_similarity(d: float) -> float:
    """Convert a nonnegative distance to a similarity: 1 / (1 + d)."""
    if d < 0:
        raise MetricError(f"distance must be nonnegative, got {d}")
    return 1.0 / (1.0 + d)


def _to_unit_float(raster: np.ndarray) -> np.ndarray:
    arr = np.asarray(raster)
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    arr = arr.astype(np.float64)
    if arr.size and (arr.min() < -1e-9 or arr.max() > 1.0 + 1e-9):
        raise MetricError("float raster values must lie in [0,1]")
    return arr


def l2_similarity(raster_a: np.ndarray, raster_b: np.ndarray) -> float:
    """Pixel similarity 1 - RMSE on unit-range rasters."""
    a = _to_unit_float(raster_a)
    b = _to_unit_float(raster_b)
    if a.shape != b.shape:
        raise MetricError(f"raster shapes differ: {a.shape} vs {b.shape}")
    rmse = float(np.sqrt(np.mean((a - b) ** 2)))
    return min(1.0, max(0.0, 1.0 - rmse))


@dataclass(frozen=True, eq=False)
class ObjectCrop:
    """A segmented object: square crop with non-object pixels zeroed.

    ``area`` is the mask pixel count; ``center_of_mass`` is the mask centroid
    in the source image's coordinates.
    """

    raster: np.ndarray
    area: int
    center_of_mass: tuple[float, float]


def object_crop(image: np.ndarray, mask: np.ndarray) -> ObjectCrop:
    """Cut the minimal enclosing square of the mask, zeroing non-mask pixels.

    The square side is the larger of the mask bbox sides; when it overruns
    the image border the crop is zero-padded, keeping the bbox centered.
    """
    mask = np.asarray(mask, dtype=bool)
    image = np.asarray(image)
    if mask.shape != image.shape[:2]:
        raise MetricError(f"mask shape {mask.shape} != image {image.shape[:2]}")
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise MetricError("mask is empty")
    y0, y1 = int(ys.min()), int(ys.max()) + 1
    x0, x1 = int(xs.min()), int(xs.max()) + 1
    side = max(y1 - y0, x1 - x0)

    zeroed = np.zeros_like(image)
    zeroed[mask] = image[mask]

    # center the bbox inside the square window
    cy = (y0 + y1) / 2.0
    cx = (x0 + x1) / 2.0
    wy0 = int(round(cy - side / 2.0))
    wx0 = int(round(cx - side / 2.0))
    crop_shape = (side, side) + image.shape[2:]
    crop = np.zeros(crop_shape, dtype=image.dtype)
    sy0, sy1 = max(wy0, 0), min(wy0 + side, image.shape[0])
    sx0, sx1 = max(wx0, 0), min(wx0 + side, image.shape[1])
    crop[sy0 - wy0:sy1 - wy0, sx0 - wx0:sx1 - wx0] = zeroed[sy0:sy1, sx0:sx1]

    com = (float(xs.mean()), float(ys.mean()))
    return ObjectCrop(raster=crop, area=int(ys.size), center_of_mass=com)


def size_fidelity(a0: float, ae: float, direction: str,
                  r1: float = 1.5, r2: float = 2.0 / 3.0) -> float:
    """Score how well the object's size moved in the requested direction.

    The relative change is rho = sqrt(ae/a0). Full score at or beyond the
    threshold (r1 growing, r2 shrinking), zero for changes opposite to the
    intended direction, linear in between.
    """
    if not (r1 > 1.0 > r2 > 0.0):
        raise MetricError(f"thresholds must satisfy r1 > 1 > r2 > 0, got {r1}, {r2}")
    if a0 <= 0 or ae < 0:
        raise MetricError(f"areas must be positive, got a0={a0}, ae={ae}")
    rho = math.sqrt(ae / a0)
    if direction == "larger":
        if rho <= 1.0:
            return 0.0
        if rho >= r1:
            return 1.0
        return (rho - 1.0) / (r1 - 1.0)
    if direction == "smaller":
        if rho >= 1.0:
            return 0.0
        if rho <= r2:
            return 1.0
        return (1.0 - rho) / (1.0 - r2)
    raise MetricError(f"direction must be 'larger' or 'smaller', got {direction!r}")


def size_consistency(a0: float, ae: float, height: int, width: int) -> float:
    """Score how well the object's size was preserved (1 at rho = 1).

    Shrinking decays as rho itself; growth decays linearly to 0 at the
    maximum possible change rate r3 = sqrt(H*W/a0).
    """
    hw = float(height) * float(width)
    if a0 <= 0 or a0 > hw:
        raise MetricError(f"a0={a0} outside (0, H*W={hw}]")
    if ae < 0:
        raise MetricError(f"ae must be nonnegative, got {ae}")
    rho = math.sqrt(ae / a0)
    if rho <= 1.0:
        return rho
    r3 = math.sqrt(hw / a0)
    if r3 <= 1.0:
        return 0.0
    return max(0.0, 1.0 - (rho - 1.0) / (r3 - 1.0))


def position_consistency(com0: tuple[float, float], com_e: tuple[float, float],
                         height: int, width: int) -> float:
    """Score the preservation of the object's center of mass.

    Decays linearly from 1 to 0 as the displacement grows from 0 to the
    image diagonal.
    """
    d = math.hypot(com_e[0] - com0[0], com_e[1] - com0[1])
    diag = math.hypot(float(height), float(width))
    return max(0.0, 1.0 - d / diag)


def degrade(raster: np.ndarray, factor: int = 4) -> np.ndarray:
    """Dull out details: luminance grayscale, then down/up-scale by ``factor``.

    Downscaling is bilinear, upscaling nearest-neighbor, so the operation is
    idempotent on block-aligned sizes. Output has the input's shape.
    """
    arr = np.asarray(raster)
    if arr.ndim == 3:
        gray = cv2.cvtColor(arr, cv2.COLOR_RGB2GRAY)
    else:
        gray = arr
    h, w = gray.shape[:2]
    small = cv2.resize(gray, (max(1, w // factor), max(1, h // factor)),
                       interpolation=cv2.INTER_LINEAR)
    restored = cv2.resize(small, (w, h), interpolation=cv2.INTER_NEAREST)
    if arr.ndim == 3:
        restored = np.repeat(restored[:, :, None], arr.shape[2], axis=2)
    return restored


def edge_map(raster: np.ndarray, low: int = 100, high: int = 200) -> np.ndarray:
    """Canny edges on 8-bit luminance; returns a boolean raster."""
    arr = np.asarray(raster)
    if arr.ndim == 3:
        gray = cv2.cvtColor(arr, cv2.COLOR_RGB2GRAY)
    else:
        gray = arr
    if gray.dtype != np.uint8:
        gray = np.clip(gray, 0, 255).astype(np.uint8)
    edges = cv2.Canny(gray, low, high)
    return edges > 0


def combine_weighted(values: dict[str, float], weights: dict[str, float]) -> float:
    """Convex combination of the present keys, renormalizing their weights.

    The result is clamped to [0,1] to absorb last-bit rounding overshoot.
    """
    if not values:
        raise MetricError("no components to combine")
    missing = set(values) - set(weights)
    if missing:
        raise MetricError(f"weight group lacks keys {sorted(missing)}")
    wsum = sum(weights[k] for k in values)
    if wsum <= 0:
        raise MetricError("weights of present components sum to zero")
    out = sum(weights[k] * values[k] for k in sorted(values)) / wsum
    return min(1.0, max(0.0, out))


def combine_of(values: dict[str, float], weights: dict[str, float]) -> float:
    """Object-fidelity combination over the present components."""
    return combine_weighted(values, weights)


def combine_oc(values: dict[str, float], weights: dict[str, float]) -> float:
    """Object-consistency combination over the present components."""
    return combine_weighted(values, weights)


def combine_bc(values: dict[str, float], weights: dict[str, float]) -> float:
    """Background-consistency combination over the present components."""
    return combine_weighted(values, weights)


def combine_total(criteria: dict[str, float], weights: dict[str, float]) -> float:
    """Total score: convex combination over the criteria present."""
    if not criteria:
        raise MetricError("no criteria present")
    return combine_weighted(criteria, weights)
