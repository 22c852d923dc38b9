"""Unsupervised defect localization via statistical outlier thresholds.

A luma-gradient outlier test marks defect boundaries, then per-channel pixel
statistics over those boundary pixels give a value threshold: anything
brighter than the boundary band (in any channel) is declared defective.
A small morphological closing fills pinholes in the detected regions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .imageio import Image, Mask
from .maskgen import binary_close

LUMA = np.array([0.299, 0.587, 0.114])

# alternate parameter pairs (gradient multiplier, pixel multiplier)
PRESETS = {
    "g4p3": (4.0, 3.0),
    "g4p2": (4.0, 2.0),
    "g5p1.5": (5.0, 1.5),
}


@dataclass
class FlawParams:
    lambda_g: float = 3.0
    lambda_p: float = 2.0
    closing_radius: int = 1

    def __post_init__(self):
        if self.lambda_g <= 0 or self.lambda_p <= 0:
            raise ArgumentError("threshold multipliers must be positive")


@dataclass
class ThresholdStats:
    g_avg: float
    g_std: float
    g_th: float
    p_avg: np.ndarray | None = None
    p_std: np.ndarray | None = None
    p_th: np.ndarray | None = None


def gradient_magnitude(img: Image) -> np.ndarray:
    """Central-difference luma gradient magnitude with replicated borders."""
    if img.channels != 3:
        raise ArgumentError("gradient expects a 3-channel image")
    luma = img.arr.astype(np.float64) @ LUMA
    padded = np.pad(luma, 1, mode="edge")
    gx = (padded[1:-1, 2:] - padded[1:-1, :-2]) / 2.0
    gy = (padded[2:, 1:-1] - padded[:-2, 1:-1]) / 2.0
    return np.hypot(gx, gy)


def gradient_threshold(field: np.ndarray, lambda_g: float) -> tuple[np.ndarray, ThresholdStats]:
    """Boundary pixels: gradient magnitude above mean + lambda_g * std."""
    g_avg = float(field.mean())
    g_std = float(field.std())
    g_th = g_avg + lambda_g * g_std
    if g_std == 0.0:
        boundary = np.zeros(field.shape, dtype=bool)
    else:
        boundary = field > g_th
    return boundary, ThresholdStats(g_avg=g_avg, g_std=g_std, g_th=g_th)


def boundary_pixel_threshold(
    img: Image, boundary: np.ndarray, lambda_p: float, stats: ThresholdStats
) -> np.ndarray:
    """Per-channel value threshold from the boundary pixels' statistics."""
    if not boundary.any():
        raise ArgumentError("boundary set is empty; no defects found")
    values = img.arr[boundary].astype(np.float64)
    stats.p_avg = values.mean(axis=0)
    stats.p_std = values.std(axis=0)
    stats.p_th = stats.p_avg + lambda_p * stats.p_std
    return stats.p_th


def detect_flaws(
    img: Image, params: FlawParams | None = None, return_stats: bool = False
):
    """Defect mask: any channel above its boundary-derived threshold.

    Returns an empty mask when the gradient test finds no boundary (flat or
    noise-free images).  Closing with ``closing_radius`` fills pinholes.
    """
    params = params or FlawParams()
    field = gradient_magnitude(img)
    boundary, stats = gradient_threshold(field, params.lambda_g)
    if not boundary.any():
        empty = Mask(np.zeros(field.shape, dtype=np.uint8))
        return (empty, stats) if return_stats else empty
    p_th = boundary_pixel_threshold(img, boundary, params.lambda_p, stats)
    raw = (img.arr.astype(np.float64) > p_th).any(axis=2)
    closed = binary_close(raw, params.closing_radius)
    mask = Mask(closed.astype(np.uint8))
    return (mask, stats) if return_stats else mask


def detect_flaws_raw(img: Image, params: FlawParams | None = None) -> np.ndarray:
    """Pre-closing defect map (used by scale-covariance checks)."""
    params = params or FlawParams()
    field = gradient_magnitude(img)
    boundary, stats = gradient_threshold(field, params.lambda_g)
    if not boundary.any():
        return np.zeros(field.shape, dtype=bool)
    p_th = boundary_pixel_threshold(img, boundary, params.lambda_p, stats)
    return (img.arr.astype(np.float64) > p_th).any(axis=2)
