"""Distortion and similarity metrics plus report aggregation.

PSNR and single-scale SSIM follow the standard definitions (MAX = 1, 11x11
Gaussian window with sigma 1.5 on luma).  The perceptual distance is a
declared proxy computed on the package's own feature extractor; its values
are NOT comparable to published learned-metric numbers and are labeled
``perc_dist`` everywhere to prevent confusion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .diffcore import no_grad
from .errors import ArgumentError
from .imageio import Image
from .losses import FeatureExtractor

LUMA = np.array([0.299, 0.587, 0.114])
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_pair(a: Image, b: Image) -> None:
    if a.arr.shape != b.arr.shape:
        raise ArgumentError(f"image shapes differ: {a.arr.shape} vs {b.arr.shape}")


def psnr(a: Image, b: Image) -> float:
    """10 log10(1 / MSE) with samples in [0,1]; identical images give inf."""
    _check_pair(a, b)
    mse = float(np.mean((a.arr.astype(np.float64) - b.arr.astype(np.float64)) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def _luma(img: Image) -> np.ndarray:
    if img.channels == 1:
        return img.arr[:, :, 0].astype(np.float64)
    return img.arr.astype(np.float64) @ LUMA


def ssim(a: Image, b: Image) -> float:
    """Single-scale structural similarity on luma, valid-window mean."""
    _check_pair(a, b)
    if min(a.height, a.width) < SSIM_WINDOW:
        raise ArgumentError(f"image must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM")
    x, y = _luma(a), _luma(b)
    kernel = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)

    def wmean(z):
        win = sliding_window_view(z, (SSIM_WINDOW, SSIM_WINDOW))
        return np.tensordot(win, kernel, axes=([2, 3], [0, 1]))

    mu_x, mu_y = wmean(x), wmean(y)
    sxx = wmean(x * x) - mu_x * mu_x
    syy = wmean(y * y) - mu_y * mu_y
    sxy = wmean(x * y) - mu_x * mu_y
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def perceptual_distance(fx: FeatureExtractor, a: Image, b: Image) -> float:
    """Feature-space proxy distance (channel-normalized squared difference).

    Declared proxy: not comparable to published learned-metric values.
    """
    _check_pair(a, b)
    with no_grad():
        fa = fx(a.arr[None].astype(np.float32))
        fb = fx(b.arr[None].astype(np.float32))
    total = 0.0
    for ta, tb in zip(fa, fb):
        na = _unit_channels(ta.data.astype(np.float64))
        nb = _unit_channels(tb.data.astype(np.float64))
        total += float(np.mean((na - nb) ** 2))
    return total / len(fa)


def _unit_channels(f: np.ndarray) -> np.ndarray:
    norm = np.sqrt((f**2).sum(axis=3, keepdims=True)) + 1e-10
    return f / norm


@dataclass
class EvalRow:
    image_id: str
    mask_bucket: str
    brightness: float
    psnr: float
    ssim: float
    perc_dist: float


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)

    def add(self, row: EvalRow) -> None:
        self.rows.append(row)

    def aggregate(self) -> dict[str, dict[str, float]]:
        """Mean and quartiles per metric (finite values only for PSNR)."""
        out: dict[str, dict[str, float]] = {}
        for name in ("psnr", "ssim", "perc_dist"):
            values = np.array([getattr(r, name) for r in self.rows], dtype=np.float64)
            values = values[np.isfinite(values)]
            if values.size == 0:
                continue
            q1, q2, q3 = np.quantile(values, [0.25, 0.5, 0.75])
            out[name] = {
                "mean": float(values.mean()),
                "q1": float(q1),
                "median": float(q2),
                "q3": float(q3),
            }
        return out

    def to_csv(self) -> str:
        lines = ["id,mask_bucket,brightness,psnr,ssim,perc_dist"]
        for r in self.rows:
            lines.append(
                f"{r.image_id},{r.mask_bucket},{r.brightness},{r.psnr:.6f},{r.ssim:.6f},{r.perc_dist:.6f}"
            )
        return "\n".join(lines) + "\n"


def mask_bucket(coverage: float) -> str:
    """Evaluation band labels matching the standard coverage ranges."""
    if coverage < 0.20:
        return "5-20%"
    if coverage < 0.35:
        return "20-35%"
    return "35-50%"
