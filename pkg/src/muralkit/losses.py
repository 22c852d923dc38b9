"""Training objectives for the inpainting stage.

Reconstruction, least-squares adversarial, total-variation, perceptual and
style losses, their weighted per-stage combination, and the two-phase switch
that selects between restoration and enhancement objectives.  All L1/L2
terms are per-element means within their region so the standard weights
(6, 0.1, 0.05, 120) transfer across tile sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Conv, Parameter, Tensor
from .errors import ArgumentError

VGG_RELATIVE_WIDTHS = (1, 1, 2, 2, 4, 4, 4, 8)
VGG_CONV_INDICES = (0, 2, 5, 7, 10, 12, 14, 17)
VGG_POOL_INDICES = (4, 9, 16)
VGG_TAP_INDICES = (5, 10, 17)


@dataclass
class LossWeights:
    hole_weight: float = 6.0
    gan_gen_weight: float = 0.1
    lambda_tv: float = 0.1
    lambda_per: float = 0.05
    lambda_sty: float = 120.0


def _as_t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _mask_arr(mask, like: np.ndarray) -> np.ndarray:
    bits = mask.bits if hasattr(mask, "bits") else np.asarray(mask)
    if bits.ndim == 2:
        bits = bits[None, :, :, None]
    elif bits.ndim == 3:
        bits = bits[:, :, :, None]
    if bits.shape[0] == 1 and like.shape[0] > 1:
        bits = np.broadcast_to(bits, (like.shape[0],) + bits.shape[1:])
    return bits.astype(like.dtype)


def recon_loss(i_out, i_gt, mask) -> Tensor:
    """Region-weighted L1: valid pixels once, hole pixels six-fold.

    Each region term is the per-pixel channel-mean absolute error averaged
    over the region's pixel count; an empty region contributes zero.
    """
    i_out, i_gt = _as_t(i_out), _as_t(i_gt)
    if i_out.data.shape != i_gt.data.shape:
        raise ArgumentError(f"shape mismatch {i_out.data.shape} vs {i_gt.data.shape}")
    m = _mask_arr(mask, i_out.data)
    m_r = 1.0 - m
    per_pixel = dc.tmean(dc.absolute(i_out - i_gt), axis=3, keepdims=True)
    n_hole = float(m.sum())
    n_valid = float(m_r.sum())
    total = None
    if n_valid > 0:
        total = dc.tsum(per_pixel * Tensor(m_r)) * (1.0 / n_valid)
    if n_hole > 0:
        hole = dc.tsum(per_pixel * Tensor(m)) * (6.0 / n_hole)
        total = hole if total is None else total + hole
    return total if total is not None else dc.tsum(per_pixel * 0.0)


def gen_gan_loss(d_scores) -> Tensor:
    """Least-squares generator objective on the fake score map, weighted 0.1."""
    s = _as_t(d_scores)
    return dc.tmean(dc.square(s - 1.0)) * 0.1


def disc_loss(d_real, d_fake) -> Tensor:
    """Least-squares discriminator objective: real toward 1, fake toward 0."""
    r, f = _as_t(d_real), _as_t(d_fake)
    return dc.tmean(dc.square(r - 1.0)) * 0.5 + dc.tmean(dc.square(f)) * 0.5


def tv_loss(i_mer) -> Tensor:
    """Total variation: channel-mean absolute neighbor differences / pixels."""
    t = _as_t(i_mer)
    n, h, w, c = t.data.shape
    dh = dc.crop(t, (slice(None), slice(None), slice(1, None))) - dc.crop(
        t, (slice(None), slice(None), slice(0, -1))
    )
    dv = dc.crop(t, (slice(None), slice(1, None))) - dc.crop(
        t, (slice(None), slice(0, -1))
    )
    total = dc.tsum(dc.absolute(dh)) + dc.tsum(dc.absolute(dv))
    return total * (1.0 / float(n * h * w * c))


class FeatureExtractor:
    """Frozen VGG-16-layout stack tapped after feature indices 5, 10 and 17.

    ``base`` scales every channel width (64 matches the reference layout;
    small bases keep desk-scale tests fast).  Weights come either from a
    seeded deterministic init (test mode) or an external state dict; they
    are never trained.
    """

    def __init__(self, base: int = 64, seed: int = 77, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.base = base
        widths = [base * r for r in VGG_RELATIVE_WIDTHS]
        self.convs: dict[int, Conv] = {}
        c_prev = 3
        for idx, c_out in zip(VGG_CONV_INDICES, widths):
            self.convs[idx] = Conv(c_prev, c_out, rng=rng, name=f"vgg.c{idx}", dtype=dtype)
            c_prev = c_out
        for p in self.params():
            p.requires_grad = False

    def __call__(self, img) -> list[Tensor]:
        h = _as_t(img)
        if h.data.shape[3] != 3:
            raise ArgumentError("feature extractor expects 3-channel input")
        taps = []
        for idx in range(max(VGG_TAP_INDICES) + 1):
            if idx in self.convs:
                h = self.convs[idx](h)
                if idx in VGG_TAP_INDICES:
                    taps.append(h)
                else:
                    h = dc.relu(h)
            elif idx in VGG_POOL_INDICES:
                h = dc.max_pool2x2(h)
            # remaining indices are the ReLUs following tapped convs
            elif idx - 1 in VGG_TAP_INDICES:
                h = dc.relu(h)
        return taps

    def params(self) -> list[Parameter]:
        return [p for conv in self.convs.values() for p in conv.params()]

    def state(self) -> dict[str, np.ndarray]:
        return {p.name: p.data for p in self.params()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for p in self.params():
            if p.name not in state:
                raise ArgumentError(f"missing extractor tensor {p.name}")
            if state[p.name].shape != p.data.shape:
                raise ArgumentError(f"shape mismatch for {p.name}")
            p.data = state[p.name].astype(p.data.dtype)


def extract_features(fx: FeatureExtractor, img) -> list[Tensor]:
    """Taps at the three reference depths, strictly decreasing spatial dims."""
    return fx(img)


def load_extractor(path, base: int = 64) -> FeatureExtractor:
    """Build an extractor from externally supplied weights.

    The file uses the checkpoint tensor format with names prefixed ``vgg.``;
    channel widths must match ``base``.
    """
    from .checkpoint import load_checkpoint

    fx = FeatureExtractor(base=base)
    fx.load_state(load_checkpoint(path))
    return fx


def save_extractor(path, fx: FeatureExtractor) -> None:
    from .checkpoint import save_checkpoint

    save_checkpoint(path, fx.state())


def gram(feature: Tensor) -> Tensor:
    """Channel co-occurrence matrix of a (N,H,W,C) map, normalized by C*H*W."""
    f = _as_t(feature)
    n, h, w, c = f.data.shape
    flat = dc.reshape(f, (n, h * w, c))
    g = dc.matmul(dc.transpose(flat, (0, 2, 1)), flat)
    return g * (1.0 / float(c * h * w))


def perceptual_loss(fx: FeatureExtractor, i_out, i_mer, i_gt) -> Tensor:
    """Sum over tap layers of per-element L1 on features vs ground truth."""
    f_out = fx(i_out)
    f_mer = fx(i_mer)
    f_gt = fx(i_gt)
    total = None
    for fo, fm, fg in zip(f_out, f_mer, f_gt):
        fg_const = Tensor(fg.data)  # ground-truth branch carries no gradient
        term = dc.tmean(dc.absolute(fo - fg_const)) + dc.tmean(dc.absolute(fm - fg_const))
        total = term if total is None else total + term
    return total


def style_loss(fx: FeatureExtractor, i_out, i_mer, i_gt) -> Tensor:
    """Same comparison as the perceptual term but on Gram matrices."""
    f_out = fx(i_out)
    f_mer = fx(i_mer)
    f_gt = fx(i_gt)
    total = None
    for fo, fm, fg in zip(f_out, f_mer, f_gt):
        g_gt = Tensor(gram(Tensor(fg.data)).data)
        term = dc.tmean(dc.absolute(gram(fo) - g_gt)) + dc.tmean(dc.absolute(gram(fm) - g_gt))
        total = term if total is None else total + term
    return total


def stage_loss(recon, tv, per, sty, weights: LossWeights | None = None) -> Tensor:
    """Weighted sum for one refinement stage: recon + 0.1 tv + 0.05 per + 120 sty."""
    w = weights or LossWeights()
    return (
        _as_t(recon)
        + _as_t(tv) * w.lambda_tv
        + _as_t(per) * w.lambda_per
        + _as_t(sty) * w.lambda_sty
    )


def total_restoration_loss(parts: dict[str, float]) -> float:
    """Reported scalar: plain sum of the five stage losses."""
    required = ("recon_coarse", "gan_gen", "disc", "stage_local", "stage_global")
    missing = [k for k in required if k not in parts]
    if missing:
        raise ArgumentError(f"missing loss parts: {missing}")
    return float(sum(float(parts[k]) for k in required))


def mer_loss(l_restore: float, l_enhance: float, lambda_r: int, lambda_e: int) -> float:
    """Two-phase switch: exactly one of the objectives is active."""
    if lambda_r not in (0, 1) or lambda_e not in (0, 1) or lambda_r + lambda_e != 1:
        raise ArgumentError(f"phase switches must be complementary, got ({lambda_r}, {lambda_e})")
    return lambda_r * float(l_restore) + lambda_e * float(l_enhance)
