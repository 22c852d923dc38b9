"""Synthetic damage masks: five families with controlled coverage.

Families mimic common mural damage forms: thick random-walk trails (DUSK),
corrosion rings around those trails (JELLY), scattered small spots
(DROPLET), large circular stains (BLOCK) and straight scratches (LINE).
Coverage is driven into the requested band by iterative growth with undo:
add an element, and on overshoot revert and retry with a smaller or more
overlapping one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, GenerationError
from .imageio import Mask

FAMILIES = ("DUSK", "JELLY", "DROPLET", "BLOCK", "LINE")
COVERAGE_TOL = 0.02
MAX_GROW_ITERATIONS = 1000


@dataclass
class MaskSpec:
    family: str
    coverage_target: float
    size: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ArgumentError(f"unknown mask family {self.family!r}; choose from {FAMILIES}")
        if not 0.05 <= self.coverage_target <= 0.50:
            raise ArgumentError(
                f"coverage target must lie in [0.05, 0.50], got {self.coverage_target}"
            )
        if self.size < 16:
            raise ArgumentError("mask size must be at least 16")


@dataclass
class MaskMeta:
    """Construction record for geometric verification."""

    discs: list[tuple[int, int, int]] = field(default_factory=list)  # (y, x, r)
    segments: list[tuple[float, float, float, float, float]] = field(default_factory=list)
    parent: np.ndarray | None = None  # DUSK parent of a JELLY ring
    ring_radius: int = 0


def coverage_of(mask: Mask | np.ndarray) -> float:
    bits = mask.bits if isinstance(mask, Mask) else np.asarray(mask)
    return float(bits.sum()) / bits.size


def _disc_stencil(r: int) -> np.ndarray:
    span = np.arange(-r, r + 1)
    yy, xx = np.meshgrid(span, span, indexing="ij")
    return (yy * yy + xx * xx) <= r * r


_STENCILS: dict[int, np.ndarray] = {}


def _stamp_disc(canvas: np.ndarray, y: int, x: int, r: int) -> None:
    if r not in _STENCILS:
        _STENCILS[r] = _disc_stencil(r)
    st = _STENCILS[r]
    n = canvas.shape[0]
    y0, y1 = max(y - r, 0), min(y + r + 1, n)
    x0, x1 = max(x - r, 0), min(x + r + 1, n)
    canvas[y0:y1, x0:x1] |= st[y0 - (y - r) : y1 - (y - r), x0 - (x - r) : x1 - (x - r)]


def _shift_or(mask: np.ndarray, offsets: np.ndarray, combine_and: bool, outside: bool) -> np.ndarray:
    out = np.full_like(mask, combine_and)
    n, m = mask.shape
    for dy, dx in offsets:
        shifted = np.full_like(mask, outside)
        ys = slice(max(dy, 0), min(n + dy, n))
        yd = slice(max(-dy, 0), min(n - dy, n))
        xs = slice(max(dx, 0), min(m + dx, m))
        xd = slice(max(-dx, 0), min(m - dx, m))
        shifted[yd, xd] = mask[ys, xs]
        if combine_and:
            out &= shifted
        else:
            out |= shifted
    return out


def _disc_offsets(r: int) -> np.ndarray:
    st = _disc_stencil(r)
    ys, xs = np.nonzero(st)
    return np.stack([ys - r, xs - r], axis=1)


def binary_dilate(mask: np.ndarray, r: int) -> np.ndarray:
    return _shift_or(mask, _disc_offsets(r), combine_and=False, outside=False)


def binary_erode(mask: np.ndarray, r: int) -> np.ndarray:
    return _shift_or(mask, _disc_offsets(r), combine_and=True, outside=True)


def binary_close(mask: np.ndarray, r: int) -> np.ndarray:
    """Fill pinholes: dilate (outside empty) then erode (outside solid)."""
    if r <= 0:
        return mask
    return binary_erode(binary_dilate(mask, r), r)


def _dusk_stroke(canvas: np.ndarray, rng: np.random.Generator, scale: float, meta: MaskMeta) -> None:
    n = canvas.shape[0]
    r = max(2, int(round(rng.integers(2, 9) * scale)))
    steps = max(4, int(round(rng.integers(16, 48) * scale)))
    y = int(rng.integers(0, n))
    x = int(rng.integers(0, n))
    for _ in range(steps):
        _stamp_disc(canvas, y, x, r)
        meta.discs.append((y, x, r))
        dy, dx = int(rng.integers(-1, 2)), int(rng.integers(-1, 2))
        y = int(np.clip(y + dy * r, 0, n - 1))
        x = int(np.clip(x + dx * r, 0, n - 1))


def _droplet(canvas: np.ndarray, rng: np.random.Generator, scale: float, meta: MaskMeta) -> None:
    n = canvas.shape[0]
    r = int(rng.integers(1, 5))
    y, x = int(rng.integers(0, n)), int(rng.integers(0, n))
    _stamp_disc(canvas, y, x, r)
    meta.discs.append((y, x, r))


def _block(canvas: np.ndarray, rng: np.random.Generator, scale: float, meta: MaskMeta) -> None:
    n = canvas.shape[0]
    r = int(round(16 + (48 - 16) * rng.random() * scale))
    r = max(16, min(48, r))
    y, x = int(rng.integers(0, n)), int(rng.integers(0, n))
    _stamp_disc(canvas, y, x, r)
    meta.discs.append((y, x, r))


def _line(canvas: np.ndarray, rng: np.random.Generator, scale: float, meta: MaskMeta) -> None:
    n = canvas.shape[0]
    thickness = int(rng.integers(1, 6))
    y0, x0 = rng.integers(0, n, 2)
    angle = rng.random() * 2 * np.pi
    length = max(8.0, float(rng.integers(n // 4, n)) * scale)
    y1 = float(y0) + np.sin(angle) * length
    x1 = float(x0) + np.cos(angle) * length
    meta.segments.append((float(y0), float(x0), y1, x1, float(thickness)))
    steps = int(np.hypot(y1 - y0, x1 - x0)) * 2 + 2
    rr = max(0, (thickness - 1) // 2)
    for t in np.linspace(0.0, 1.0, steps):
        y = int(round(float(y0) + (y1 - float(y0)) * t))
        x = int(round(float(x0) + (x1 - float(x0)) * t))
        if 0 <= y < n and 0 <= x < n:
            _stamp_disc(canvas, y, x, rr)


_ELEMENTS = {"DUSK": _dusk_stroke, "DROPLET": _droplet, "BLOCK": _block, "LINE": _line}

# rough net pixel gain per element, used to batch growth far from the band
_ELEMENT_AREA = {"DUSK": 900, "DROPLET": 22, "BLOCK": 2400, "LINE": 350}


def _grow_to_target(spec: MaskSpec, element_fn, rng: np.random.Generator, meta: MaskMeta) -> np.ndarray:
    canvas = np.zeros((spec.size, spec.size), dtype=bool)
    target = spec.coverage_target
    est_area = _ELEMENT_AREA[spec.family]
    scale = 1.0
    fine = False
    for _ in range(MAX_GROW_ITERATIONS):
        cov = canvas.mean()
        if target - COVERAGE_TOL <= cov <= target + COVERAGE_TOL:
            return canvas
        gap_px = (target - cov) * canvas.size
        batch = 1 if fine else int(np.clip(gap_px // (2 * est_area), 1, 64))
        snapshot = canvas.copy()
        n_discs, n_segs = len(meta.discs), len(meta.segments)
        for _ in range(batch):
            element_fn(canvas, rng, scale, meta)
        if canvas.mean() > target + COVERAGE_TOL:
            canvas = snapshot
            del meta.discs[n_discs:]
            del meta.segments[n_segs:]
            scale = max(scale * 0.7, 0.05)
            fine = True
    raise GenerationError(
        f"could not reach coverage {target:.2f} for {spec.family} within "
        f"{MAX_GROW_ITERATIONS} iterations"
    )


def _grow_jelly(spec: MaskSpec, rng: np.random.Generator, meta: MaskMeta) -> np.ndarray:
    # wider rings for high targets: ring area saturates once strokes merge
    ring_r = 2 + int(round(8 * max(0.0, spec.coverage_target - 0.15)))
    meta.ring_radius = ring_r
    parent = np.zeros((spec.size, spec.size), dtype=bool)
    target = spec.coverage_target
    scale = 0.5  # thin parent strokes maximize perimeter per covered pixel
    ring = np.zeros_like(parent)
    stall = 0
    for _ in range(MAX_GROW_ITERATIONS):
        cov = ring.mean()
        if target - COVERAGE_TOL <= cov <= target + COVERAGE_TOL:
            meta.parent = parent
            return ring
        snapshot = parent.copy()
        n_discs = len(meta.discs)
        _dusk_stroke(parent, rng, scale, meta)
        new_ring = binary_dilate(parent, ring_r) & ~binary_erode(parent, ring_r)
        if new_ring.mean() > target + COVERAGE_TOL:
            parent = snapshot
            del meta.discs[n_discs:]
            scale = max(scale * 0.7, 0.05)
        elif new_ring.mean() <= cov + 1e-6:
            # merged strokes stopped adding perimeter; keep but shrink brush
            ring = new_ring
            stall += 1
            if stall > 5:
                scale = max(scale * 0.8, 0.05)
                stall = 0
        else:
            ring = new_ring
            stall = 0
    raise GenerationError(
        f"could not reach coverage {target:.2f} for JELLY within {MAX_GROW_ITERATIONS} iterations"
    )


def generate_mask_with_meta(spec: MaskSpec) -> tuple[Mask, MaskMeta]:
    """Deterministic mask synthesis; meta records the constructive elements."""
    rng = np.random.default_rng(spec.seed)
    meta = MaskMeta()
    if spec.family == "JELLY":
        canvas = _grow_jelly(spec, rng, meta)
    else:
        canvas = _grow_to_target(spec, _ELEMENTS[spec.family], rng, meta)
    return Mask(canvas.astype(np.uint8)), meta


def generate_mask(spec: MaskSpec) -> Mask:
    return generate_mask_with_meta(spec)[0]
