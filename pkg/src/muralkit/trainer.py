"""Alternating two-phase optimization, batching, schedule and synthetic data.

Each epoch is cut into consecutive subsets of ``subset`` samples; the first
``enh_quota`` samples of every subset train the enhancement networks while
the inpainting side is frozen, and the remainder trains the inpainting side
with the enhancement frozen.  The learning rate is flat for the first
``epochs_flat`` epochs and then decays linearly to zero.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .diffcore import Adam, Tensor, clip_global_norm, no_grad
from .enhance import EnhanceHyper, ResidualEstimator, enhancement_loss, run_enhancement
from .errors import ArgumentError, CheckpointError, NonFiniteError
from .imageio import Image, scale_brightness
from .inpaint import (
    LocalRefiner,
    PatchDiscriminator,
    UNetBackbone,
    coarse_inpaint,
    global_refine,
    local_refine,
    make_coarse,
    make_global,
    merge_with_mask,
)
from .losses import (
    FeatureExtractor,
    disc_loss,
    gen_gan_loss,
    mer_loss,
    perceptual_loss,
    recon_loss,
    stage_loss,
    style_loss,
    total_restoration_loss,
    tv_loss,
)
from .maskgen import MaskSpec, generate_mask

BRIGHTNESS_FACTORS = (0.55, 0.37, 0.12)


class Phase(enum.Enum):
    ENHANCE = "ENHANCE"
    INPAINT = "INPAINT"


@dataclass
class TrainingConfig:
    batch: int = 6
    lr0: float = 1e-4
    epochs_flat: int = 100
    epochs_decay: int = 100
    subset: int = 60
    enh_quota: int = 6
    width: int = 16
    enh_hidden: int = 16
    rounds: int = 6
    alpha: float = 1.5
    beta: float = 1.0
    sigma: float = 0.1
    eps_div: float = 1e-4
    netl_factor1: int = 2
    netl_factor2: int = 2
    fx_base: int = 4
    clip_norm: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.batch < 1:
            raise ArgumentError("batch must be >= 1")
        if not self.enh_quota < self.subset:
            raise ArgumentError("enh_quota must be smaller than subset")

    @property
    def total_epochs(self) -> int:
        return self.epochs_flat + self.epochs_decay

    def hyper(self) -> EnhanceHyper:
        return EnhanceHyper(
            rounds=self.rounds,
            alpha=self.alpha,
            beta=self.beta,
            sigma=self.sigma,
            eps_div=self.eps_div,
        )


_INT_KEYS = {
    "batch", "epochs_flat", "epochs_decay", "subset", "enh_quota", "width",
    "enh_hidden", "rounds", "netl_factor1", "netl_factor2", "fx_base", "seed",
}


def parse_config(text: str) -> TrainingConfig:
    """Line-oriented ``key = value`` format; # starts a comment."""
    values: dict = {}
    names = {f.name for f in fields(TrainingConfig)}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ArgumentError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in names:
            raise ArgumentError(f"config line {lineno}: unknown key {key!r}")
        values[key] = int(value) if key in _INT_KEYS else float(value)
    return TrainingConfig(**values)


def format_config(cfg: TrainingConfig) -> str:
    lines = []
    for f in fields(TrainingConfig):
        lines.append(f"{f.name} = {getattr(cfg, f.name)}")
    return "\n".join(lines) + "\n"


def lr_at(epoch: int, cfg: TrainingConfig) -> float:
    """Flat then linear-to-zero schedule."""
    if not 0 <= epoch < cfg.total_epochs:
        raise ArgumentError(f"epoch {epoch} outside [0, {cfg.total_epochs})")
    if epoch < cfg.epochs_flat:
        return cfg.lr0
    return cfg.lr0 * (cfg.total_epochs - epoch) / cfg.epochs_decay


@dataclass(frozen=True)
class PhaseSpan:
    start: int
    stop: int
    phase: Phase


@dataclass
class PhasePlan:
    spans: list[PhaseSpan]

    def phase_of(self, index: int) -> Phase:
        for span in self.spans:
            if span.start <= index < span.stop:
                return span.phase
        raise ArgumentError(f"index {index} outside plan")

    def enhance_indices(self) -> list[int]:
        out = []
        for span in self.spans:
            if span.phase is Phase.ENHANCE:
                out.extend(range(span.start, span.stop))
        return out


def partition_alternating(n_samples: int, cfg: TrainingConfig) -> PhasePlan:
    """Consecutive subsets with a fixed enhancement quota up front.

    A trailing partial subset keeps the quota proportionally: its first
    ceil(len * quota / subset) samples are enhancement samples.
    """
    if n_samples < 1:
        raise ArgumentError("need at least one sample")
    spans: list[PhaseSpan] = []
    start = 0
    while start < n_samples:
        block = min(cfg.subset, n_samples - start)
        if block == cfg.subset:
            quota = cfg.enh_quota
        else:
            quota = math.ceil(block * cfg.enh_quota / cfg.subset)
        if quota > 0:
            spans.append(PhaseSpan(start, start + quota, Phase.ENHANCE))
        if quota < block:
            spans.append(PhaseSpan(start + quota, start + block, Phase.INPAINT))
        start += block
    return PhasePlan(spans)


# ---------------------------------------------------------------------------
# Model bundle
# ---------------------------------------------------------------------------

META_PREFIX = "meta."


@dataclass
class ModelBundle:
    h_net: ResidualEstimator
    k_net: ResidualEstimator
    netc: UNetBackbone
    netl: LocalRefiner
    netg: UNetBackbone
    disc: PatchDiscriminator
    fx: FeatureExtractor
    cfg: TrainingConfig

    @staticmethod
    def create(cfg: TrainingConfig) -> "ModelBundle":
        s = cfg.seed
        return ModelBundle(
            h_net=ResidualEstimator(hidden=cfg.enh_hidden, seed=s + 1, prefix="enh.h"),
            k_net=ResidualEstimator(hidden=cfg.enh_hidden, seed=s + 2, prefix="enh.k"),
            netc=make_coarse(width=cfg.width, seed=s + 3),
            netl=LocalRefiner(
                width=cfg.width, factors=(cfg.netl_factor1, cfg.netl_factor2), seed=s + 4
            ),
            netg=make_global(width=cfg.width, seed=s + 5),
            disc=PatchDiscriminator(width=cfg.width, seed=s + 6),
            fx=FeatureExtractor(base=cfg.fx_base, seed=s + 7),
            cfg=cfg,
        )

    def enhance_params(self):
        return self.h_net.params() + self.k_net.params()

    def generator_params(self):
        return self.netc.params() + self.netl.params() + self.netg.params()

    def disc_params(self):
        return self.disc.params()

    def named_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for p in self.enhance_params() + self.generator_params() + self.disc_params():
            out[p.name] = p.data
        return out

    def state(self) -> dict[str, np.ndarray]:
        tensors = dict(self.named_tensors())
        tensors[f"{META_PREFIX}width"] = np.array([self.cfg.width], np.float32)
        tensors[f"{META_PREFIX}enh_hidden"] = np.array([self.cfg.enh_hidden], np.float32)
        tensors[f"{META_PREFIX}rounds"] = np.array([self.cfg.rounds], np.float32)
        tensors[f"{META_PREFIX}netl_factors"] = np.array(
            [self.cfg.netl_factor1, self.cfg.netl_factor2], np.float32
        )
        return tensors

    @staticmethod
    def from_state(tensors: dict[str, np.ndarray], cfg: TrainingConfig | None = None) -> "ModelBundle":
        meta_needed = ["width", "enh_hidden", "rounds", "netl_factors"]
        missing = [META_PREFIX + k for k in meta_needed if META_PREFIX + k not in tensors]
        if missing:
            raise CheckpointError("checkpoint missing tensors", missing)
        cfg = cfg or TrainingConfig()
        cfg.width = int(tensors[f"{META_PREFIX}width"][0])
        cfg.enh_hidden = int(tensors[f"{META_PREFIX}enh_hidden"][0])
        cfg.rounds = int(tensors[f"{META_PREFIX}rounds"][0])
        cfg.netl_factor1 = int(tensors[f"{META_PREFIX}netl_factors"][0])
        cfg.netl_factor2 = int(tensors[f"{META_PREFIX}netl_factors"][1])
        bundle = ModelBundle.create(cfg)
        expected = bundle.named_tensors()
        missing = [name for name in expected if name not in tensors]
        if missing:
            raise CheckpointError("checkpoint missing tensors", missing)
        for p in (
            bundle.enhance_params() + bundle.generator_params() + bundle.disc_params()
        ):
            arr = tensors[p.name]
            if arr.shape != p.data.shape:
                raise CheckpointError(
                    f"shape mismatch for {p.name}: file {arr.shape} vs model {p.data.shape}"
                )
            p.data = arr.astype(p.data.dtype)
        return bundle

    def save(self, path) -> None:
        save_checkpoint(path, self.state())

    @staticmethod
    def load(path, cfg: TrainingConfig | None = None) -> "ModelBundle":
        return ModelBundle.from_state(load_checkpoint(path), cfg=cfg)


def params_digest(params) -> str:
    """SHA-256 over names and raw parameter bytes (freeze verification)."""
    h = hashlib.sha256()
    for p in sorted(params, key=lambda p: p.name):
        h.update(p.name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Synthetic dataset
# ---------------------------------------------------------------------------


@dataclass
class SyntheticSample:
    gt: Image
    darkened: dict[float, Image]
    mask: "object"


def synthetic_tile(seed: int, size: int = 256) -> Image:
    """Procedural mural-like tile: smooth color fields, strokes, speckle."""
    rng = np.random.default_rng(seed)
    # smooth colored regions: low-res field blown up bilinearly
    grid = rng.uniform(0.35, 0.85, (5, 5, 3))
    axis = np.linspace(0, 4, size)
    i0 = np.floor(axis).astype(int).clip(0, 3)
    f = axis - i0
    rows = grid[i0] * (1 - f)[:, None, None] + grid[i0 + 1] * f[:, None, None]
    tile = rows[:, i0] * (1 - f)[None, :, None] + rows[:, i0 + 1] * f[None, :, None]
    # curvilinear strokes: random walks with a small brush and paint color
    n_strokes = int(rng.integers(4, 9))
    for _ in range(n_strokes):
        color = rng.uniform(0.05, 0.45, 3)
        y, x = rng.integers(0, size, 2)
        vy, vx = rng.normal(0, 1, 2)
        r = int(rng.integers(1, 4))
        for _ in range(int(rng.integers(40, 120))):
            vy += rng.normal(0, 0.4)
            vx += rng.normal(0, 0.4)
            norm = max(np.hypot(vy, vx), 1e-6)
            y = int(np.clip(y + 2 * vy / norm, 0, size - 1))
            x = int(np.clip(x + 2 * vx / norm, 0, size - 1))
            y0, y1 = max(y - r, 0), min(y + r + 1, size)
            x0, x1 = max(x - r, 0), min(x + r + 1, size)
            tile[y0:y1, x0:x1] = color
    # speckle
    tile = tile + rng.normal(0, 0.02, tile.shape)
    return Image(np.clip(tile, 0.0, 1.0).astype(np.float32))


def synthetic_sample(
    seed: int,
    index: int,
    size: int = 256,
    factors: tuple[float, ...] = BRIGHTNESS_FACTORS,
    coverage: float = 0.275,
) -> SyntheticSample:
    gt = synthetic_tile(seed * 100003 + index, size=size)
    darkened = {f: scale_brightness(gt, f) for f in factors}
    family = ("DUSK", "JELLY", "DROPLET", "BLOCK", "LINE")[index % 5]
    mask = generate_mask(
        MaskSpec(family=family, coverage_target=coverage, size=size, seed=seed * 7919 + index)
    )
    return SyntheticSample(gt=gt, darkened=darkened, mask=mask)


def make_synthetic_dataset(
    count: int,
    size: int = 256,
    seed: int = 0,
    factors: tuple[float, ...] = BRIGHTNESS_FACTORS,
    coverage: float = 0.275,
) -> list[SyntheticSample]:
    return [synthetic_sample(seed, i, size=size, factors=factors, coverage=coverage) for i in range(count)]


# ---------------------------------------------------------------------------
# Training steps
# ---------------------------------------------------------------------------


@dataclass
class StepReport:
    step: int
    phase: Phase
    lr: float
    losses: dict[str, float]

    def as_json(self) -> str:
        return json.dumps(
            {
                "step": self.step,
                "phase": self.phase.value,
                "lr": self.lr,
                "losses": {k: float(v) for k, v in self.losses.items()},
            }
        )


class EnhanceCache:
    """Inference cache for enhanced tiles, invalidated by parameter version."""

    def __init__(self, limit: int = 64):
        self.version = 0
        self.limit = limit
        self._store: dict[int, tuple[int, np.ndarray]] = {}

    def bump(self) -> None:
        self.version += 1

    def get(self, key: int):
        hit = self._store.get(key)
        if hit is not None and hit[0] == self.version:
            return hit[1]
        return None

    def put(self, key: int, value: np.ndarray) -> None:
        if len(self._store) >= self.limit:
            self._store.pop(next(iter(self._store)))
        self._store[key] = (self.version, value)


def train_step_enhance(
    batch_dark: np.ndarray,
    bundle: ModelBundle,
    opt: Adam,
    lr: float,
    cfg: TrainingConfig,
) -> dict[str, float]:
    """One unsupervised enhancement update; inpainting parameters untouched."""
    opt.zero_grad()
    _, trace = run_enhancement(Tensor(batch_dark), bundle.h_net, bundle.k_net, cfg.hyper())
    loss = enhancement_loss(trace, cfg.hyper())
    value = loss.item()
    if not np.isfinite(value):
        raise NonFiniteError("enhancement loss diverged", f"{value}")
    loss.backward()
    clip_global_norm(opt.params, cfg.clip_norm)
    opt.step(lr=lr)
    opt.zero_grad()
    l_e = float(value)
    return {"enhance": l_e, "mer": mer_loss(0.0, l_e, 0, 1)}


def train_step_inpaint(
    batch: list[tuple[np.ndarray, np.ndarray, np.ndarray]],
    bundle: ModelBundle,
    opt_gen: Adam,
    opt_disc: Adam,
    lr: float,
    cfg: TrainingConfig,
    cache: EnhanceCache | None = None,
    cache_keys: list[int] | None = None,
) -> dict[str, float]:
    """One generator update then one discriminator update.

    ``batch`` holds (darkened, ground truth, mask bits) triples; enhancement
    runs inference-only to produce the restoration input.
    """
    dark = np.stack([b[0] for b in batch])
    gt = np.stack([b[1] for b in batch])
    masks = np.stack([b[2] for b in batch])[:, :, :, None].astype(dark.dtype)

    i_in = None
    if cache is not None and cache_keys is not None:
        hits = [cache.get(k) for k in cache_keys]
        if all(h is not None for h in hits):
            i_in = np.stack(hits)
    if i_in is None:
        with no_grad():
            i_in, _ = run_enhancement(dark, bundle.h_net, bundle.k_net, cfg.hyper())
        if cache is not None and cache_keys is not None:
            for k, tile in zip(cache_keys, i_in):
                cache.put(k, tile)

    # generator pass; stages are detached so each loss trains its own
    # network (otherwise later objectives repurpose the coarse output as a
    # free latent and drive it away from the ground truth)
    i_out_c = coarse_inpaint(bundle.netc, i_in, masks)
    i_mer_c = merge_with_mask(Tensor(i_in), i_out_c, masks)
    l_rec_c = recon_loss(i_out_c, gt, masks)
    l_gan_g = gen_gan_loss(bundle.disc(i_mer_c, update_state=False))

    i_mer_c_in = Tensor(i_mer_c.data)
    i_out_l = local_refine(bundle.netl, i_mer_c_in)
    i_mer_l = merge_with_mask(Tensor(i_in), i_out_l, masks)
    l_local = stage_loss(
        recon_loss(i_out_l, gt, masks),
        tv_loss(i_mer_l),
        perceptual_loss(bundle.fx, i_out_l, i_mer_l, gt),
        style_loss(bundle.fx, i_out_l, i_mer_l, gt),
    )

    i_mer_l_in = Tensor(i_mer_l.data)
    i_out_g = global_refine(bundle.netg, i_mer_l_in)
    i_mer_g = merge_with_mask(Tensor(i_in), i_out_g, masks)
    l_global = stage_loss(
        recon_loss(i_out_g, gt, masks),
        tv_loss(i_mer_g),
        perceptual_loss(bundle.fx, i_out_g, i_mer_g, gt),
        style_loss(bundle.fx, i_out_g, i_mer_g, gt),
    )

    gen_total = l_rec_c + l_gan_g + l_local + l_global
    if not np.isfinite(gen_total.item()):
        raise NonFiniteError("generator loss diverged", f"{gen_total.item()}")
    opt_gen.zero_grad()
    opt_disc.zero_grad()
    gen_total.backward()
    # clip per subnet: the style-heavy refinement gradients must not crush
    # the coarse network's reconstruction signal through a shared norm
    clip_global_norm(bundle.netc.params(), cfg.clip_norm)
    clip_global_norm(bundle.netl.params(), cfg.clip_norm)
    clip_global_norm(bundle.netg.params(), cfg.clip_norm)
    opt_gen.step(lr=lr)
    opt_gen.zero_grad()
    opt_disc.zero_grad()

    # discriminator pass on the merged coarse result only
    d_real = bundle.disc(Tensor(gt), update_state=True)
    d_fake = bundle.disc(Tensor(i_mer_c.data), update_state=False)
    l_disc = disc_loss(d_real, d_fake)
    if not np.isfinite(l_disc.item()):
        raise NonFiniteError("discriminator loss diverged", f"{l_disc.item()}")
    l_disc.backward()
    clip_global_norm(opt_disc.params, cfg.clip_norm)
    opt_disc.step(lr=lr)
    opt_disc.zero_grad()

    parts = {
        "recon_coarse": l_rec_c.item(),
        "gan_gen": l_gan_g.item(),
        "disc": l_disc.item(),
        "stage_local": l_local.item(),
        "stage_global": l_global.item(),
    }
    l_r = total_restoration_loss(parts)
    parts["restoration"] = l_r
    parts["mer"] = mer_loss(l_r, 0.0, 1, 0)
    return parts


@dataclass
class TrainResult:
    steps: int
    reports: list[StepReport] = field(default_factory=list)


def train(
    cfg: TrainingConfig,
    samples: list[tuple[np.ndarray, np.ndarray, np.ndarray]],
    bundle: ModelBundle | None = None,
    epochs: int | None = None,
    max_steps: int | None = None,
    log_path: str | Path | None = None,
    on_step=None,
    use_cache: bool = True,
) -> tuple[ModelBundle, TrainResult]:
    """Run the alternating schedule over (darkened, gt, mask) triples."""
    bundle = bundle or ModelBundle.create(cfg)
    opt_enh = Adam(bundle.enhance_params(), lr=cfg.lr0)
    opt_gen = Adam(bundle.generator_params(), lr=cfg.lr0)
    opt_disc = Adam(bundle.disc_params(), lr=cfg.lr0)
    cache = EnhanceCache(limit=max(len(samples), 8)) if use_cache else None
    rng = np.random.default_rng(cfg.seed + 1000)
    plan = partition_alternating(len(samples), cfg)
    result = TrainResult(steps=0)
    log_file = open(log_path, "a") if log_path else None
    total_epochs = epochs if epochs is not None else cfg.total_epochs
    try:
        for epoch in range(total_epochs):
            lr = lr_at(epoch % cfg.total_epochs, cfg)
            order = rng.permutation(len(samples))
            for span in plan.spans:
                indices = order[span.start : span.stop]
                for lo in range(0, len(indices), cfg.batch):
                    chunk = indices[lo : lo + cfg.batch]
                    if max_steps is not None and result.steps >= max_steps:
                        return bundle, result
                    if span.phase is Phase.ENHANCE:
                        dark = np.stack([samples[i][0] for i in chunk])
                        losses = train_step_enhance(dark, bundle, opt_enh, lr, cfg)
                        if cache is not None:
                            cache.bump()
                    else:
                        batch = [samples[i] for i in chunk]
                        losses = train_step_inpaint(
                            batch,
                            bundle,
                            opt_gen,
                            opt_disc,
                            lr,
                            cfg,
                            cache=cache,
                            cache_keys=[int(i) for i in chunk],
                        )
                    report = StepReport(result.steps, span.phase, lr, losses)
                    result.steps += 1
                    result.reports.append(report)
                    if log_file:
                        log_file.write(report.as_json() + "\n")
                    if on_step:
                        on_step(report)
    finally:
        if log_file:
            log_file.close()
    return bundle, result
