"""Stage two: coarse, local and global inpainting networks plus the
spectral-normalized patch discriminator.

The coarse and global networks share one encoder/decoder backbone with eight
stride-2 halvings, long concatenation skips and a bounded [0,1] head; the
global variant inserts self-attention in front of the decoder convolutions
whose features sit at 16x16, 32x32 and 64x64 for a 256 tile.  The local
refiner runs at an internally upsampled resolution with a deliberately small
receptive field measured in source pixels.
"""

from __future__ import annotations

import math

import numpy as np

from . import diffcore as dc
from .diffcore import Conv, Parameter, SpectralConv, Tensor
from .errors import ArgumentError

UNET_LEVELS = 8
ATTENTION_LEVELS = (4, 3, 2)  # decoder levels at 16/32/64 px for a 256 input


def _as_mask_array(mask, n: int, h: int, w: int, dtype) -> np.ndarray:
    bits = mask.bits if hasattr(mask, "bits") else np.asarray(mask)
    if bits.ndim == 2:
        bits = bits[None, :, :, None]
    elif bits.ndim == 3:
        bits = bits[:, :, :, None]
    if bits.shape[1] != h or bits.shape[2] != w:
        raise ArgumentError(f"mask shape {bits.shape[1:3]} does not match image {(h, w)}")
    if bits.shape[0] == 1 and n > 1:
        bits = np.broadcast_to(bits, (n, h, w, 1))
    return bits.astype(dtype)


def merge_with_mask(i_in, i_out, mask):
    """Composite: valid pixels from ``i_in``, hole pixels from ``i_out``."""
    as_tensor = isinstance(i_in, Tensor) or isinstance(i_out, Tensor)
    in_data = i_in.data if isinstance(i_in, Tensor) else np.asarray(i_in)
    out_data = i_out.data if isinstance(i_out, Tensor) else np.asarray(i_out)
    if in_data.shape != out_data.shape:
        raise ArgumentError(f"shape mismatch: {in_data.shape} vs {out_data.shape}")
    n, h, w, _ = in_data.shape
    m = _as_mask_array(mask, n, h, w, in_data.dtype)
    if not as_tensor:
        return in_data * (1.0 - m) + out_data * m
    i_in_t = i_in if isinstance(i_in, Tensor) else Tensor(in_data)
    i_out_t = i_out if isinstance(i_out, Tensor) else Tensor(out_data)
    return i_in_t * Tensor(1.0 - m) + i_out_t * Tensor(m)


class ResidualBlock:
    """Two 3x3 convolutions with a skip connection."""

    def __init__(self, channels: int, rng, name: str, dtype=np.float32):
        self.c1 = Conv(channels, channels, rng=rng, name=f"{name}.c1", dtype=dtype)
        self.c2 = Conv(channels, channels, rng=rng, name=f"{name}.c2", dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.c2(dc.relu(self.c1(x)))

    def params(self) -> list[Parameter]:
        return self.c1.params() + self.c2.params()


class AttentionBlock:
    """Scaled dot-product self-attention over spatial positions.

    Query/key/value are 1x1 convolutions; the attended value is projected
    back and added to the input (residual), so zeroing the value projection
    makes the block an identity.
    """

    def __init__(self, channels: int, rng, name: str, dtype=np.float32):
        self.q = Conv(channels, channels, k=1, rng=rng, name=f"{name}.q", dtype=dtype)
        self.k = Conv(channels, channels, k=1, rng=rng, name=f"{name}.k", dtype=dtype)
        self.v = Conv(channels, channels, k=1, rng=rng, name=f"{name}.v", dtype=dtype)
        self.out = Conv(channels, channels, k=1, rng=rng, name=f"{name}.out", dtype=dtype)
        self.channels = channels

    def __call__(self, x: Tensor) -> Tensor:
        n, h, w, c = x.data.shape
        q = dc.reshape(self.q(x), (n, h * w, c))
        k = dc.reshape(self.k(x), (n, h * w, c))
        v = dc.reshape(self.v(x), (n, h * w, c))
        scores = dc.matmul(q, dc.transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(c))
        att = dc.softmax(scores, axis=-1)
        gathered = dc.reshape(dc.matmul(att, v), (n, h, w, c))
        return x + self.out(gathered)

    def attention_weights(self, x: Tensor) -> np.ndarray:
        n, h, w, c = x.data.shape
        q = dc.reshape(self.q(x), (n, h * w, c))
        k = dc.reshape(self.k(x), (n, h * w, c))
        scores = dc.matmul(q, dc.transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(c))
        return dc.softmax(scores, axis=-1).data

    def params(self) -> list[Parameter]:
        return self.q.params() + self.k.params() + self.v.params() + self.out.params()


def attention_apply(features: Tensor, block: AttentionBlock) -> Tensor:
    """Apply a self-attention block to a square spatial feature map."""
    if features.data.shape[1] != features.data.shape[2]:
        raise ArgumentError("attention expects a square spatial feature map")
    return block(features)


class UNetBackbone:
    """Eight stride-2 halvings, mirrored decoder with concat skips, [0,1] head."""

    def __init__(
        self,
        in_channels: int,
        width: int = 16,
        attention: bool = False,
        seed: int = 0,
        prefix: str = "netc",
        dtype=np.float32,
        zero_head: bool = True,
    ):
        rng = np.random.default_rng(seed)
        self.in_channels = in_channels
        self.width = width
        cap = 8 * width
        self.enc_channels = [min(width * 2**k, cap) for k in range(UNET_LEVELS)]
        self.encoder = []
        c_prev = in_channels
        for k, c in enumerate(self.enc_channels):
            self.encoder.append(
                Conv(c_prev, c, stride=2, rng=rng, name=f"{prefix}.e{k + 1}", dtype=dtype)
            )
            c_prev = c
        self.decoder = []
        self.attention_blocks: dict[int, AttentionBlock] = {}
        attn_channels: dict[int, int] = {}
        c_prev = self.enc_channels[-1]
        # decoder level k+1 produces the feature at the resolution of encoder k+1
        for k in range(UNET_LEVELS - 2, -2, -1):
            skip_c = self.enc_channels[k] if k >= 0 else in_channels
            out_c = self.enc_channels[k] if k >= 0 else width
            self.decoder.append(
                Conv(c_prev + skip_c, out_c, rng=rng, name=f"{prefix}.d{k + 1}", dtype=dtype)
            )
            if attention and k + 1 in ATTENTION_LEVELS:
                attn_channels[k + 1] = out_c
            c_prev = out_c
        # a zero head starts the bounded output at 0.5, away from sigmoid
        # saturation that otherwise kills gradients early in training
        self.head = Conv(width, 3, rng=rng, name=f"{prefix}.head", dtype=dtype, zero_init=zero_head)
        # attention draws come last so conv weights match the plain variant
        for level, channels in attn_channels.items():
            size = 256 // 2**level
            self.attention_blocks[level] = AttentionBlock(
                channels, rng, name=f"{prefix}.att{size}", dtype=dtype
            )

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.shape[3] != self.in_channels:
            raise ArgumentError(
                f"expected {self.in_channels} input channels, got {x.data.shape[3]}"
            )
        feats = []
        h = x
        for conv in self.encoder:
            h = dc.relu(conv(h))
            feats.append(h)
        h = feats[-1]
        for i, conv in enumerate(self.decoder):
            level = UNET_LEVELS - 1 - i  # encoder level being reconstructed (0 = input)
            skip = feats[level - 1] if level >= 1 else x
            h = dc.relu(conv(dc.concat([dc.upsample_nearest(h, 2), skip], axis=3)))
            if level in self.attention_blocks:
                h = self.attention_blocks[level](h)
        return dc.sigmoid(self.head(h))

    def params(self) -> list[Parameter]:
        out = []
        for conv in self.encoder:
            out.extend(conv.params())
        for conv in self.decoder:
            out.extend(conv.params())
        for block in self.attention_blocks.values():
            out.extend(block.params())
        out.extend(self.head.params())
        return out


class LocalRefiner:
    """Up / residual / down refiner with a small source-pixel receptive field.

    ``factors`` are the internal upsample factors of the two up blocks; the
    matching stride-2 (or identity) convolutions bring the resolution back.
    Channel widths shrink as resolution grows to keep memory bounded.
    """

    def __init__(
        self,
        width: int = 16,
        factors: tuple[int, int] = (2, 2),
        seed: int = 0,
        prefix: str = "netl",
        dtype=np.float32,
        zero_head: bool = True,
    ):
        rng = np.random.default_rng(seed)
        self.width = width
        self.factors = tuple(factors)
        c1 = max(width // 2, 4)
        c2 = max(width // 4, 4)
        self.channels = (c1, c2)
        self.up1 = Conv(3, c1, rng=rng, name=f"{prefix}.up1", dtype=dtype)
        self.up2 = Conv(c1, c2, rng=rng, name=f"{prefix}.up2", dtype=dtype)
        self.res = [ResidualBlock(c2, rng, f"{prefix}.res{i + 1}", dtype) for i in range(4)]
        self.down1 = Conv(c2, c1, stride=self.factors[1], rng=rng, name=f"{prefix}.down1", dtype=dtype)
        self.down2 = Conv(c1, width, stride=self.factors[0], rng=rng, name=f"{prefix}.down2", dtype=dtype)
        self.head = Conv(width, 3, rng=rng, name=f"{prefix}.head", dtype=dtype, zero_init=zero_head)

    def __call__(self, x: Tensor) -> Tensor:
        h = dc.relu(self.up1(dc.upsample_nearest(x, self.factors[0])))
        h = dc.relu(self.up2(dc.upsample_nearest(h, self.factors[1])))
        for block in self.res:
            h = block(h)
        h = dc.relu(self.down1(h))
        h = dc.relu(self.down2(h))
        return dc.sigmoid(self.head(h))

    def receptive_field(self) -> int:
        """Receptive-field diameter in source pixels (analytic bound)."""
        radius = 0.0
        scale = 1.0
        radius += 1.0 / scale  # up1 conv after x`factors[0]` upsample
        scale *= self.factors[0]
        radius += 1.0 / scale
        scale *= self.factors[1]
        radius += 1.0 / scale  # up2 conv
        radius += 8.0 / scale  # four residual blocks, two convs each
        radius += 1.0 / scale  # down1 reads at the upsampled scale
        scale /= self.factors[1]
        radius += 1.0 / scale  # down2
        scale /= self.factors[0]
        radius += 1.0  # head conv at source scale
        return 2 * math.ceil(radius) + 1

    def params(self) -> list[Parameter]:
        out = self.up1.params() + self.up2.params()
        for block in self.res:
            out.extend(block.params())
        out.extend(self.down1.params() + self.down2.params() + self.head.params())
        return out


class PatchDiscriminator:
    """Three spectral-normalized stride-2 blocks plus a score head.

    Produces a 32x32 single-channel score map for a 256x256 input.
    """

    def __init__(self, width: int = 16, seed: int = 0, prefix: str = "disc", dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.blocks = [
            SpectralConv(3, width, stride=2, rng=rng, name=f"{prefix}.c1", dtype=dtype, seed=seed + 1),
            SpectralConv(width, 2 * width, stride=2, rng=rng, name=f"{prefix}.c2", dtype=dtype, seed=seed + 2),
            SpectralConv(2 * width, 4 * width, stride=2, rng=rng, name=f"{prefix}.c3", dtype=dtype, seed=seed + 3),
        ]
        self.head = SpectralConv(4 * width, 1, rng=rng, name=f"{prefix}.head", dtype=dtype, seed=seed + 4)

    def __call__(self, x: Tensor, update_state: bool = False) -> Tensor:
        if x.data.shape[1] != 256 or x.data.shape[2] != 256:
            raise ArgumentError(f"discriminator expects 256x256 input, got {x.data.shape[1:3]}")
        h = x
        for block in self.blocks:
            h = dc.leaky_relu(block(h, update_state=update_state), 0.2)
        return self.head(h, update_state=update_state)

    def params(self) -> list[Parameter]:
        out = []
        for block in self.blocks:
            out.extend(block.params())
        out.extend(self.head.params())
        return out


def make_coarse(width: int = 16, seed: int = 1, dtype=np.float32, zero_head: bool = True) -> UNetBackbone:
    return UNetBackbone(
        4, width=width, attention=False, seed=seed, prefix="netc", dtype=dtype, zero_head=zero_head
    )


def make_global(width: int = 16, seed: int = 3, dtype=np.float32, zero_head: bool = True) -> UNetBackbone:
    return UNetBackbone(
        3, width=width, attention=True, seed=seed, prefix="netg", dtype=dtype, zero_head=zero_head
    )


def _check_tile_dims(shape) -> None:
    if shape[1] % 256 != 0 or shape[2] % 256 != 0:
        raise ArgumentError(f"spatial dims must be multiples of 256, got {shape[1:3]}")


def coarse_inpaint(net: UNetBackbone, i_in, mask) -> Tensor:
    """Coarse pass: holes zeroed, mask appended as a fourth channel."""
    i_in_t = i_in if isinstance(i_in, Tensor) else Tensor(np.asarray(i_in))
    _check_tile_dims(i_in_t.data.shape)
    n, h, w, _ = i_in_t.data.shape
    m = _as_mask_array(mask, n, h, w, i_in_t.data.dtype)
    masked = i_in_t * Tensor(1.0 - m)
    x = dc.concat([masked, Tensor(np.broadcast_to(m, (n, h, w, 1)).copy())], axis=3)
    return net(x)


def local_refine(net: LocalRefiner, i_mer) -> Tensor:
    i_mer_t = i_mer if isinstance(i_mer, Tensor) else Tensor(np.asarray(i_mer))
    return net(i_mer_t)


def global_refine(net: UNetBackbone, i_mer) -> Tensor:
    i_mer_t = i_mer if isinstance(i_mer, Tensor) else Tensor(np.asarray(i_mer))
    _check_tile_dims(i_mer_t.data.shape)
    return net(i_mer_t)


def discriminate(disc: PatchDiscriminator, img, update_state: bool = False) -> Tensor:
    img_t = img if isinstance(img, Tensor) else Tensor(np.asarray(img))
    return disc(img_t, update_state=update_state)
