"""Image containers, PNG codec, brightness degradation, color conversion and tiling.

Pixel samples live in [0, 1] as floating point; the byte contract is
``sample = byte / 255`` on decode and round-half-up on encode.  The PNG codec
is self-contained (zlib only) so that encoding is deterministic and decode
errors can report exact byte offsets; it reads 8-bit grayscale, RGB and RGBA
(alpha dropped) and writes 8-bit grayscale or RGB with filter type 0.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ArgumentError, DecodeError

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"

# BT.601 full-range RGB <-> YUV (chroma centered on 0, range [-0.5, 0.5]).
_RGB_TO_YUV = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
_YUV_TO_RGB = np.linalg.inv(_RGB_TO_YUV)


class Image:
    """H x W x C floating-point image, C in {1, 3}, samples nominally [0, 1]."""

    __slots__ = ("arr",)

    def __init__(self, arr: np.ndarray):
        arr = np.asarray(arr)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ArgumentError(f"image must be HxWx1 or HxWx3, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ArgumentError(f"image dimensions must be positive, got {arr.shape[:2]}")
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if not np.all(np.isfinite(arr)):
            raise ArgumentError("image samples must be finite")
        self.arr = arr

    @property
    def height(self) -> int:
        return self.arr.shape[0]

    @property
    def width(self) -> int:
        return self.arr.shape[1]

    @property
    def channels(self) -> int:
        return self.arr.shape[2]

    def copy(self) -> "Image":
        return Image(self.arr.copy())

    @staticmethod
    def load(path: str | Path) -> "Image":
        return decode_image(Path(path).read_bytes())

    def save(self, path: str | Path, text: dict[str, str] | None = None) -> None:
        Path(path).write_bytes(encode_image(self, text=text))


class Mask:
    """H x W binary map; 1 marks a missing/defective pixel."""

    __slots__ = ("bits",)

    def __init__(self, bits: np.ndarray):
        bits = np.asarray(bits)
        if bits.ndim != 2:
            raise ArgumentError(f"mask must be 2-D, got shape {bits.shape}")
        bits = bits.astype(np.uint8)
        if not np.isin(bits, (0, 1)).all():
            raise ArgumentError("mask elements must be 0 or 1")
        self.bits = bits

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def complement(self) -> "Mask":
        return Mask(1 - self.bits)

    @staticmethod
    def from_png_bytes(data: bytes) -> "Mask":
        img = decode_image(data)
        gray = img.arr.mean(axis=2)
        return Mask((gray > 0.5).astype(np.uint8))

    def to_png_bytes(self, text: dict[str, str] | None = None) -> bytes:
        return encode_image(Image(self.bits.astype(np.float32)), text=text)

    @staticmethod
    def load(path: str | Path) -> "Mask":
        return Mask.from_png_bytes(Path(path).read_bytes())

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_png_bytes())


@dataclass(frozen=True)
class TileGrid:
    """Geometry of a non-overlapping tiling after reflect padding."""

    source_height: int
    source_width: int
    tile: int
    padded_height: int
    padded_width: int
    tiles_y: int
    tiles_x: int

    @property
    def count(self) -> int:
        return self.tiles_y * self.tiles_x

    def tile_name(self, stem: str, index: int) -> str:
        row, col = divmod(index, self.tiles_x)
        return f"{stem}_r{row}_c{col}.png"


# ---------------------------------------------------------------------------
# PNG codec
# ---------------------------------------------------------------------------


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def _unfilter(raw: bytes, height: int, width: int, channels: int, idat_offset: int) -> np.ndarray:
    stride = width * channels
    if len(raw) != height * (stride + 1):
        raise DecodeError(
            f"decompressed IDAT length {len(raw)} != expected {height * (stride + 1)}",
            idat_offset,
        )
    out = np.zeros((height, stride), dtype=np.uint8)
    data = np.frombuffer(raw, dtype=np.uint8)
    for y in range(height):
        row_start = y * (stride + 1)
        ftype = int(data[row_start])
        row = data[row_start + 1 : row_start + 1 + stride].astype(np.int32)
        up = out[y - 1].astype(np.int32) if y > 0 else np.zeros(stride, dtype=np.int32)
        if ftype == 0:
            rec = row
        elif ftype == 1:  # Sub: prefix sum within each channel lane
            rec = row.reshape(width, channels).cumsum(axis=0).reshape(stride)
        elif ftype == 2:  # Up
            rec = row + up
        elif ftype == 3:  # Average: sequential in x, bytes wrap before reuse
            rec = np.zeros(stride, dtype=np.int32)
            for x in range(stride):
                left = rec[x - channels] if x >= channels else 0
                rec[x] = (row[x] + ((left + up[x]) >> 1)) & 0xFF
        elif ftype == 4:  # Paeth: sequential in x, bytes wrap before reuse
            rec = np.zeros(stride, dtype=np.int32)
            for x in range(stride):
                left = int(rec[x - channels]) if x >= channels else 0
                ul = int(up[x - channels]) if x >= channels else 0
                rec[x] = (row[x] + _paeth(left, int(up[x]), ul)) & 0xFF
        else:
            raise DecodeError(f"unknown PNG filter type {ftype}", idat_offset)
        out[y] = (rec & 0xFF).astype(np.uint8)
    return out.reshape(height, width, channels)


def decode_png(data: bytes) -> tuple[np.ndarray, dict[str, str]]:
    """Decode PNG bytes into a uint8 array (H, W, C) plus tEXt metadata."""
    if len(data) < 8 or data[:8] != PNG_SIGNATURE:
        raise DecodeError("not a PNG stream (bad signature)", 0)
    pos = 8
    header = None
    idat = bytearray()
    idat_offset = 0
    text: dict[str, str] = {}
    seen_end = False
    while pos < len(data):
        if pos + 8 > len(data):
            raise DecodeError("truncated chunk header", pos)
        length, ctype = struct.unpack(">I4s", data[pos : pos + 8])
        body_start = pos + 8
        crc_start = body_start + length
        if crc_start + 4 > len(data):
            raise DecodeError(f"truncated {ctype.decode('latin1')} chunk", pos)
        body = data[body_start:crc_start]
        (crc,) = struct.unpack(">I", data[crc_start : crc_start + 4])
        if zlib.crc32(ctype + body) & 0xFFFFFFFF != crc:
            raise DecodeError(f"CRC mismatch in {ctype.decode('latin1')} chunk", pos)
        if ctype == b"IHDR":
            if length != 13:
                raise DecodeError("IHDR chunk must be 13 bytes", pos)
            header = struct.unpack(">IIBBBBB", body)
        elif ctype == b"IDAT":
            if not idat:
                idat_offset = pos
            idat.extend(body)
        elif ctype == b"tEXt":
            if b"\x00" in body:
                k, v = body.split(b"\x00", 1)
                text[k.decode("latin1")] = v.decode("latin1")
        elif ctype == b"IEND":
            seen_end = True
            break
        pos = crc_start + 4
    if header is None:
        raise DecodeError("missing IHDR chunk", 8)
    if not seen_end:
        raise DecodeError("missing IEND chunk", len(data))
    width, height, depth, color, comp, filt, interlace = header
    if width < 1 or height < 1:
        raise DecodeError(f"invalid dimensions {width}x{height}", 8)
    if depth != 8:
        raise DecodeError(f"unsupported bit depth {depth} (only 8)", 8)
    if color not in (0, 2, 6):
        raise DecodeError(f"unsupported color type {color} (gray/RGB/RGBA only)", 8)
    if comp != 0 or filt != 0:
        raise DecodeError("unsupported compression/filter method", 8)
    if interlace != 0:
        raise DecodeError("interlaced PNG not supported", 8)
    if not idat:
        raise DecodeError("missing IDAT data", len(data))
    channels = {0: 1, 2: 3, 6: 4}[color]
    try:
        raw = zlib.decompress(bytes(idat))
    except zlib.error as exc:
        raise DecodeError(f"zlib decompression failed: {exc}", idat_offset) from exc
    pixels = _unfilter(raw, height, width, channels, idat_offset)
    if color == 6:
        pixels = pixels[:, :, :3]
    return pixels, text


def _chunk(ctype: bytes, body: bytes) -> bytes:
    return (
        struct.pack(">I", len(body))
        + ctype
        + body
        + struct.pack(">I", zlib.crc32(ctype + body) & 0xFFFFFFFF)
    )


def encode_png(pixels: np.ndarray, text: dict[str, str] | None = None) -> bytes:
    """Encode a uint8 array (H, W) or (H, W, C in {1,3}) as PNG bytes."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    height, width, channels = pixels.shape
    if height < 1 or width < 1:
        raise ArgumentError("cannot encode zero-dimension image")
    if channels not in (1, 3):
        raise ArgumentError(f"can only encode 1 or 3 channels, got {channels}")
    color = 0 if channels == 1 else 2
    ihdr = struct.pack(">IIBBBBB", width, height, 8, color, 0, 0, 0)
    rows = np.zeros((height, width * channels + 1), dtype=np.uint8)
    rows[:, 1:] = pixels.reshape(height, width * channels)
    out = [PNG_SIGNATURE, _chunk(b"IHDR", ihdr)]
    for key, value in (text or {}).items():
        out.append(_chunk(b"tEXt", key.encode("latin1") + b"\x00" + value.encode("latin1")))
    out.append(_chunk(b"IDAT", zlib.compress(rows.tobytes(), 6)))
    out.append(_chunk(b"IEND", b""))
    return b"".join(out)


def decode_image(data: bytes) -> Image:
    """PNG bytes -> Image with samples byte/255."""
    pixels, _ = decode_png(data)
    return Image(pixels.astype(np.float32) / 255.0)


def encode_image(img: Image, text: dict[str, str] | None = None) -> bytes:
    """Image -> PNG bytes; samples clamped to [0,1], rounded half-up to bytes."""
    bytes_arr = quantize(img.arr)
    return encode_png(bytes_arr, text=text)


def quantize(arr: np.ndarray) -> np.ndarray:
    """Clamp to [0,1] and round half-up to the 8-bit grid."""
    return np.floor(np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


# ---------------------------------------------------------------------------
# Degradation and color
# ---------------------------------------------------------------------------


def scale_brightness(img: Image, factor: float) -> Image:
    """Multiply every sample by ``factor`` (simulated low-light capture)."""
    if not factor > 0:
        raise ArgumentError(f"brightness factor must be > 0, got {factor}")
    return Image(np.clip(img.arr * np.float64(factor), 0.0, 1.0).astype(img.arr.dtype))


def rgb_to_yuv(img: Image) -> Image:
    if img.channels != 3:
        raise ArgumentError(f"rgb_to_yuv needs 3 channels, got {img.channels}")
    out = img.arr.astype(np.float64) @ _RGB_TO_YUV.T
    return Image(out.astype(img.arr.dtype))


def yuv_to_rgb(img: Image) -> Image:
    if img.channels != 3:
        raise ArgumentError(f"yuv_to_rgb needs 3 channels, got {img.channels}")
    out = img.arr.astype(np.float64) @ _YUV_TO_RGB.T
    return Image(out.astype(img.arr.dtype))


# ---------------------------------------------------------------------------
# Tiling
# ---------------------------------------------------------------------------


def _reflect_indices(n: int, target: int) -> np.ndarray:
    """Index map of length ``target`` reflecting [0, n) without edge repeats.

    Handles padding wider than the source (mirror tiling); n == 1 maps to 0.
    """
    idx = np.arange(target)
    if n == 1:
        return np.zeros(target, dtype=np.int64)
    period = 2 * n - 2
    idx = idx % period
    return np.where(idx < n, idx, period - idx)


def pad_reflect(arr: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Reflect-pad a (H, W, ...) array on the bottom/right to target dims."""
    rows = _reflect_indices(arr.shape[0], target_h)
    cols = _reflect_indices(arr.shape[1], target_w)
    return arr[rows][:, cols]


def plan_tiles(height: int, width: int, tile: int) -> TileGrid:
    if tile < 1:
        raise ArgumentError(f"tile size must be >= 1, got {tile}")
    padded_h = -(-height // tile) * tile
    padded_w = -(-width // tile) * tile
    return TileGrid(
        source_height=height,
        source_width=width,
        tile=tile,
        padded_height=padded_h,
        padded_width=padded_w,
        tiles_y=padded_h // tile,
        tiles_x=padded_w // tile,
    )


def split_array(arr: np.ndarray, tile: int) -> tuple[TileGrid, list[np.ndarray]]:
    grid = plan_tiles(arr.shape[0], arr.shape[1], tile)
    padded = pad_reflect(arr, grid.padded_height, grid.padded_width)
    tiles = [
        padded[ty * tile : (ty + 1) * tile, tx * tile : (tx + 1) * tile].copy()
        for ty in range(grid.tiles_y)
        for tx in range(grid.tiles_x)
    ]
    return grid, tiles


def stitch_array(grid: TileGrid, tiles: list[np.ndarray]) -> np.ndarray:
    if len(tiles) != grid.count:
        raise ArgumentError(f"expected {grid.count} tiles, got {len(tiles)}")
    for i, t in enumerate(tiles):
        if t.shape[:2] != (grid.tile, grid.tile):
            raise ArgumentError(
                f"tile {i} has shape {t.shape[:2]}, expected {(grid.tile, grid.tile)}"
            )
    rows = [
        np.concatenate(tiles[ty * grid.tiles_x : (ty + 1) * grid.tiles_x], axis=1)
        for ty in range(grid.tiles_y)
    ]
    full = np.concatenate(rows, axis=0)
    return full[: grid.source_height, : grid.source_width]


def split_tiles(img: Image, tile: int = 256) -> tuple[TileGrid, list[Image]]:
    """Reflect-pad to multiples of ``tile`` and cut row-major tiles."""
    grid, tiles = split_array(img.arr, tile)
    return grid, [Image(t) for t in tiles]


def stitch_tiles(grid: TileGrid, tiles: list[Image]) -> Image:
    """Rejoin tiles row-major and crop the padding; inverse of split_tiles."""
    return Image(stitch_array(grid, [t.arr for t in tiles]))


def split_mask(mask: Mask, tile: int = 256) -> tuple[TileGrid, list[Mask]]:
    grid, tiles = split_array(mask.bits, tile)
    return grid, [Mask(t) for t in tiles]


def stitch_mask(grid: TileGrid, tiles: list[Mask]) -> Mask:
    return Mask(stitch_array(grid, [t.bits for t in tiles]))
