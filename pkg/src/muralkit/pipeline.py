"""End-to-end restoration: tiling, enhancement, staged inpainting, stitching.

Large inputs are cut into 256-pixel tiles (reflect padding), every tile runs
through enhancement and the three inpainting stages with mask merging after
each stage, and the per-stage results are stitched back and cropped to the
source size.  Auto-masking computes flaw statistics per tile, after
enhancement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import no_grad
from .errors import ArgumentError
from .flawfind import FlawParams, detect_flaws
from .imageio import Image, Mask, split_array, stitch_array
from .inpaint import coarse_inpaint, global_refine, local_refine, merge_with_mask
from .trainer import ModelBundle

STAGE_ORDER = ("enhanced", "coarse", "local", "global", "final")


@dataclass
class RestoreResult:
    stages: dict[str, Image]
    mask: Mask | None

    @property
    def final(self) -> Image:
        return self.stages["final"]


def _enhance_tile(bundle: ModelBundle, tile: np.ndarray) -> np.ndarray:
    from .enhance import run_enhancement

    with no_grad():
        enhanced, _ = run_enhancement(tile[None], bundle.h_net, bundle.k_net, bundle.cfg.hyper())
    return enhanced[0].astype(np.float32)


def _inpaint_tile(
    bundle: ModelBundle, enhanced: np.ndarray, mask_bits: np.ndarray
) -> dict[str, np.ndarray]:
    m = mask_bits.astype(np.float32)
    with no_grad():
        i_out_c = coarse_inpaint(bundle.netc, enhanced[None], m).data
        i_mer_c = merge_with_mask(enhanced[None], i_out_c, m)
        i_out_l = local_refine(bundle.netl, i_mer_c).data
        i_mer_l = merge_with_mask(enhanced[None], i_out_l, m)
        i_out_g = global_refine(bundle.netg, i_mer_l).data
        i_mer_g = merge_with_mask(enhanced[None], i_out_g, m)
    return {
        "coarse": i_mer_c[0].astype(np.float32),
        "local": i_mer_l[0].astype(np.float32),
        "global": i_mer_g[0].astype(np.float32),
        "final": i_mer_g[0].astype(np.float32),
    }


def restore_image(
    bundle: ModelBundle,
    img: Image,
    mask: Mask | None = None,
    auto_params: FlawParams | None = None,
    tile: int = 256,
) -> RestoreResult:
    """Full pipeline over one image; exactly one masking mode may be active.

    With neither ``mask`` nor ``auto_params`` the pipeline is enhance-only
    and every stage equals the enhanced image.
    """
    if mask is not None and auto_params is not None:
        raise ArgumentError("choose either an explicit mask or auto-masking, not both")
    if mask is not None and (mask.height, mask.width) != (img.height, img.width):
        raise ArgumentError(
            f"mask dims {(mask.height, mask.width)} do not match image {(img.height, img.width)}"
        )
    grid, tiles = split_array(img.arr, tile)
    mask_tiles = None
    if mask is not None:
        _, mask_tiles = split_array(mask.bits, tile)

    stage_tiles: dict[str, list[np.ndarray]] = {name: [] for name in STAGE_ORDER}
    out_mask_tiles: list[np.ndarray] = []
    for i, t in enumerate(tiles):
        enhanced = _enhance_tile(bundle, t)
        if mask_tiles is not None:
            bits = mask_tiles[i]
        elif auto_params is not None:
            bits = detect_flaws(Image(enhanced), auto_params).bits
        else:
            bits = None
        stage_tiles["enhanced"].append(enhanced)
        if bits is None:
            for name in ("coarse", "local", "global", "final"):
                stage_tiles[name].append(enhanced)
            out_mask_tiles.append(np.zeros(t.shape[:2], np.uint8))
        else:
            stages = _inpaint_tile(bundle, enhanced, bits)
            for name, arr in stages.items():
                stage_tiles[name].append(arr)
            out_mask_tiles.append(bits)

    stages = {
        name: Image(stitch_array(grid, stage_tiles[name])) for name in STAGE_ORDER
    }
    result_mask = None
    if mask is not None or auto_params is not None:
        result_mask = Mask(stitch_array(grid, out_mask_tiles))
    return RestoreResult(stages=stages, mask=result_mask)


def enhance_image(bundle: ModelBundle, img: Image, tile: int = 256) -> Image:
    grid, tiles = split_array(img.arr, tile)
    return Image(stitch_array(grid, [_enhance_tile(bundle, t) for t in tiles]))
