"""Command-line batch interface: dataset preparation, training, restoration,
flaw finding, mask synthesis, evaluation, benchmarking and the web service."""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from .errors import MuralError
from .flawfind import PRESETS, FlawParams, detect_flaws
from .imageio import Image, Mask, split_array, stitch_array
from .maskgen import FAMILIES, MaskSpec, coverage_of, generate_mask
from .metrics import EvalReport, EvalRow, mask_bucket, perceptual_distance, psnr, ssim
from .pipeline import STAGE_ORDER, enhance_image, restore_image
from .trainer import (
    BRIGHTNESS_FACTORS,
    ModelBundle,
    TrainingConfig,
    make_synthetic_dataset,
    parse_config,
    train,
)

DEFAULT_FACTORS = ",".join(str(f) for f in BRIGHTNESS_FACTORS)


@click.group()
def main():
    """Restoration toolkit for low-light, defected mural photographs."""


def _load_bundle(checkpoint: str) -> ModelBundle:
    return ModelBundle.load(checkpoint)


def _factor_dir(factor: float) -> str:
    return f"dark_{int(round(factor * 100)):02d}"


@main.command()
@click.option("--input", "input_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--factors", default=DEFAULT_FACTORS, show_default=True, help="brightness factors")
@click.option("--tile", default=256, show_default=True)
def prepare(input_dir, out_dir, factors, tile):
    """Darken and tile a directory of ground-truth PNGs; write a manifest."""
    from .imageio import scale_brightness

    factor_list = [float(f) for f in factors.split(",") if f.strip()]
    src_files = sorted(Path(input_dir).glob("*.png"))
    if not src_files:
        raise click.ClickException(f"no PNG files in {input_dir}")
    out = Path(out_dir)
    (out / "gt").mkdir(parents=True, exist_ok=True)
    for factor in factor_list:
        (out / _factor_dir(factor)).mkdir(parents=True, exist_ok=True)
    manifest = []
    for path in src_files:
        img = Image.load(path)
        grid, tiles = split_array(img.arr, tile)
        for i, t in enumerate(tiles):
            name = grid.tile_name(path.stem, i)
            gt_path = out / "gt" / name
            Image(t).save(gt_path)
            for factor in factor_list:
                dark_path = out / _factor_dir(factor) / name
                scale_brightness(Image(t), factor).save(dark_path)
                manifest.append(
                    {"gt": str(gt_path), "dark": str(dark_path), "factor": factor}
                )
    manifest_path = out / "manifest.jsonl"
    with open(manifest_path, "w") as fh:
        for row in manifest:
            fh.write(json.dumps(row) + "\n")
    click.echo(f"wrote {len(manifest)} darkened tiles; manifest at {manifest_path}")


@main.command(name="train")
@click.option("--data", "manifest", type=click.Path(exists=True, dir_okay=False), help="manifest.jsonl from `prepare`")
@click.option("--synthetic", type=int, help="train on N synthetic tiles instead of a manifest")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_ckpt", required=True, type=click.Path(dir_okay=False))
@click.option("--log", "log_path", type=click.Path(dir_okay=False))
@click.option("--epochs", type=int, help="override total epoch count")
@click.option("--max-steps", type=int, help="stop after this many optimizer steps")
@click.option("--mask-coverage", default=0.275, show_default=True)
@click.option("--seed", type=int)
def train_cmd(manifest, synthetic, config_path, out_ckpt, log_path, epochs, max_steps, mask_coverage, seed):
    """Run the alternating two-phase training schedule."""
    cfg = parse_config(Path(config_path).read_text()) if config_path else TrainingConfig()
    if seed is not None:
        cfg.seed = seed
    if (manifest is None) == (synthetic is None):
        raise click.ClickException("provide exactly one of --data or --synthetic")
    samples = []
    if synthetic is not None:
        dataset = make_synthetic_dataset(synthetic, seed=cfg.seed, coverage=mask_coverage)
        for s in dataset:
            for factor in BRIGHTNESS_FACTORS:
                samples.append((s.darkened[factor].arr, s.gt.arr, s.mask.bits))
    else:
        rows = [json.loads(l) for l in Path(manifest).read_text().splitlines() if l.strip()]
        if not rows:
            raise click.ClickException("manifest is empty")
        rng = np.random.default_rng(cfg.seed)
        for i, row in enumerate(rows):
            gt = Image.load(row["gt"])
            dark = Image.load(row["dark"])
            spec = MaskSpec(
                family=FAMILIES[i % len(FAMILIES)],
                coverage_target=mask_coverage,
                size=gt.height,
                seed=int(rng.integers(0, 2**31)),
            )
            samples.append((dark.arr, gt.arr, generate_mask(spec).bits))
    bundle, result = train(
        cfg, samples, epochs=epochs, max_steps=max_steps, log_path=log_path
    )
    bundle.save(out_ckpt)
    click.echo(f"trained {result.steps} steps; checkpoint at {out_ckpt}")


def _resolve_mask_options(mask_path, auto_mask, lambda_g, lambda_p, closing_radius, preset):
    if preset:
        lambda_g, lambda_p = PRESETS[preset]
    params = FlawParams(lambda_g=lambda_g, lambda_p=lambda_p, closing_radius=closing_radius)
    if mask_path and auto_mask:
        raise click.ClickException("--mask and --auto-mask are mutually exclusive")
    return params


@main.command()
@click.argument("inputs", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--mask", "mask_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--auto-mask", is_flag=True, help="detect defect regions automatically")
@click.option("--lambda-g", default=3.0, show_default=True)
@click.option("--lambda-p", default=2.0, show_default=True)
@click.option("--closing-radius", default=1, show_default=True)
@click.option("--preset", type=click.Choice(sorted(PRESETS)), help="alternate threshold pair")
@click.option("--emit-stages", is_flag=True, help="also write per-stage images")
@click.option("--tile", default=256, show_default=True)
def restore(inputs, checkpoint, out_dir, mask_path, auto_mask, lambda_g, lambda_p, closing_radius, preset, emit_stages, tile):
    """Restore murals: enhance, then inpaint masked regions tile by tile."""
    params = _resolve_mask_options(mask_path, auto_mask, lambda_g, lambda_p, closing_radius, preset)
    bundle = _load_bundle(checkpoint)
    mask = Mask.load(mask_path) if mask_path else None
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    failures = []
    for path in inputs:
        stem = Path(path).stem
        try:
            img = Image.load(path)
            result = restore_image(
                bundle,
                img,
                mask=mask,
                auto_params=params if auto_mask else None,
                tile=tile,
            )
        except MuralError as exc:
            failures.append((path, str(exc)))
            continue
        result.final.save(out / f"{stem}.final.png")
        if emit_stages:
            for name in STAGE_ORDER[:-1]:
                result.stages[name].save(out / f"{stem}.{name}.png")
            if result.mask is not None:
                (out / f"{stem}.mask.png").write_bytes(result.mask.to_png_bytes())
    for path, msg in failures:
        click.echo(f"FAILED {path}: {msg}", err=True)
    if failures:
        sys.exit(1)


@main.command()
@click.argument("inputs", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--tile", default=256, show_default=True)
def enhance(inputs, checkpoint, out_dir, tile):
    """Brightness enhancement only (no inpainting)."""
    bundle = _load_bundle(checkpoint)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    failures = []
    for path in inputs:
        try:
            img = Image.load(path)
            enhanced = enhance_image(bundle, img, tile=tile)
        except MuralError as exc:
            failures.append((path, str(exc)))
            continue
        enhanced.save(out / f"{Path(path).stem}.enhanced.png")
    for path, msg in failures:
        click.echo(f"FAILED {path}: {msg}", err=True)
    if failures:
        sys.exit(1)


@main.command(name="find-flaws")
@click.argument("inputs", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--lambda-g", default=3.0, show_default=True)
@click.option("--lambda-p", default=2.0, show_default=True)
@click.option("--closing-radius", default=1, show_default=True)
@click.option("--preset", type=click.Choice(sorted(PRESETS)))
@click.option("--tile", default=256, show_default=True, help="per-tile statistics window")
def find_flaws(inputs, out_dir, lambda_g, lambda_p, closing_radius, preset, tile):
    """Detect defective regions and write binary masks (255 = defect)."""
    if preset:
        lambda_g, lambda_p = PRESETS[preset]
    params = FlawParams(lambda_g=lambda_g, lambda_p=lambda_p, closing_radius=closing_radius)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for path in inputs:
        img = Image.load(path)
        grid, tiles = split_array(img.arr, tile)
        mask_tiles = [detect_flaws(Image(t), params).bits for t in tiles]
        mask = Mask(stitch_array(grid, mask_tiles))
        mask.save(out / f"{Path(path).stem}.mask.png")


@main.command(name="gen-mask")
@click.option("--family", type=click.Choice(FAMILIES), required=True)
@click.option("--coverage", type=float, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--count", type=int, default=1, show_default=True)
@click.option("--size", type=int, default=256, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def gen_mask(family, coverage, seed, count, size, out_dir):
    """Generate damage-simulation masks as binary PNGs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(count):
        spec = MaskSpec(family=family, coverage_target=coverage, size=size, seed=seed + i)
        mask = generate_mask(spec)
        mask.save(out / f"{family.lower()}_{coverage:.2f}_{seed + i}.png")
        click.echo(f"{family} seed={seed + i} coverage={coverage_of(mask):.4f}")


@main.command()
@click.option("--restored", "restored_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--gt", "gt_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--masks", "mask_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--brightness", type=float, default=0.0, show_default=True)
@click.option("--out-csv", required=True, type=click.Path(dir_okay=False))
@click.option("--out-json", required=True, type=click.Path(dir_okay=False))
@click.option("--fx-base", default=4, show_default=True)
def evaluate(restored_dir, gt_dir, mask_dir, brightness, out_csv, out_json, fx_base):
    """Score restored images against ground truth (CSV + aggregate JSON)."""
    from .losses import FeatureExtractor

    fx = FeatureExtractor(base=fx_base)
    report = EvalReport()
    restored_files = sorted(Path(restored_dir).glob("*.png"))
    if not restored_files:
        raise click.ClickException(f"no PNG files in {restored_dir}")
    for path in restored_files:
        gt_path = Path(gt_dir) / path.name
        if not gt_path.exists():
            click.echo(f"SKIP {path.name}: no ground truth", err=True)
            continue
        restored = Image.load(path)
        gt = Image.load(gt_path)
        bucket = "n/a"
        if mask_dir:
            mask_path = Path(mask_dir) / path.name
            if mask_path.exists():
                bucket = mask_bucket(coverage_of(Mask.load(mask_path)))
        report.add(
            EvalRow(
                image_id=path.stem,
                mask_bucket=bucket,
                brightness=brightness,
                psnr=psnr(restored, gt),
                ssim=ssim(restored, gt),
                perc_dist=perceptual_distance(fx, restored, gt),
            )
        )
    Path(out_csv).write_text(report.to_csv())
    Path(out_json).write_text(json.dumps(report.aggregate(), indent=2) + "\n")
    click.echo(f"scored {len(report.rows)} images")


@main.command()
@click.option("--data", "manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_json", required=True, type=click.Path(dir_okay=False))
@click.option("--limit", type=int, default=0, help="cap tiles per bucket (0 = all)")
@click.option("--coverages", default="0.12,0.27,0.42", show_default=True, help="one per mask band")
def bench(manifest, checkpoint, out_json, limit, coverages):
    """Per-tile wall-clock timing per brightness level and mask band."""
    bundle = _load_bundle(checkpoint)
    rows = [json.loads(l) for l in Path(manifest).read_text().splitlines() if l.strip()]
    cov_list = [float(c) for c in coverages.split(",")]
    buckets: dict[tuple[float, str], list[float]] = {}
    for i, row in enumerate(rows):
        if limit and i >= limit * len(cov_list):
            break
        dark = Image.load(row["dark"])
        for j, cov in enumerate(cov_list):
            spec = MaskSpec(
                family=FAMILIES[(i + j) % len(FAMILIES)],
                coverage_target=cov,
                size=dark.height,
                seed=i * 17 + j,
            )
            mask = generate_mask(spec)
            t0 = time.perf_counter()
            restore_image(bundle, dark, mask=mask)
            elapsed = time.perf_counter() - t0
            buckets.setdefault((row["factor"], mask_bucket(cov)), []).append(elapsed)
    out = {}
    for (factor, band), times in sorted(buckets.items()):
        arr = np.array(times)
        out[f"{int(round(factor * 100))}%/{band}"] = {
            "mean": float(arr.mean()),
            "p50": float(np.quantile(arr, 0.5)),
            "p95": float(np.quantile(arr, 0.95)),
            "count": len(times),
        }
    empty = [k for k, v in out.items() if v["count"] == 0]
    for key in empty:
        click.echo(f"WARNING: empty bucket {key}", err=True)
        del out[key]
    Path(out_json).write_text(json.dumps(out, indent=2) + "\n")
    click.echo(f"benchmarked {sum(v['count'] for v in out.values())} restorations")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@click.option("--store", "store_dir", required=True, type=click.Path(file_okay=False))
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--workers", default=1, show_default=True, help="restoration worker threads")
def serve(host, port, store_dir, checkpoint, workers):
    """Run the interactive restoration web service."""
    import uvicorn

    from .service.app import create_app

    app = create_app(store_dir=store_dir, checkpoint_path=checkpoint, workers=workers)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
