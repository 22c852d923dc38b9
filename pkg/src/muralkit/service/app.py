"""HTTP backend for the interactive restoration workflow.

JSON-over-HTTP endpoints cover image upload, brightness simulation, random,
automatic and hand-drawn masks, asynchronous restoration jobs and per-stage
artifact retrieval.  Errors use a uniform {code, message} JSON body.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, File, Request, UploadFile
from fastapi.responses import JSONResponse, Response

from ..errors import ArgumentError, DecodeError, MuralError
from ..flawfind import FlawParams, detect_flaws
from ..imageio import Image, Mask, encode_image, scale_brightness, split_array, stitch_array
from ..maskgen import MaskSpec, generate_mask
from ..trainer import ModelBundle
from .models import (
    AutoMaskRequest,
    BrightnessRequest,
    ImageIdResponse,
    JobIdResponse,
    JobView,
    MaskIdResponse,
    RandomMaskRequest,
    RestoreRequest,
)
from .store import DiskStore, JobRecord, NotFound
from .worker import JobRunner

STAGE_NAMES = ("enhanced", "coarse", "local", "global", "final", "mask")


def create_app(
    store_dir: str | Path,
    checkpoint_path: str | Path | None = None,
    bundle: ModelBundle | None = None,
    workers: int = 1,
) -> FastAPI:
    if bundle is None:
        if checkpoint_path is None:
            raise ArgumentError("create_app needs a checkpoint path or a model bundle")
        bundle = ModelBundle.load(checkpoint_path)
    store = DiskStore(store_dir)
    runner = JobRunner(store, bundle, workers=workers)
    app = FastAPI(title="mural restoration service")
    app.state.store = store
    app.state.runner = runner

    @app.exception_handler(NotFound)
    async def not_found_handler(_req: Request, exc: NotFound):
        return JSONResponse(status_code=404, content={"code": "not_found", "message": str(exc)})

    @app.exception_handler(DecodeError)
    async def decode_handler(_req: Request, exc: DecodeError):
        return JSONResponse(status_code=422, content={"code": "bad_image", "message": str(exc)})

    @app.exception_handler(MuralError)
    async def mural_handler(_req: Request, exc: MuralError):
        return JSONResponse(status_code=422, content={"code": "invalid", "message": str(exc)})

    @app.post("/api/images", response_model=ImageIdResponse)
    async def upload_image(file: UploadFile = File(...)):
        data = await file.read()
        return ImageIdResponse(image_id=store.put_image(data))

    @app.get("/api/images/{image_id}")
    async def fetch_image(image_id: str):
        return Response(content=store.image_bytes(image_id), media_type="image/png")

    @app.post("/api/brightness", response_model=ImageIdResponse)
    async def simulate_brightness(req: BrightnessRequest):
        img = store.image(req.image_id)
        darkened = scale_brightness(img, req.factor)
        return ImageIdResponse(image_id=store.put_image(encode_image(darkened)))

    @app.post("/api/masks/random", response_model=MaskIdResponse)
    async def random_mask(req: RandomMaskRequest):
        size = req.size
        if req.image_id is not None:
            img = store.image(req.image_id)
            if img.height != img.width:
                raise ArgumentError(
                    "random masks for non-square images are not supported; upload a mask"
                )
            size = img.height
        spec = MaskSpec(family=req.family, coverage_target=req.coverage, size=size, seed=req.seed)
        return MaskIdResponse(mask_id=store.put_mask_object(generate_mask(spec)))

    @app.post("/api/masks/auto", response_model=MaskIdResponse)
    async def auto_mask(req: AutoMaskRequest):
        img = store.image(req.image_id)
        params = FlawParams(lambda_g=req.lambda_g, lambda_p=req.lambda_p)
        grid, tiles = split_array(img.arr, 256)
        mask_tiles = [detect_flaws(Image(t), params).bits for t in tiles]
        mask = Mask(stitch_array(grid, mask_tiles))
        return MaskIdResponse(mask_id=store.put_mask_object(mask))

    @app.put("/api/masks", response_model=MaskIdResponse)
    async def upload_mask(file: UploadFile = File(...)):
        data = await file.read()
        return MaskIdResponse(mask_id=store.put_mask(data))

    @app.get("/api/masks/{mask_id}")
    async def fetch_mask(mask_id: str):
        return Response(content=store.mask_bytes(mask_id), media_type="image/png")

    @app.post("/api/restore", response_model=JobIdResponse)
    async def submit_restore(req: RestoreRequest):
        if (req.mask_id is None) == (req.auto is None):
            raise ArgumentError("provide exactly one of mask_id or auto")
        img = store.image(req.image_id)  # 404 if unknown
        if req.mask_id is not None:
            mask = store.mask(req.mask_id)  # 404 if unknown
            if (mask.height, mask.width) != (img.height, img.width):
                raise ArgumentError(
                    f"mask dims {(mask.height, mask.width)} do not match "
                    f"image {(img.height, img.width)}"
                )
        record = JobRecord(
            id=DiskStore.new_id(),
            image_id=req.image_id,
            mask_id=req.mask_id,
            auto=req.auto.model_dump() if req.auto else None,
        )
        runner.submit(record)
        return JobIdResponse(job_id=record.id)

    @app.get("/api/jobs/{job_id}", response_model=JobView)
    async def job_status(job_id: str):
        record = store.read_job(job_id)
        return JobView(
            id=record.id,
            state=record.state,
            progress=record.progress,
            stages=record.stages,
            error=record.error,
        )

    @app.get("/api/jobs/{job_id}/stages/{stage}")
    async def job_stage(job_id: str, stage: str):
        if stage not in STAGE_NAMES:
            raise ArgumentError(f"unknown stage {stage!r}; choose from {STAGE_NAMES}")
        return Response(content=store.stage_bytes(job_id, stage), media_type="image/png")

    return app
