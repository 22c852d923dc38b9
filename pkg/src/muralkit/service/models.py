"""Request/response schemas for the restoration service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class ImageIdResponse(BaseModel):
    image_id: str


class MaskIdResponse(BaseModel):
    mask_id: str


class JobIdResponse(BaseModel):
    job_id: str


class BrightnessRequest(BaseModel):
    image_id: str
    factor: float = Field(gt=0.0, le=1.0)


class RandomMaskRequest(BaseModel):
    image_id: str | None = None
    size: int = 256
    family: str = "DUSK"
    coverage: float = Field(default=0.2, ge=0.05, le=0.50)
    seed: int = 0


class AutoMaskRequest(BaseModel):
    image_id: str
    lambda_g: float = Field(default=3.0, gt=0)
    lambda_p: float = Field(default=2.0, gt=0)


class AutoMaskParams(BaseModel):
    lambda_g: float = Field(default=3.0, gt=0)
    lambda_p: float = Field(default=2.0, gt=0)


class RestoreRequest(BaseModel):
    image_id: str
    mask_id: str | None = None
    auto: AutoMaskParams | None = None


class JobView(BaseModel):
    id: str
    state: str
    progress: float
    stages: dict[str, str]
    error: str | None = None


class ErrorBody(BaseModel):
    code: str
    message: str
