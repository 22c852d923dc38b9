"""Flat-directory persistence for uploaded images, masks and job artifacts.

Layout: ``images/<id>.png``, ``masks/<id>.png``, ``jobs/<id>/job.json`` plus
``jobs/<id>/<stage>.png``.  Job records are written atomically (tmp +
rename) so a restarted server sees consistent state.
"""

from __future__ import annotations

import json
import os
import uuid
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..errors import ArgumentError
from ..imageio import Image, Mask, decode_image


class NotFound(Exception):
    def __init__(self, kind: str, item_id: str):
        super().__init__(f"{kind} {item_id!r} not found")
        self.kind = kind
        self.item_id = item_id


JOB_STATES = ("QUEUED", "RUNNING", "DONE", "FAILED")


@dataclass
class JobRecord:
    id: str
    state: str = "QUEUED"
    progress: float = 0.0
    image_id: str = ""
    mask_id: str | None = None
    auto: dict | None = None
    stages: dict[str, str] = field(default_factory=dict)  # stage -> file name
    error: str | None = None

    def as_dict(self) -> dict:
        return asdict(self)


class DiskStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        for sub in ("images", "masks", "jobs"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)

    @staticmethod
    def new_id() -> str:
        return uuid.uuid4().hex

    # -- images ---------------------------------------------------------

    def put_image(self, data: bytes) -> str:
        img = decode_image(data)  # validates; raises DecodeError
        if img.channels != 3:
            raise ArgumentError("uploaded images must be RGB PNG")
        image_id = self.new_id()
        (self.root / "images" / f"{image_id}.png").write_bytes(data)
        return image_id

    def image_bytes(self, image_id: str) -> bytes:
        path = self.root / "images" / f"{image_id}.png"
        if not path.exists():
            raise NotFound("image", image_id)
        return path.read_bytes()

    def image(self, image_id: str) -> Image:
        return decode_image(self.image_bytes(image_id))

    # -- masks ----------------------------------------------------------

    def put_mask(self, data: bytes) -> str:
        Mask.from_png_bytes(data)  # validates
        mask_id = self.new_id()
        (self.root / "masks" / f"{mask_id}.png").write_bytes(data)
        return mask_id

    def put_mask_object(self, mask: Mask) -> str:
        return self.put_mask(mask.to_png_bytes())

    def mask_bytes(self, mask_id: str) -> bytes:
        path = self.root / "masks" / f"{mask_id}.png"
        if not path.exists():
            raise NotFound("mask", mask_id)
        return path.read_bytes()

    def mask(self, mask_id: str) -> Mask:
        return Mask.from_png_bytes(self.mask_bytes(mask_id))

    # -- jobs -------------------------------------------------------------

    def job_dir(self, job_id: str) -> Path:
        return self.root / "jobs" / job_id

    def create_job(self, record: JobRecord) -> None:
        self.job_dir(record.id).mkdir(parents=True, exist_ok=True)
        self.write_job(record)

    def write_job(self, record: JobRecord) -> None:
        path = self.job_dir(record.id) / "job.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(record.as_dict(), indent=2))
        os.replace(tmp, path)

    def read_job(self, job_id: str) -> JobRecord:
        path = self.job_dir(job_id) / "job.json"
        if not path.exists():
            raise NotFound("job", job_id)
        data = json.loads(path.read_text())
        return JobRecord(**data)

    def write_stage(self, job_id: str, stage: str, png_bytes: bytes) -> str:
        name = f"{stage}.png"
        (self.job_dir(job_id) / name).write_bytes(png_bytes)
        return name

    def stage_bytes(self, job_id: str, stage: str) -> bytes:
        record = self.read_job(job_id)
        if stage not in record.stages:
            raise NotFound("stage", f"{job_id}/{stage}")
        path = self.job_dir(job_id) / record.stages[stage]
        if not path.exists():
            raise NotFound("stage", f"{job_id}/{stage}")
        return path.read_bytes()
