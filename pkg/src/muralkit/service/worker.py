"""FIFO restoration worker: runs jobs on a bounded thread pool.

Model weights are loaded once and shared read-only; inference is pure per
tile so concurrent jobs cannot interleave state.  Every artifact embeds its
job id in the PNG text metadata.
"""

from __future__ import annotations

import threading
import traceback
from concurrent.futures import Future, ThreadPoolExecutor

from ..errors import MuralError
from ..flawfind import FlawParams
from ..imageio import encode_image
from ..pipeline import STAGE_ORDER, restore_image
from ..trainer import ModelBundle
from .store import DiskStore, JobRecord

_PROGRESS = {"enhanced": 0.2, "coarse": 0.4, "local": 0.6, "global": 0.8, "final": 1.0}


class JobRunner:
    def __init__(self, store: DiskStore, bundle: ModelBundle, workers: int = 1):
        self.store = store
        self.bundle = bundle
        self.pool = ThreadPoolExecutor(max_workers=max(workers, 1))
        self._lock = threading.Lock()

    def submit(self, record: JobRecord) -> Future:
        self.store.create_job(record)
        return self.pool.submit(self._run, record.id)

    def _update(self, record: JobRecord) -> None:
        with self._lock:
            self.store.write_job(record)

    def _run(self, job_id: str) -> None:
        record = self.store.read_job(job_id)
        record.state = "RUNNING"
        self._update(record)
        try:
            image = self.store.image(record.image_id)
            mask = self.store.mask(record.mask_id) if record.mask_id else None
            auto = FlawParams(**record.auto) if record.auto else None
            result = restore_image(self.bundle, image, mask=mask, auto_params=auto)
            text = {"job": job_id}
            for stage in STAGE_ORDER:
                data = encode_image(result.stages[stage], text=text)
                record.stages[stage] = self.store.write_stage(job_id, stage, data)
                record.progress = _PROGRESS[stage]
                self._update(record)
            if result.mask is not None:
                mask_png = result.mask.to_png_bytes(text=text)
                record.stages["mask"] = self.store.write_stage(job_id, "mask", mask_png)
            record.state = "DONE"
            record.progress = 1.0
            self._update(record)
        except (MuralError, Exception) as exc:  # keep the job record authoritative
            record.state = "FAILED"
            record.error = f"{type(exc).__name__}: {exc}"
            record.progress = 1.0
            self._update(record)
            if not isinstance(exc, MuralError):
                traceback.print_exc()

    def shutdown(self) -> None:
        self.pool.shutdown(wait=True)
