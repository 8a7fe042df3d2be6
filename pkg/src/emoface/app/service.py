"""HTTP inference service: asynchronous jobs over a loaded generator checkpoint."""

from __future__ import annotations

import copy
import queue
import threading
import time
import uuid
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Form, HTTPException, UploadFile
from fastapi.responses import FileResponse

from ..emotions import EMOTIONS, EmotionError, EmotionLabel
from ..inference import (MediaError, load_generator, load_media,
                         reconcile_durations, windowed_generate, write_video)
from .config import ServiceConfig

STATES = ("queued", "running", "done", "failed")


@dataclass
class InferenceJob:
    job_id: str
    emotion: str
    state: str = "queued"
    created_at: float = 0.0
    started_at: float | None = None
    finished_at: float | None = None
    error: str | None = None
    video_path: Path | None = None
    audio_path: Path | None = None
    result_path: Path | None = None
    fps: float | None = None
    sample_rate: int | None = None
    _finish_clock: float | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        latency = None
        if self.started_at is not None and self.finished_at is not None:
            latency = self.finished_at - self.started_at
        return {
            "job_id": self.job_id,
            "state": self.state,
            "emotion": self.emotion,
            "created_at": self.created_at,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "error": self.error,
            "latency_s": latency,
            "result_url": f"/api/jobs/{self.job_id}/result" if self.state == "done" else None,
        }


_TRANSITIONS = {"queued": {"running"}, "running": {"done", "failed"},
                "done": set(), "failed": set()}


class JobStore:
    """Serialized single-writer record store with lazy retention pruning."""

    def __init__(self, retention_s: float, clock=time.monotonic):
        self._jobs: dict[str, InferenceJob] = {}
        self._lock = threading.Lock()
        self.retention_s = retention_s
        self.clock = clock

    def add(self, job: InferenceJob):
        with self._lock:
            self._prune()
            self._jobs[job.job_id] = job

    def transition(self, job_id: str, state: str, **updates):
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None:
                return None
            if state not in _TRANSITIONS[job.state]:
                raise RuntimeError(f"illegal transition {job.state} -> {state}")
            job.state = state
            for key, value in updates.items():
                setattr(job, key, value)
            if state in ("done", "failed"):
                job._finish_clock = self.clock()
            return job

    def get(self, job_id: str) -> InferenceJob | None:
        with self._lock:
            self._prune()
            job = self._jobs.get(job_id)
            return copy.copy(job) if job is not None else None

    def remove(self, job_id: str):
        with self._lock:
            self._jobs.pop(job_id, None)

    def counts(self) -> dict:
        with self._lock:
            self._prune()
            out = {s: 0 for s in STATES}
            for job in self._jobs.values():
                out[job.state] += 1
            return out

    def _prune(self):
        now = self.clock()
        stale = [jid for jid, job in self._jobs.items()
                 if job._finish_clock is not None
                 and now - job._finish_clock > self.retention_s]
        for jid in stale:
            job = self._jobs.pop(jid)
            for p in (job.result_path, job.video_path, job.audio_path):
                if p is not None:
                    Path(p).unlink(missing_ok=True)


class ServiceRuntime:
    def __init__(self, cfg: ServiceConfig):
        if not cfg.checkpoint:
            raise RuntimeError("service requires a checkpoint path")
        self.cfg = cfg
        self.generator, _ = load_generator(cfg.checkpoint)   # refuses to start on failure
        self.store = JobStore(cfg.retention_s)
        self.queue: queue.Queue = queue.Queue(maxsize=cfg.max_queue_depth)
        if cfg.work_dir:
            self.work_dir = Path(cfg.work_dir)
        else:
            import tempfile
            self._tmp = tempfile.TemporaryDirectory(prefix="emoface_jobs_")
            self.work_dir = Path(self._tmp.name)
        self.work_dir.mkdir(parents=True, exist_ok=True)
        self._stop = object()
        self.workers = [threading.Thread(target=self._worker_loop, daemon=True,
                                         name=f"emoface-worker-{i}")
                        for i in range(cfg.workers)]

    def start(self):
        for w in self.workers:
            w.start()

    def stop(self):
        for _ in self.workers:
            self.queue.put(self._stop)
        for w in self.workers:
            w.join(timeout=10)

    def _worker_loop(self):
        model = copy.deepcopy(self.generator).eval()
        while True:
            item = self.queue.get()
            if item is self._stop:
                return
            self._run_one(item, model)

    def _run_one(self, job_id: str, model):
        job = self.store.transition(job_id, "running", started_at=time.time())
        if job is None:                       # pruned while queued
            return
        try:
            frames, audio, fps, rate = load_media(
                job.video_path, job.audio_path, fps=job.fps, sample_rate=job.sample_rate,
                default_fps=self.cfg.fps, default_rate=self.cfg.sample_rate)
            frames, audio = reconcile_durations(frames, audio, fps, rate,
                                                self.cfg.duration_tolerance_s)
            size = model.cfg.image_size
            if frames.shape[1:3] != (size, size):
                import cv2
                frames = np.stack([cv2.resize(f, (size, size), interpolation=cv2.INTER_AREA)
                                   for f in frames])
            out = windowed_generate(model, frames, audio, rate, fps,
                                    EmotionLabel(job.emotion), mask_mode=self.cfg.mask_mode)
            result = self.work_dir / f"{job.job_id}_result.avi"
            write_video(result, out, fps, audio, rate)
            self.store.transition(job_id, "done", finished_at=time.time(),
                                  result_path=result)
        except Exception as exc:             # job isolation: failures stay in the record
            self.store.transition(job_id, "failed", finished_at=time.time(),
                                  error=f"{type(exc).__name__}: {exc}")


async def _save_upload(upload: UploadFile, dest: Path, limit: int):
    written = 0
    with open(dest, "wb") as fh:
        while True:
            chunk = await upload.read(1 << 20)
            if not chunk:
                break
            written += len(chunk)
            if written > limit:
                dest.unlink(missing_ok=True)
                raise HTTPException(413, detail=f"upload exceeds {limit} bytes")
            fh.write(chunk)
    if written == 0:
        dest.unlink(missing_ok=True)
        raise HTTPException(422, detail=f"empty upload for {upload.filename!r}")


def create_app(cfg: ServiceConfig) -> FastAPI:
    runtime = ServiceRuntime(cfg)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        runtime.start()
        try:
            yield
        finally:
            runtime.stop()

    app = FastAPI(title="emoface", lifespan=lifespan)
    app.state.runtime = runtime

    @app.get("/api/health")
    def health():
        return {"status": "ok", "checkpoint": str(cfg.checkpoint),
                "queue_depth": runtime.queue.qsize(), "jobs": runtime.store.counts()}

    @app.get("/api/emotions")
    def emotions():
        return {"emotions": list(EMOTIONS)}

    @app.post("/api/jobs", status_code=202)
    async def submit_job(video: UploadFile, audio: UploadFile, emotion: str = Form(...),
                         fps: float | None = Form(None),
                         sample_rate: int | None = Form(None)):
        try:
            label = EmotionLabel.from_name(emotion)
        except EmotionError as exc:
            raise HTTPException(422, detail=str(exc)) from exc

        job_id = uuid.uuid4().hex
        vdest = runtime.work_dir / f"{job_id}_video{Path(video.filename or 'v').suffix or '.bin'}"
        adest = runtime.work_dir / f"{job_id}_audio{Path(audio.filename or 'a').suffix or '.bin'}"
        await _save_upload(video, vdest, cfg.max_upload_bytes)
        await _save_upload(audio, adest, cfg.max_upload_bytes)

        job = InferenceJob(job_id=job_id, emotion=label.category, created_at=time.time(),
                           video_path=vdest, audio_path=adest, fps=fps,
                           sample_rate=sample_rate)
        runtime.store.add(job)
        try:
            runtime.queue.put_nowait(job_id)
        except queue.Full:
            runtime.store.remove(job_id)
            for p in (vdest, adest):
                p.unlink(missing_ok=True)
            raise HTTPException(503, detail=f"job queue full "
                                f"(depth {cfg.max_queue_depth}); retry later")
        return {"job_id": job_id, "state": "queued"}

    @app.get("/api/jobs/{job_id}")
    def get_status(job_id: str):
        job = runtime.store.get(job_id)
        if job is None:
            raise HTTPException(404, detail=f"unknown job {job_id!r}")
        return job.to_dict()

    @app.get("/api/jobs/{job_id}/result")
    def get_result(job_id: str):
        job = runtime.store.get(job_id)
        if job is None:
            raise HTTPException(404, detail=f"unknown job {job_id!r}")
        if job.state == "failed":
            raise HTTPException(409, detail=f"job failed: {job.error}")
        if job.state != "done":
            raise HTTPException(409, detail=f"job is {job.state}; result not ready")
        return FileResponse(job.result_path, media_type="video/x-msvideo",
                            filename=f"{job_id}.avi")

    return app


def serve(cfg: ServiceConfig):
    import uvicorn

    uvicorn.run(create_app(cfg), host=cfg.host, port=cfg.port)
