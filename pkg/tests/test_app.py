"""Service and CLI contracts: job lifecycle over HTTP, upload limits, retention,
configuration precedence, and machine-readable CLI failures."""

import json
import time

import numpy as np
import pytest
import torch
from click.testing import CliRunner
from fastapi.testclient import TestClient

from emoface.app.cli import main as cli_main
from emoface.app.config import (ConfigFileError, ServiceConfig,
                                load_service_config)
from emoface.app.service import InferenceJob, JobStore, ServiceRuntime, create_app
from emoface.checkpointing import save_checkpoint
from emoface.discriminators import EmotionDiscriminator
from emoface.emotions import EMOTIONS
from emoface.netblocks import Generator, GeneratorConfig

torch.set_num_threads(1)

TINY = GeneratorConfig(image_size=16, t=2, enc_channels=(4, 8),
                       audio_embed_dim=16, emotion_embed_dim=8,
                       pre_output_channels=6)


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    torch.manual_seed(0)
    gen = Generator(TINY)
    disc = EmotionDiscriminator(image_size=16, t=2)
    path = tmp_path_factory.mktemp("ckpt") / "final.pt"
    save_checkpoint(path, kind="train", config=TINY,
                    modules={"generator": gen, "emotion_disc": disc},
                    extra={"preset": "SEQ", "step": 0})
    return path


@pytest.fixture()
def media(tmp_path):
    rng = np.random.default_rng(1)
    video = tmp_path / "clip.npy"
    audio = tmp_path / "clip_audio.npy"
    np.save(video, rng.random((6, 16, 16, 3)).astype(np.float32))
    np.save(audio, (rng.standard_normal(int(16000 * 6 / 25)) * 0.1).astype(np.float32))
    return video, audio


def service_config(checkpoint, tmp_path, **overrides):
    kwargs = dict(checkpoint=str(checkpoint), work_dir=str(tmp_path / "spool"),
                  workers=1, max_queue_depth=8)
    kwargs.update(overrides)
    return ServiceConfig(**kwargs)


def submit(client, media, emotion="happiness", **form):
    video, audio = media
    with open(video, "rb") as vf, open(audio, "rb") as af:
        return client.post("/api/jobs",
                           files={"video": ("clip.npy", vf, "application/octet-stream"),
                                  "audio": ("clip_audio.npy", af, "application/octet-stream")},
                           data={"emotion": emotion, **form})


def wait_for(client, job_id, target, timeout=60.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        payload = client.get(f"/api/jobs/{job_id}").json()
        if payload["state"] in ("done", "failed"):
            assert payload["state"] == target, payload
            return payload
        time.sleep(0.05)
    raise AssertionError(f"job {job_id} never reached {target}")


# ------------------------------------------------------------ HTTP lifecycle

def test_health_and_emotions_endpoints(checkpoint, tmp_path):
    app = create_app(service_config(checkpoint, tmp_path))
    with TestClient(app) as client:
        health = client.get("/api/health").json()
        assert health["status"] == "ok"
        assert set(health["jobs"]) == {"queued", "running", "done", "failed"}
        assert client.get("/api/emotions").json() == {"emotions": list(EMOTIONS)}


def test_job_happy_path(checkpoint, tmp_path, media):
    app = create_app(service_config(checkpoint, tmp_path))
    with TestClient(app) as client:
        r = submit(client, media)
        assert r.status_code == 202
        job_id = r.json()["job_id"]
        assert r.json()["state"] == "queued"

        payload = wait_for(client, job_id, "done")
        assert payload["emotion"] == "happiness"
        assert payload["latency_s"] is not None and payload["latency_s"] >= 0
        assert payload["error"] is None
        assert payload["result_url"] == f"/api/jobs/{job_id}/result"

        again = client.get(f"/api/jobs/{job_id}").json()
        assert again == payload  # polling a finished job is idempotent

        result = client.get(f"/api/jobs/{job_id}/result")
        assert result.status_code == 200
        assert result.headers["content-type"] == "video/x-msvideo"
        assert len(result.content) > 0


def test_job_failure_is_recorded_not_fatal(checkpoint, tmp_path, media):
    video, _ = media
    bad_audio = video.parent / "long.npy"
    np.save(bad_audio, np.zeros(16000 * 5, dtype=np.float32))  # 5 s vs 0.24 s video
    app = create_app(service_config(checkpoint, tmp_path))
    with TestClient(app) as client:
        r = submit(client, (video, bad_audio))
        assert r.status_code == 202
        payload = wait_for(client, r.json()["job_id"], "failed")
        assert "MediaError" in payload["error"]
        assert "tolerance" in payload["error"]
        res = client.get(f"/api/jobs/{r.json()['job_id']}/result")
        assert res.status_code == 409
        assert "job failed" in res.json()["detail"]
        # the service keeps accepting work after a failed job
        ok = submit(client, media)
        assert ok.status_code == 202
        wait_for(client, ok.json()["job_id"], "done")


def test_unknown_emotion_rejected_with_the_six_names(checkpoint, tmp_path, media):
    app = create_app(service_config(checkpoint, tmp_path))
    with TestClient(app) as client:
        r = submit(client, media, emotion="joy")
        assert r.status_code == 422
        detail = r.json()["detail"]
        assert "unknown emotion 'joy'" in detail
        for name in EMOTIONS:
            assert name in detail


def test_oversize_upload_rejected(checkpoint, tmp_path, media):
    cfg = service_config(checkpoint, tmp_path, max_upload_mb=1e-4)  # ~104 bytes
    app = create_app(cfg)
    with TestClient(app) as client:
        r = submit(client, media)
        assert r.status_code == 413
        assert "exceeds" in r.json()["detail"]


def test_empty_upload_rejected(checkpoint, tmp_path, media):
    _, audio = media
    empty = audio.parent / "empty.npy"
    empty.write_bytes(b"")
    app = create_app(service_config(checkpoint, tmp_path))
    with TestClient(app) as client:
        r = submit(client, (empty, audio))
        assert r.status_code == 422
        assert "empty upload" in r.json()["detail"]


def test_unknown_job_is_404(checkpoint, tmp_path):
    app = create_app(service_config(checkpoint, tmp_path))
    with TestClient(app) as client:
        assert client.get("/api/jobs/nope").status_code == 404
        assert client.get("/api/jobs/nope/result").status_code == 404


def test_result_before_done_is_409(checkpoint, tmp_path, media):
    # no lifespan: workers never start, so the job stays queued
    app = create_app(service_config(checkpoint, tmp_path))
    client = TestClient(app)
    r = submit(client, media)
    job_id = r.json()["job_id"]
    assert client.get(f"/api/jobs/{job_id}").json()["state"] == "queued"
    res = client.get(f"/api/jobs/{job_id}/result")
    assert res.status_code == 409
    assert "not ready" in res.json()["detail"]


def test_full_queue_is_503_and_leaves_no_orphan(checkpoint, tmp_path, media):
    cfg = service_config(checkpoint, tmp_path, max_queue_depth=1)
    app = create_app(cfg)
    client = TestClient(app)  # workers not started: the queue cannot drain
    first = submit(client, media)
    assert first.status_code == 202
    second = submit(client, media)
    assert second.status_code == 503
    assert "queue full" in second.json()["detail"]
    # the rejected submission left neither a job record nor spooled uploads
    accepted = first.json()["job_id"]
    runtime = app.state.runtime
    spooled = {p.name for p in runtime.work_dir.iterdir()}
    assert all(name.startswith(accepted) for name in spooled)
    assert runtime.store.counts()["queued"] == 1


# ----------------------------------------------------------------- job store

class FakeClock:
    def __init__(self):
        self.now = 0.0

    def __call__(self):
        return self.now


def test_store_prunes_after_retention(tmp_path):
    clock = FakeClock()
    store = JobStore(retention_s=10.0, clock=clock)
    artifacts = []
    for name in ("res", "vid", "aud"):
        p = tmp_path / f"{name}.bin"
        p.write_bytes(b"x")
        artifacts.append(p)
    job = InferenceJob(job_id="j1", emotion="anger", result_path=artifacts[0],
                       video_path=artifacts[1], audio_path=artifacts[2])
    store.add(job)
    store.transition("j1", "running")
    store.transition("j1", "done")
    clock.now = 10.0
    assert store.get("j1") is not None       # exactly at retention: still kept
    clock.now = 10.1
    assert store.get("j1") is None
    assert all(not p.exists() for p in artifacts)


def test_store_keeps_unfinished_jobs_forever(tmp_path):
    clock = FakeClock()
    store = JobStore(retention_s=1.0, clock=clock)
    store.add(InferenceJob(job_id="j2", emotion="fear"))
    clock.now = 1e6
    assert store.get("j2").state == "queued"


def test_store_rejects_illegal_transitions():
    store = JobStore(retention_s=10.0, clock=FakeClock())
    store.add(InferenceJob(job_id="j3", emotion="fear"))
    store.transition("j3", "running")
    store.transition("j3", "done")
    with pytest.raises(RuntimeError, match="illegal transition"):
        store.transition("j3", "running")
    assert store.transition("missing", "running") is None


def test_store_counts_by_state():
    store = JobStore(retention_s=10.0, clock=FakeClock())
    for i, state in enumerate(["queued", "queued", "running"]):
        store.add(InferenceJob(job_id=f"c{i}", emotion="anger"))
    store.transition("c2", "running")
    counts = store.counts()
    assert counts["queued"] == 2 and counts["running"] == 1


# ------------------------------------------------------------- configuration

def test_config_precedence_file_env_flags(tmp_path):
    cfg_file = tmp_path / "svc.yaml"
    cfg_file.write_text("port: 1111\nmax_queue_depth: 4\nhost: 0.0.0.0\n")
    cfg = load_service_config(
        cfg_file,
        env={"EMOFACE_PORT": "2222", "EMOFACE_WORKERS": "3"},
        overrides={"port": 3333, "checkpoint": None},  # None must not override
    )
    assert cfg.port == 3333            # flag beats env beats file
    assert cfg.workers == 3            # env string coerced to int
    assert cfg.max_queue_depth == 4    # file survives where nothing overrides
    assert cfg.host == "0.0.0.0"
    assert cfg.checkpoint == ""


def test_config_env_beats_file(tmp_path):
    cfg_file = tmp_path / "svc.json"
    cfg_file.write_text(json.dumps({"port": 1111}))
    cfg = load_service_config(cfg_file, env={"EMOFACE_PORT": "2222"})
    assert cfg.port == 2222


def test_config_rejects_unknown_keys(tmp_path):
    cfg_file = tmp_path / "svc.yaml"
    cfg_file.write_text("prot: 1111\n")
    with pytest.raises(ConfigFileError, match="unknown config keys"):
        load_service_config(cfg_file, env={})


def test_config_rejects_non_mapping_and_bad_syntax(tmp_path):
    listy = tmp_path / "list.yaml"
    listy.write_text("- a\n- b\n")
    with pytest.raises(ConfigFileError, match="mapping"):
        load_service_config(listy, env={})
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ConfigFileError, match="cannot parse"):
        load_service_config(broken, env={})


def test_config_validation():
    with pytest.raises(ConfigFileError, match="max_queue_depth"):
        ServiceConfig(max_queue_depth=0)
    with pytest.raises(ConfigFileError, match="workers"):
        ServiceConfig(workers=0)
    with pytest.raises(ConfigFileError, match="retention_s"):
        ServiceConfig(retention_s=0)
    with pytest.raises(ConfigFileError, match="invalid service configuration"):
        load_service_config(None, env={"EMOFACE_WORKERS": "0"})


def test_runtime_requires_checkpoint():
    with pytest.raises(RuntimeError, match="checkpoint"):
        ServiceRuntime(ServiceConfig(checkpoint=""))


def test_runtime_refuses_bad_checkpoint(tmp_path):
    junk = tmp_path / "junk.pt"
    junk.write_bytes(b"not a checkpoint")
    with pytest.raises(Exception):
        ServiceRuntime(ServiceConfig(checkpoint=str(junk)))


# ------------------------------------------------------------------- the CLI

def test_cli_help_lists_every_command():
    result = CliRunner().invoke(cli_main, ["--help"])
    assert result.exit_code == 0
    for command in ("datagen", "train", "eval", "infer", "serve", "export-embeddings"):
        assert command in result.output


def test_cli_errors_are_machine_readable(tmp_path):
    junk = tmp_path / "junk.pt"
    junk.write_bytes(b"garbage")
    video = tmp_path / "v.npy"
    audio = tmp_path / "a.npy"
    np.save(video, np.zeros((4, 16, 16, 3), dtype=np.float32))
    np.save(audio, np.zeros(2560, dtype=np.float32))
    result = CliRunner().invoke(cli_main, [
        "infer", "--checkpoint", str(junk), "--video", str(video),
        "--audio", str(audio), "--emotion", "anger", "--out", str(tmp_path / "o.avi")])
    assert result.exit_code == 1
    err = getattr(result, "stderr", "") or result.output
    record = json.loads(err.strip().splitlines()[-1])
    assert set(record) == {"error", "message"}


def test_cli_infer_happy_path(checkpoint, tmp_path, media):
    video, audio = media
    out = tmp_path / "gen.avi"
    result = CliRunner().invoke(cli_main, [
        "infer", "--checkpoint", str(checkpoint), "--video", str(video),
        "--audio", str(audio), "--emotion", "sadness", "--out", str(out)])
    assert result.exit_code == 0, result.output
    record = json.loads(result.output.strip().splitlines()[-1])
    assert record["frames"] == 6
    assert record["emotion"] == "sadness"
    assert out.exists() and out.stat().st_size > 0


def test_cli_eval_requires_finished_run(tmp_path):
    run = tmp_path / "run"
    run.mkdir()
    data = tmp_path / "data"
    data.mkdir()
    result = CliRunner().invoke(cli_main, [
        "eval", "--run", str(run), "--data", str(data)])
    assert result.exit_code == 1
    assert "train first" in (getattr(result, "stderr", "") or result.output)


def test_cli_datagen_writes_readable_corpus(tmp_path):
    out = tmp_path / "corpus"
    result = CliRunner().invoke(cli_main, [
        "datagen", "--out", str(out), "--clips", "6", "--duration", "0.6",
        "--image-size", "32", "--exact-balance"])
    assert result.exit_code == 0, result.output
    assert json.loads(result.output.strip().splitlines()[-1])["clips"] == 6
    from emoface.corpus.io import read_corpus
    clips = read_corpus(out)
    assert len(clips) == 6
    assert (out / "spec.json").exists()
    assert sorted({c.emotion.category for c in clips}) == sorted(EMOTIONS)
