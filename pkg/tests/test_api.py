from __future__ import annotations
import time

import pytest
from fastapi.testclient import TestClient

from app.api.server import RunRequest, app, execute_run
from app.memory.store import get_run


@pytest.fixture()
def client(tmp_path, monkeypatch):
    monkeypatch.setenv("PARALLAX_STATE_DIR", str(tmp_path))
    with TestClient(app) as c:
        yield c


def _wait(client: TestClient, run_id: str, timeout: float = 60.0) -> dict:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        run = client.get(f"/api/runs/{run_id}").json()
        if run["status"] in ("complete", "failed"):
            return run
        time.sleep(0.2)
    raise AssertionError(f"run {run_id} did not finish in {timeout} s")


def test_health(client):
    body = client.get("/api/health").json()
    assert body == {"status": "ok", "presets": ["cityscapes", "kitti"]}


def test_submitted_run_completes_with_report(client):
    resp = client.post("/api/runs", json={"preset": "kitti", "stage": "distill", "depth_scale": 2.0})
    assert resp.status_code == 202
    run_id = resp.json()["run_id"]
    assert resp.json()["status"] == "queued"

    run = _wait(client, run_id)
    assert run["status"] == "complete", run.get("error")
    assert run["stage"] == "distill"
    assert 1.98 <= run["recovered_scale"] <= 2.02
    assert run["abs_rel_median"] < 1e-6
    assert run["abs_rel"] > 0.5
    assert run["report"]["total"]["value"] == run["total_loss"]
    assert "consist" in run["report"]["components"]
    assert run["request"]["depth_scale"] == 2.0
    assert [e["type"] for e in run["events"]][-1] == "run_complete"
    assert all(e["run_id"] == run_id for e in run["events"])


def test_list_and_stats(client):
    run_id = client.post("/api/runs", json={"stage": "early"}).json()["run_id"]
    _wait(client, run_id)
    runs = client.get("/api/runs", params={"stage": "early"}).json()["runs"]
    assert [r["id"] for r in runs] == [run_id]
    assert client.get("/api/runs", params={"status": "failed"}).json()["runs"] == []
    stats = client.get("/api/stats").json()
    assert stats["total"] == 1
    assert stats["by_status"] == {"complete": 1}
    assert stats["by_stage"] == {"early": 1}


@pytest.mark.parametrize("payload", [{"stage": "warmup"}, {"preset": "nuscenes"}])
def test_bad_stage_or_preset_is_rejected(client, payload):
    resp = client.post("/api/runs", json=payload)
    assert resp.status_code == 400
    assert "detail" in resp.json()


@pytest.mark.parametrize("payload", [{"depth_scale": 0}, {"supersample": 9}, {"scale_method": "mean"}])
def test_invalid_request_fields(client, payload):
    assert client.post("/api/runs", json=payload).status_code == 422


def test_unknown_run(client):
    resp = client.get("/api/runs/does-not-exist")
    assert resp.status_code == 404
    assert resp.json()["detail"] == "Run not found"


def test_failed_run_is_recorded(tmp_path, monkeypatch):
    monkeypatch.setenv("PARALLAX_STATE_DIR", str(tmp_path))
    record = execute_run("r-fail", RunRequest(preset="nowhere"))
    assert record["status"] == "failed"
    assert "ConfigError" in record["error"]
    assert get_run("r-fail")["status"] == "failed"
