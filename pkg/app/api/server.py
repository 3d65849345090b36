"""
Planar-parallax run service (FastAPI).

POST /api/runs renders a synthetic forward-motion pair from a camera preset,
runs the loss pipeline for a training stage with the oracle depth (optionally
scale-perturbed) as D_mono, evaluates it with and without median scaling,
recovers its metric scale from the camera height and stores the report.
Runs execute on a worker pool; the POST returns 202 with the run id.

Configure via .env:
    PARALLAX_STATE_DIR=/tmp        run store location
    PARALLAX_WORKERS=2             concurrent runs
    FRONTEND_URL=...               extra CORS origin

Usage:
    uvicorn app.api.server:app --port 8000
    curl -X POST localhost:8000/api/runs -H 'content-type: application/json' \\
         -d '{"preset": "kitti", "stage": "distill", "depth_scale": 2.0}'
"""
from __future__ import annotations
import asyncio
import os
import uuid
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from typing import Any, Literal

from dotenv import load_dotenv
from fastapi import FastAPI, HTTPException, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from app.config.settings import PRESETS, RunConfig, load_camera
from app.errors import ParallaxError
from app.evaluation.metrics import evaluate
from app.memory.store import get_run, get_stats, init_db, list_runs, save_run
from app.parallax.engine import flow_from_depth
from app.photometric.losses import parse_stage
from app.pipeline.graph import run_pipeline
from app.scale.recovery import estimate_scale
from app.surface.normals import flat_mask, trapezoid_road_mask
from app.synth.scenes import default_scene, forward_poses, make_pair
from app.utils.log import log

load_dotenv()

app = FastAPI(title="Planar Parallax API", version="1.0.0")
app.add_middleware(CORSMiddleware,
    allow_origins=[o for o in ("http://localhost:3000", os.getenv("FRONTEND_URL", "")) if o],
    allow_methods=["*"],
    allow_headers=["*"],
)

_executor = ThreadPoolExecutor(max_workers=int(os.getenv("PARALLAX_WORKERS", "2")))


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------

class RunRequest(BaseModel):
    preset: str = "kitti"
    stage: str = "homo"
    depth_scale: float = Field(1.0, gt=0)
    baseline: float = Field(0.8, gt=0)
    supersample: int = Field(1, ge=1, le=4)
    co_moving: bool = False
    seed: int = 7
    scale_method: Literal["median", "ransac"] = "median"
    threads: int = Field(1, ge=1, le=16)


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _now():
    return datetime.now(timezone.utc).isoformat()


def execute_run(run_id: str, req: RunRequest) -> dict[str, Any]:
    """Render, run the pipeline, evaluate, recover scale and persist. Returns the stored record."""
    record: dict[str, Any] = {
        "id": run_id, "preset": req.preset, "stage": req.stage, "status": "running",
        "request": req.model_dump(), "started_at": _now(),
    }
    save_run(record)
    log("API", f"run {run_id[:8]} started", icon="📥", preset=req.preset, stage=req.stage)
    events: list[dict[str, Any]] = []
    try:
        cam = load_camera(preset=req.preset)
        cfg = RunConfig.from_env(threads=req.threads, baseline=req.baseline, supersample=req.supersample)
        K = cam.intrinsics()
        pose_t, pose_s = forward_poses(cam.cam_height_m, cfg.baseline, cam.pitch_deg)
        pair = make_pair(default_scene(req.seed, req.co_moving), pose_t, pose_s, K, cfg.supersample, cfg.threads)
        gt = pair.target.depth
        _, flowscale, _ = flow_from_depth(gt, K, pair.pose_s_to_t, pair.plane, pair.epipole, cfg.f_min, cfg.f_max)
        depth_mono = gt.scaled(req.depth_scale)

        final = run_pipeline(K=K, pose_s_to_t=pair.pose_s_to_t, plane=pair.plane,
                             target=pair.target.image, source=pair.source.image,
                             depth_mono=depth_mono, flowscale=flowscale, stage=req.stage,
                             config=cfg, run_id=run_id, on_event=events.append)

        raw = evaluate(depth_mono, gt, cfg.cap)
        median = evaluate(depth_mono, gt, cfg.cap, median_scale=True)
        road = flat_mask(final["normals"], pair.plane.normal, cfg.tau) & trapezoid_road_mask(K.width, K.height)
        scale = estimate_scale(depth_mono, K, road, cam.cam_height_m, req.scale_method, pair.plane.normal,
                               cfg.ransac_iters, seed=cfg.seed)
        record.update({
            "status": "complete",
            "total_loss": final["total"].value,
            "abs_rel": raw.abs_rel,
            "abs_rel_median": median.abs_rel,
            "recovered_scale": scale.scale,
            "report": {
                "total": final["total"].to_dict(),
                "components": {name: r.to_dict() for name, r in sorted(final["losses"].items())},
                "mask_pixels": {name: int(m.sum()) for name, m in final["masks"].items()},
                "metrics": {"raw": raw.to_dict(), "median_scaled": median.to_dict()},
                "scale": {**scale.to_dict(), "road_pixels": int(road.sum())},
            },
        })
        log("API", f"run {run_id[:8]} complete", icon="✅", total=final["total"].value, scale=scale.scale)
    except Exception as e:
        record.update({"status": "failed", "error": f"{type(e).__name__}: {e}"})
        log("API", f"run {run_id[:8]} failed", icon="❌", error=str(e))
    record["events"] = events
    record["completed_at"] = _now()
    save_run(record)
    return record


# ---------------------------------------------------------------------------
# Startup / errors
# ---------------------------------------------------------------------------

@app.on_event("startup")
async def startup():
    init_db()
    log("API", "planar parallax API started", icon="🧭", presets=",".join(sorted(PRESETS)))


@app.exception_handler(ParallaxError)
async def parallax_error(request: Request, exc: ParallaxError):
    return JSONResponse(status_code=400, content={"detail": str(exc)})


# ---------------------------------------------------------------------------
# Endpoints
# ---------------------------------------------------------------------------

@app.get("/api/health")
async def health():
    return {"status": "ok", "presets": sorted(PRESETS)}


@app.get("/api/stats")
async def stats():
    return get_stats()


@app.get("/api/runs")
async def runs(limit: int = 50, offset: int = 0, status: str | None = None, stage: str | None = None):
    return {"runs": list_runs(limit=limit, offset=offset, status=status, stage=stage)}


@app.get("/api/runs/{run_id}")
async def run_detail(run_id: str):
    run = get_run(run_id)
    if not run:
        raise HTTPException(status_code=404, detail="Run not found")
    return run


@app.post("/api/runs", status_code=202)
async def submit_run(req: RunRequest):
    load_camera(preset=req.preset)
    req = req.model_copy(update={"stage": parse_stage(req.stage).value})
    run_id = str(uuid.uuid4())
    save_run({"id": run_id, "preset": req.preset, "stage": req.stage, "status": "queued",
              "request": req.model_dump(), "started_at": _now()})
    asyncio.get_event_loop().run_in_executor(_executor, execute_run, run_id, req)
    return {"run_id": run_id, "status": "queued"}
