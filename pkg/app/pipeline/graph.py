"""
LangGraph pipeline for one planar-parallax evaluation pass.

    warp → parallax → synthesis → masks → losses ─┬─ distill → total → END
                                                   └─────────── total → END

Every node returns only the keys it produced plus its event. The route after
"losses" depends on the training stage: only the distillation stage needs the
static-masked mono loss and the consistency loss.

Usage:
    from app.pipeline.graph import run_pipeline
    final = run_pipeline(K=K, pose_s_to_t=pose, plane=plane, target=img_t,
                         source=img_s, depth_mono=D, flowscale=S, stage="homo")
    print(final["total"].value, final["total"].breakdown)
"""

from __future__ import annotations
import time
import uuid
from datetime import datetime, timezone
from typing import Any, Callable, Literal

import numpy as np
from langgraph.graph import END, StateGraph

from app.config.settings import RunConfig
from app.geometry.core import CameraIntrinsics, GroundPlane, RigidPose, epipole, invert_pose, plane_homography
from app.geometry.fields import DepthField, FlowScaleField, ImageBuffer, ScalarField
from app.parallax.engine import certainty_mask, depth_from_gamma, gamma_from_depth, gamma_from_flowscale
from app.parallax.engine import residual_flow_from_flowscale, unbin_flowscale
from app.photometric.losses import (LossReport, TrainingStage, auto_mask, average_reports, loss_consist, loss_homo,
                                    loss_mono, loss_pp, loss_res, parse_stage, schedule_total, smoothness_loss,
                                    static_mask)
from app.pipeline.state import PipelineState
from app.sampling.warp import (depth_pyramid, image_pyramid, synthesize_from_depth, synthesize_from_residual_flow,
                               warp_by_homography)
from app.surface.normals import road_flat_mask, surface_normals
from app.utils.log import log


def _now(): return datetime.now(timezone.utc).isoformat()


def _emit(state, event_type, data):
    return [{"type": event_type, "timestamp": _now(), "run_id": state.get("run_id", ""), **data}]


def _config(state) -> RunConfig:
    return state.get("config") or RunConfig()


def _ms(t0: float) -> float:
    return round((time.perf_counter() - t0) * 1000.0, 2)


# ---------------------------------------------------------------------------
# Nodes
# ---------------------------------------------------------------------------

def warp_node(state):
    t0 = time.perf_counter()
    cfg = _config(state)
    H = plane_homography(state["K"], state["pose_s_to_t"], state["plane"])
    warped, valid = warp_by_homography(state["source"], H, state["target"].shape, cfg.threads)
    log("WARP", "plane homography applied", icon="📐", valid=int(valid.sum()), ms=_ms(t0))
    return {
        "homography": H,
        "warped": warped,
        "warped_valid": valid,
        "current_node": "warp",
        "status": "running",
        "events": _emit(state, "warp_complete", {"valid_pixels": int(valid.sum()), "ms": _ms(t0)}),
    }


def parallax_node(state):
    t0 = time.perf_counter()
    K, pose, plane, S = state["K"], state["pose_s_to_t"], state["plane"], state["flowscale"]
    gamma = gamma_from_flowscale(S, float(pose.translation[2]), plane)
    depth_pp = depth_from_gamma(gamma, K, plane)
    e = epipole(K, pose)
    flow = residual_flow_from_flowscale(S, e)
    log("PARALLAX", "flowscale → structure → depth", icon="🧭",
        epipole=f"{e.u:.2f},{e.v:.2f}", depth_valid=depth_pp.count, ms=_ms(t0))
    return {
        "gamma_pp": gamma,
        "depth_pp": depth_pp,
        "flow": flow,
        "current_node": "parallax",
        "events": _emit(state, "parallax_complete", {
            "epipole": [e.u, e.v],
            "depth_valid": depth_pp.count,
            "ms": _ms(t0),
        }),
    }


def synthesis_node(state):
    t0 = time.perf_counter()
    cfg = _config(state)
    K, source = state["K"], state["source"]
    pose_t_to_s = invert_pose(state["pose_s_to_t"])
    synthesized = {
        "mono": synthesize_from_depth(source, state["depth_mono"], K, pose_t_to_s, cfg.threads),
        "pp": synthesize_from_depth(source, state["depth_pp"], K, pose_t_to_s, cfg.threads),
        "res": synthesize_from_residual_flow(state["warped"], state["flow"], state["warped_valid"], cfg.threads),
    }
    counts = {name: int(ok.sum()) for name, (_, ok) in synthesized.items()}
    log("SYNTH", "views synthesized", icon="🖼️", **counts, ms=_ms(t0))
    return {
        "synthesized": synthesized,
        "current_node": "synthesis",
        "events": _emit(state, "synthesis_complete", {"valid_pixels": counts, "ms": _ms(t0)}),
    }


def masks_node(state):
    t0 = time.perf_counter()
    cfg = _config(state)
    K, plane, target, source = state["K"], state["plane"], state["target"], state["source"]
    depth_mono, depth_pp = state["depth_mono"], state["depth_pp"]
    mono_img, mono_ok = state["synthesized"]["mono"]

    normals = surface_normals(depth_mono, K, cfg.neighbor_offset, cfg.threads)
    gamma = state.get("gamma_pp") or gamma_from_depth(depth_mono, K, plane)
    masks = {
        "flat": road_flat_mask(normals, plane.normal, gamma, cfg.tau, cfg.gamma_tol),
        "auto": auto_mask(target, [mono_img], [source], cfg.photometric, [mono_ok], depth_pp.valid),
        "static": static_mask(depth_mono, depth_pp, cfg.delta),
    }
    if cfg.use_certainty_mask:
        masks["certainty"] = certainty_mask(state["flow"], depth_pp, K, invert_pose(state["pose_s_to_t"]),
                                            plane, cfg.epsilon)
    else:
        masks["certainty"] = np.ones(target.shape, dtype=bool)
    counts = {name: int(m.sum()) for name, m in masks.items()}
    log("MASKS", "masks computed", icon="🎭", **counts, ms=_ms(t0))
    return {
        "normals": normals,
        "masks": masks,
        "current_node": "masks",
        "events": _emit(state, "masks_complete", {"pixels": counts, "ms": _ms(t0)}),
    }


def _multiscale_mono(state, cfg: RunConfig) -> LossReport:
    """L_mono averaged over a factor-2 pyramid; level 0 reuses the full-resolution synthesis."""
    K, pose_t_to_s = state["K"], invert_pose(state["pose_s_to_t"])
    targets = image_pyramid(state["target"], cfg.scales)
    sources = image_pyramid(state["source"], cfg.scales)
    depths = depth_pyramid(state["depth_mono"], cfg.scales)
    mono_img, mono_ok = state["synthesized"]["mono"]
    reports = [loss_mono(mono_img, state["target"], state["masks"]["auto"], cfg.photometric, [mono_ok])]
    for level in range(1, min(len(targets), len(sources), len(depths))):
        K_l = K.scaled(0.5 ** level)
        img, ok = synthesize_from_depth(sources[level], depths[level], K_l, pose_t_to_s, cfg.threads)
        auto = auto_mask(targets[level], [img], [sources[level]], cfg.photometric, [ok], depths[level].valid)
        reports.append(loss_mono(img, targets[level], auto, cfg.photometric, [ok]))
    return average_reports("mono", reports)


def losses_node(state):
    t0 = time.perf_counter()
    cfg = _config(state)
    params = cfg.photometric
    target, masks, synth = state["target"], state["masks"], state["synthesized"]
    depth_mono = state["depth_mono"]

    pp_img, pp_ok = synth["pp"]
    res_img, res_ok = synth["res"]
    mono_img, mono_ok = synth["mono"]
    disparity = ScalarField(np.where(depth_mono.valid, 1.0 / np.where(depth_mono.valid, depth_mono.values, 1.0), 0.0),
                            depth_mono.valid)
    smooth_disp = smoothness_loss(disparity, target, "smooth_disp")
    smooth_pp = smoothness_loss(unbin_flowscale(state["flowscale"]), target, "smooth_pp")

    losses = {
        "homo": loss_homo(state["warped"], target, masks["flat"], params, state["warped_valid"]),
        "mono": (_multiscale_mono(state, cfg) if cfg.scales > 1
                 else loss_mono(mono_img, target, masks["auto"], params, [mono_ok])),
        "pp": loss_pp(pp_img, target, masks["auto"], masks["certainty"], params, [pp_ok]),
        "res": loss_res(res_img, target, params, res_ok),
        "smooth_disp": smooth_disp,
        "smooth_pp": smooth_pp,
        "smooth": LossReport("smooth", smooth_disp.value + smooth_pp.value, None, smooth_disp.count,
                             breakdown={"disp": smooth_disp.value, "pp": smooth_pp.value}, reduction="sum"),
    }
    values = {name: r.value for name, r in losses.items()}
    log("LOSSES", "component losses", icon="📉", **values, ms=_ms(t0))
    return {
        "losses": losses,
        "current_node": "losses",
        "events": _emit(state, "losses_complete", {"values": values, "ms": _ms(t0)}),
    }


def distill_node(state):
    t0 = time.perf_counter()
    cfg = _config(state)
    masks, losses = state["masks"], dict(state["losses"])
    mono_img, mono_ok = state["synthesized"]["mono"]
    if cfg.use_static_mask:
        losses["mono_static"] = loss_mono(mono_img, state["target"], masks["auto"] & masks["static"],
                                          cfg.photometric, [mono_ok], name="mono_static")
    losses["consist"] = loss_consist(state["depth_mono"], state["depth_pp"], masks["static"])
    log("DISTILL", "distillation terms", icon="⚗️", consist=losses["consist"].value,
        static=int(masks["static"].sum()), ms=_ms(t0))
    return {
        "losses": losses,
        "current_node": "distill",
        "events": _emit(state, "distill_complete", {
            "consist": losses["consist"].value,
            "mono_static": losses["mono_static"].value if "mono_static" in losses else None,
        }),
    }


def total_node(state):
    cfg = _config(state)
    total = schedule_total(state["stage"], state["losses"], cfg.smoothness_weight)
    log("TOTAL", f"stage={state['stage']}", icon="✅", total=total.value)
    return {
        "total": total,
        "current_node": "total",
        "status": "complete",
        "completed_at": _now(),
        "events": _emit(state, "run_complete", {"total": total.value, "breakdown": total.breakdown}),
    }


# ---------------------------------------------------------------------------
# Routing
# ---------------------------------------------------------------------------

def route_by_stage(state) -> Literal["distill", "total"]:
    return "distill" if parse_stage(state["stage"]) is TrainingStage.DISTILL else "total"


# ---------------------------------------------------------------------------
# Graph builder
# ---------------------------------------------------------------------------

def build_graph():
    builder = StateGraph(PipelineState)
    builder.add_node("warp", warp_node)
    builder.add_node("parallax", parallax_node)
    builder.add_node("synthesis", synthesis_node)
    builder.add_node("masks", masks_node)
    builder.add_node("losses", losses_node)
    builder.add_node("distill", distill_node)
    builder.add_node("total", total_node)
    builder.set_entry_point("warp")
    builder.add_edge("warp", "parallax")
    builder.add_edge("parallax", "synthesis")
    builder.add_edge("synthesis", "masks")
    builder.add_edge("masks", "losses")
    builder.add_conditional_edges("losses", route_by_stage, {"distill": "distill", "total": "total"})
    builder.add_edge("distill", "total")
    builder.add_edge("total", END)
    return builder.compile()


_graph = None


def get_graph():
    global _graph
    if _graph is None:
        _graph = build_graph()
    return _graph


def run_pipeline(*, K: CameraIntrinsics, pose_s_to_t: RigidPose, plane: GroundPlane, target: ImageBuffer,
                 source: ImageBuffer, depth_mono: DepthField, flowscale: FlowScaleField,
                 stage: TrainingStage | str = TrainingStage.HOMO, config: RunConfig | None = None,
                 run_id: str | None = None, on_event: Callable[[dict[str, Any]], None] | None = None,
                 ) -> PipelineState:
    """Run the graph to completion and return the final state; on_event sees each event as it is emitted."""
    stage = parse_stage(stage)
    initial: PipelineState = {
        "run_id": run_id or str(uuid.uuid4()),
        "stage": stage.value,
        "status": "pending",
        "current_node": "",
        "started_at": _now(),
        "completed_at": "",
        "config": config or RunConfig(),
        "K": K,
        "pose_s_to_t": pose_s_to_t,
        "plane": plane,
        "target": target,
        "source": source,
        "depth_mono": depth_mono,
        "flowscale": flowscale,
        "events": [],
    }
    log("PIPELINE", "run started", icon="🚀", run=initial["run_id"][:8], stage=stage.value)
    final: PipelineState = initial
    seen = 0
    for values in get_graph().stream(initial, stream_mode="values"):
        final = values
        events = values.get("events", [])
        if on_event is not None:
            for event in events[seen:]:
                on_event(event)
        seen = len(events)
    return final
