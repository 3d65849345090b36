from __future__ import annotations
import time

import numpy as np
import pytest

from app.config.settings import RunConfig
from app.errors import UnknownStageError
from app.parallax.engine import flow_from_depth
from app.pipeline.graph import build_graph, route_by_stage, run_pipeline


@pytest.fixture(scope="module")
def oracle(scene_pair):
    pair = scene_pair
    _, S, _ = flow_from_depth(pair.target.depth, pair.K, pair.pose_s_to_t, pair.plane, pair.epipole)
    return dict(K=pair.K, pose_s_to_t=pair.pose_s_to_t, plane=pair.plane, target=pair.target.image,
                source=pair.source.image, depth_mono=pair.target.depth, flowscale=S)


@pytest.fixture(scope="module")
def homo_run(oracle):
    events = []
    final = run_pipeline(**oracle, stage="homo", run_id="run-homo", on_event=events.append)
    return final, events


@pytest.fixture(scope="module")
def distill_run(oracle):
    return run_pipeline(**oracle, stage="distill")


def test_graph_compiles():
    graph = build_graph()
    assert {"warp", "parallax", "synthesis", "masks", "losses", "distill", "total"} <= set(graph.get_graph().nodes)


def test_route_by_stage():
    assert route_by_stage({"stage": "distill"}) == "distill"
    assert route_by_stage({"stage": "early"}) == "total"
    assert route_by_stage({"stage": "homo"}) == "total"


def test_homo_run_events_in_order(homo_run):
    final, events = homo_run
    types = [e["type"] for e in events]
    assert types == ["warp_complete", "parallax_complete", "synthesis_complete", "masks_complete",
                     "losses_complete", "run_complete"]
    assert all(e["run_id"] == "run-homo" for e in events)
    assert [e["type"] for e in final["events"]] == types
    assert final["status"] == "complete" and final["current_node"] == "total"


def test_homo_total_composes_stage_terms(homo_run):
    final, _ = homo_run
    total = final["total"]
    assert set(total.breakdown) == {"mono", "res", "pp", "homo", "smooth"}
    assert total.value == pytest.approx(sum(total.breakdown.values()))
    assert "consist" not in final["losses"]


def test_oracle_inputs_give_small_losses(homo_run):
    final, _ = homo_run
    losses = final["losses"]
    assert losses["homo"].value < 1e-2
    assert losses["mono"].value < 0.05
    assert losses["pp"].value < 0.05
    assert not losses["homo"].empty_mask


def test_parallax_depth_matches_mono_depth_on_oracle(homo_run, oracle):
    final, _ = homo_run
    d_pp, d_mono = final["depth_pp"], oracle["depth_mono"]
    assert np.array_equal(d_pp.valid, d_mono.valid)
    rel = np.abs(d_pp.values - d_mono.values)[d_mono.valid] / d_mono.values[d_mono.valid]
    assert rel.max() < 1e-6
    # oracle flow and oracle depth agree everywhere both are defined
    assert np.array_equal(final["masks"]["certainty"], d_mono.valid)
    assert final["masks"]["static"].sum() == d_mono.count


def test_distill_adds_consistency_terms(distill_run):
    losses = distill_run["losses"]
    assert {"consist", "mono_static"} <= set(losses)
    assert losses["consist"].value < 1e-6
    assert set(distill_run["total"].breakdown) == {"mono", "homo", "consist", "smooth"}
    assert distill_run["total"].breakdown["mono"] == losses["mono_static"].value
    assert [e["type"] for e in distill_run["events"]][-2:] == ["distill_complete", "run_complete"]


def test_certainty_mask_can_be_disabled(oracle):
    final = run_pipeline(**oracle, stage="early", config=RunConfig(use_certainty_mask=False))
    assert final["masks"]["certainty"].all()
    assert set(final["total"].breakdown) == {"mono", "res", "pp", "smooth"}


def test_multiscale_mono_reports_each_scale(oracle):
    final = run_pipeline(**oracle, config=RunConfig(scales=2))
    mono = final["losses"]["mono"]
    assert set(mono.breakdown) == {"scale0", "scale1"}
    assert mono.value == pytest.approx((mono.breakdown["scale0"] + mono.breakdown["scale1"]) / 2)


def test_unknown_stage_rejected_before_running(oracle):
    with pytest.raises(UnknownStageError):
        run_pipeline(**oracle, stage="warmup")


def test_single_thread_pipeline_is_fast(oracle):
    run_pipeline(**oracle, stage="homo")
    t0 = time.perf_counter()
    run_pipeline(**oracle, stage="homo", config=RunConfig(threads=1))
    assert time.perf_counter() - t0 < 3.0
