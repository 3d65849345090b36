from __future__ import annotations
import time

import numpy as np
import pytest

from app.errors import DomainError, EmptySourcesError, UnknownStageError
from app.geometry.core import GroundPlane, plane_homography
from app.geometry.fields import DepthField, ImageBuffer, ResidualFlowField
from app.parallax.engine import flow_from_depth
from app.photometric.losses import (LossReport, PhotometricParams, TrainingStage, auto_mask, average_reports,
                                    loss_consist, loss_homo, loss_mono, loss_res, min_reprojection,
                                    parse_stage, photometric_error, schedule_total, smoothness_loss,
                                    ssim_map, stage_for_epoch, static_mask)
from app.sampling.warp import synthesize_from_depth, synthesize_from_residual_flow, warp_by_homography
from app.surface.normals import trapezoid_road_mask
from app.synth.scenes import default_scene, forward_poses, make_pair
from tests.conftest import uniform_surface


def _noise(h=24, w=32, c=3, seed=0) -> ImageBuffer:
    return ImageBuffer(np.random.default_rng(seed).uniform(0, 1, size=(h, w, c)))


def _depth(h=32, w=32, seed=0) -> DepthField:
    return DepthField(np.random.default_rng(seed).uniform(2.0, 40.0, size=(h, w)))


# ---------------------------------------------------------------------------
# pe / SSIM
# ---------------------------------------------------------------------------

def test_pe_of_identical_images_is_zero():
    img = _noise()
    assert np.all(photometric_error(img, img) == 0.0)
    assert np.all(ssim_map(img, img) == 1.0)


def test_pe_grows_with_difference():
    img = _noise(c=1)
    shifted = ImageBuffer(np.clip(img.data + 0.1, 0, 1))
    far = ImageBuffer(np.clip(img.data + 0.3, 0, 1))
    assert photometric_error(img, shifted).mean() < photometric_error(img, far).mean()


def test_params_validated():
    with pytest.raises(DomainError):
        PhotometricParams(alpha=1.5)
    with pytest.raises(DomainError):
        PhotometricParams(ssim_window=4)


def test_min_reprojection_takes_per_pixel_minimum():
    target = _noise(c=1)
    good = ImageBuffer(target.data.copy())
    bad = _noise(c=1, seed=9)
    best, ok = min_reprojection(target, [bad, good])
    assert ok.all()
    assert np.all(best == 0.0)


def test_min_reprojection_skips_invalid_candidates():
    target = _noise(c=1)
    valid = np.zeros(target.shape, dtype=bool)
    best, ok = min_reprojection(target, [ImageBuffer(target.data.copy())], [valid])
    assert not ok.any()
    assert np.all(best == 0.0)


def test_min_reprojection_needs_a_source():
    with pytest.raises(EmptySourcesError):
        min_reprojection(_noise(), [])


# ---------------------------------------------------------------------------
# Masks
# ---------------------------------------------------------------------------

def test_auto_mask_drops_pixels_matched_by_the_raw_source():
    target = _noise(c=1)
    # a source identical to the target: the identity reprojection already wins
    mask = auto_mask(target, [_noise(c=1, seed=4)], [ImageBuffer(target.data.copy())])
    assert not mask.any()


def test_auto_mask_keeps_pixels_explained_by_the_warp():
    target = _noise(c=1)
    mask = auto_mask(target, [ImageBuffer(target.data.copy())], [_noise(c=1, seed=4)])
    assert mask.all()
    depth_valid = np.ones(target.shape, dtype=bool)
    depth_valid[0] = False
    mask = auto_mask(target, [ImageBuffer(target.data.copy())], [_noise(c=1, seed=4)], depth_valid=depth_valid)
    assert not mask[0].any() and mask[1:].all()


@pytest.mark.parametrize("k, expected", [(1.1, True), (1 / 1.1, True), (1.25, False), (0.8, False)])
def test_static_mask_threshold(k, expected):
    dp = _depth()
    dm = DepthField(dp.values * k)
    mask = static_mask(dm, dp, delta=0.2)
    assert mask.all() if expected else not mask.any()


def test_static_mask_excludes_invalid_depth():
    dp = _depth()
    values = dp.values.copy()
    values[3, 3] = 0.0
    assert not static_mask(DepthField(values), dp)[3, 3]


# ---------------------------------------------------------------------------
# Losses on the oracle pair
# ---------------------------------------------------------------------------

def _homo_loss(pair, plane: GroundPlane, flat: np.ndarray) -> float:
    H = plane_homography(pair.K, pair.pose_s_to_t, plane)
    warped, ok = warp_by_homography(pair.source.image, H)
    return loss_homo(warped, pair.target.image, flat, valid=ok).value


def test_true_plane_homography_aligns_the_road(scene_pair):
    t0 = time.perf_counter()
    pair = scene_pair
    flat = ((pair.target.surface == 0) & uniform_surface(pair.target.surface, 2) & pair.visibility
            & trapezoid_road_mask(pair.K.width, pair.K.height))
    assert flat.sum() > 10_000
    h = pair.plane.height
    best = _homo_loss(pair, pair.plane, flat)
    assert best < 1e-3
    for perturbed in (GroundPlane.level(h * 1.05), GroundPlane.level(h * 0.95),
                      GroundPlane.pitched(h, 1.0), GroundPlane.pitched(h, -1.0)):
        assert _homo_loss(pair, perturbed, flat) > best
    assert time.perf_counter() - t0 < 5.0


def test_loss_report_for_empty_mask_is_zero_not_nan():
    img = _noise()
    report = loss_homo(img, img, np.zeros(img.shape, dtype=bool))
    assert report.value == 0.0
    assert report.empty_mask and report.count == 0


def test_loss_mono_and_res_on_identical_images():
    img = _noise()
    auto = np.ones(img.shape, dtype=bool)
    assert loss_mono(img, img, auto).value == 0.0
    res = loss_res(img, img)
    assert res.value == 0.0 and res.count == img.shape[0] * img.shape[1]


def test_loss_mono_uses_best_source():
    target = _noise(c=1)
    auto = np.ones(target.shape, dtype=bool)
    report = loss_mono([_noise(c=1, seed=2), ImageBuffer(target.data.copy())], target, auto)
    assert report.value == 0.0


def test_loss_consist_ignores_global_scale():
    dm, dp = _depth(seed=1), _depth(seed=2)
    static = np.ones(dm.shape, dtype=bool)
    base = loss_consist(dm, dp, static).value
    assert base > 0
    assert abs(loss_consist(dm.scaled(3.7), dp, static).value - base) < 1e-12
    assert abs(loss_consist(dm, dp.scaled(0.02), static).value - base) < 1e-12


def test_loss_consist_sum_and_normalized():
    dm, dp = _depth(seed=1), _depth(seed=2)
    static = np.zeros(dm.shape, dtype=bool)
    static[:8] = True
    total = loss_consist(dm, dp, static)
    mean = loss_consist(dm, dp, static, normalized=True)
    assert total.reduction == "sum"
    assert mean.value == pytest.approx(total.value / static.sum(), rel=1e-12)


def test_smoothness_of_constant_disparity_is_zero():
    img = _noise()
    report = smoothness_loss(np.full(img.shape, 0.2), img)
    assert report.value == 0.0


def test_smoothness_penalises_edges_less_on_image_edges():
    h, w = 16, 16
    disparity = np.ones((h, w))
    disparity[:, 8:] = 2.0
    flat_img = ImageBuffer(np.full((h, w), 0.5))
    edge = np.full((h, w), 0.0)
    edge[:, 8:] = 1.0
    edge_img = ImageBuffer(edge)
    assert smoothness_loss(disparity, edge_img).value < smoothness_loss(disparity, flat_img).value


def test_smoothness_needs_positive_mean():
    img = _noise()
    with pytest.raises(DomainError):
        smoothness_loss(np.zeros(img.shape), img)


def test_average_reports_keeps_per_scale_values():
    r = average_reports("mono", [LossReport("mono", 0.2), LossReport("mono", 0.4)])
    assert r.value == pytest.approx(0.3)
    assert r.breakdown == {"scale0": 0.2, "scale1": 0.4}


# ---------------------------------------------------------------------------
# Schedule
# ---------------------------------------------------------------------------

_UNIT = {"mono": 1.0, "res": 1.0, "pp": 1.0, "homo": 1.0, "consist": 1.0}


@pytest.mark.parametrize("stage, expected", [("early", 3.0), ("homo", 4.0), ("distill", 3.0)])
def test_schedule_total_on_unit_inputs(stage, expected):
    total = schedule_total(stage, _UNIT)
    assert total.value == expected
    assert total.name == "total" and total.reduction == "sum"


def test_schedule_breakdown_per_stage():
    assert set(schedule_total("early", _UNIT).breakdown) == {"mono", "res", "pp"}
    assert set(schedule_total("homo", _UNIT).breakdown) == {"mono", "res", "pp", "homo"}
    assert set(schedule_total("distill", _UNIT).breakdown) == {"mono", "homo", "consist"}


def test_schedule_weights_smoothness():
    total = schedule_total(TrainingStage.HOMO, {**_UNIT, "smooth": 2.0}, smoothness_weight=1e-3)
    assert total.value == pytest.approx(4.002)
    assert total.breakdown["smooth"] == pytest.approx(2e-3)


def test_distill_prefers_static_masked_mono():
    total = schedule_total("distill", {**_UNIT, "mono_static": 0.5})
    assert total.breakdown["mono"] == 0.5
    assert total.value == 2.5


def test_schedule_reports_missing_component():
    with pytest.raises(DomainError, match="homo"):
        schedule_total("homo", {"mono": 1.0, "res": 1.0, "pp": 1.0})


def test_unknown_stage():
    with pytest.raises(UnknownStageError):
        parse_stage("warmup")
    with pytest.raises(UnknownStageError):
        schedule_total("warmup", _UNIT)
    assert parse_stage("distill") is TrainingStage.DISTILL


@pytest.mark.parametrize("epoch, stage", [(0, "early"), (4, "early"), (5, "homo"), (19, "homo"), (20, "distill")])
def test_stage_for_epoch(epoch, stage):
    assert stage_for_epoch(epoch).value == stage


# ---------------------------------------------------------------------------
# Reference values
# ---------------------------------------------------------------------------

def _pe_reference(a: np.ndarray, b: np.ndarray, params: PhotometricParams) -> np.ndarray:
    """Windowed SSIM + L1 computed pixel by pixel on the interior."""
    h, w = a.shape
    out = np.full((h, w), np.nan)
    for r in range(1, h - 1):
        for c in range(1, w - 1):
            x, y = a[r - 1:r + 2, c - 1:c + 2], b[r - 1:r + 2, c - 1:c + 2]
            mx, my = x.mean(), y.mean()
            vx, vy = ((x - mx) ** 2).mean(), ((y - my) ** 2).mean()
            cxy = ((x - mx) * (y - my)).mean()
            s = ((2 * mx * my + params.c1) * (2 * cxy + params.c2)
                 / ((mx * mx + my * my + params.c1) * (vx + vy + params.c2)))
            s = min(max(s, -1.0), 1.0)
            out[r, c] = params.alpha / 2 * (1 - s) + (1 - params.alpha) * abs(a[r, c] - b[r, c])
    return out


def test_pe_matches_windowed_reference():
    params = PhotometricParams(alpha=0.85)
    a, b = _noise(h=12, w=14, c=1, seed=1), _noise(h=12, w=14, c=1, seed=2)
    pe = photometric_error(a, b, params)
    ref = _pe_reference(a.data[..., 0], b.data[..., 0], params)
    np.testing.assert_allclose(pe[1:-1, 1:-1], ref[1:-1, 1:-1], atol=1e-10)


def test_pe_without_ssim_is_the_l1_gap():
    a = ImageBuffer(np.full((6, 7), 0.2))
    b = ImageBuffer(np.full((6, 7), 0.5))
    pe = photometric_error(a, b, PhotometricParams(alpha=0.0))
    np.testing.assert_allclose(pe, 0.3, atol=1e-12)


def test_smoothness_of_a_disparity_ramp():
    # d = 1 + 0.1·col has mean 1.25, so each normalised step is 0.08 and a flat image adds no damping
    d = 1.0 + 0.1 * np.tile(np.arange(6, dtype=np.float64), (5, 1))
    report = smoothness_loss(d, ImageBuffer(np.full((5, 6), 0.5)))
    assert report.value == pytest.approx(0.08, abs=1e-12)
    assert report.count == 20


def test_residual_loss_prefers_the_true_flow(scene_pair):
    pair = scene_pair
    H = plane_homography(pair.K, pair.pose_s_to_t, pair.plane)
    warped, warped_ok = warp_by_homography(pair.source.image, H)
    _, _, flow = flow_from_depth(pair.target.depth, pair.K, pair.pose_s_to_t, pair.plane, pair.epipole)
    wrong = ResidualFlowField(flow.values + np.array([3.0, 0.0]), flow.valid)
    good_img, good_ok = synthesize_from_residual_flow(warped, flow, warped_ok)
    bad_img, bad_ok = synthesize_from_residual_flow(warped, wrong, warped_ok)
    sel = good_ok & bad_ok & pair.static_visible
    assert sel.sum() > 10_000
    good = loss_res(good_img, pair.target.image, valid=sel)
    bad = loss_res(bad_img, pair.target.image, valid=sel)
    assert bad.value > good.value


def test_auto_mask_drops_a_co_moving_box(kitti_K):
    K = kitti_K.scaled(0.5)
    pair = make_pair(default_scene(co_moving=True), *forward_poses(1.65), K, supersample=1)
    synth, ok = synthesize_from_depth(pair.source.image, pair.target.depth, K, pair.pose_t_to_s)
    mask = auto_mask(pair.target.image, [synth], [pair.source.image], warped_valid=[ok])
    box = np.isin(pair.target.surface, [1 + 6 * 3 + f for f in range(6)])
    clean = box & uniform_surface(pair.target.surface, 2)
    assert clean.sum() > 200
    assert not mask[clean].any()
