from __future__ import annotations

import numpy as np
import pytest

from app.errors import DomainError, ShapeMismatchError
from app.geometry.core import Homography, RigidPose
from app.geometry.fields import (DepthField, FlowScaleField, ImageBuffer, ResidualFlowField, ScalarField,
                                 require_same_shape)
from app.sampling.warp import (SampleGrid, area_downsample, bilinear_sample, depth_grid, depth_pyramid,
                               homography_grid, image_pyramid, synthesize_from_depth,
                               synthesize_from_residual_flow, warp_by_homography)


def _noise(h=20, w=30, c=1, seed=0) -> ImageBuffer:
    return ImageBuffer(np.random.default_rng(seed).uniform(0, 1, size=(h, w, c)))


def _ramp(h=20, w=30) -> ImageBuffer:
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    return ImageBuffer(((u + 2 * v) / (w + 2 * h))[..., None])


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------

def test_fields_mark_non_finite_invalid_and_store_zero():
    values = np.array([[1.0, np.inf], [np.nan, 2.0]])
    f = ScalarField(values)
    assert f.valid.tolist() == [[True, False], [False, True]]
    assert np.all(np.isfinite(f.values))
    assert f.values[0, 1] == 0.0
    with pytest.raises(ValueError):
        f.values[0, 0] = 5.0


def test_depth_field_requires_positive_depth():
    d = DepthField(np.array([[1.0, 0.0], [-2.0, 3.0]]))
    assert d.valid.tolist() == [[True, False], [False, True]]
    assert d.count == 2


def test_flowscale_bounds_validated():
    with pytest.raises(DomainError):
        FlowScaleField(np.zeros((2, 2)), f_min=1.0, f_max=1.0)


def test_image_buffer_shapes():
    assert ImageBuffer(np.zeros((4, 5))).shape == (4, 5)
    assert ImageBuffer(np.zeros((4, 5, 3))).channels == 3
    with pytest.raises(DomainError):
        ImageBuffer(np.zeros((4, 5, 2)))
    with pytest.raises(DomainError):
        ImageBuffer(np.full((2, 2), np.nan))


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeMismatchError) as exc:
        require_same_shape("depth vs image", (4, 5), (5, 4))
    assert "(4, 5)" in str(exc.value) and "(5, 4)" in str(exc.value)
    assert exc.value.shapes == ((4, 5), (5, 4))


# ---------------------------------------------------------------------------
# Bilinear sampling
# ---------------------------------------------------------------------------

def test_identity_grid_is_exact():
    img = _noise(c=3)
    out, ok = bilinear_sample(img, SampleGrid.identity(img.shape))
    assert ok.all()
    assert np.array_equal(out.data, img.data)


def test_integer_shift_copies_pixels():
    img = _noise()
    out, ok = synthesize_from_residual_flow(img, ResidualFlowField.uniform(img.shape, 1.0, 0.0))
    assert np.array_equal(out.data[:, :-1], img.data[:, 1:])
    assert ok[:, :-1].all() and not ok[:, -1].any()
    assert np.all(out.data[:, -1] == 0.0)


def test_bilinear_is_exact_on_linear_images():
    img = _ramp()
    flow = ResidualFlowField.uniform(img.shape, 0.5, 0.25)
    out, ok = synthesize_from_residual_flow(img, flow)
    v, u = np.mgrid[0:20, 0:30].astype(np.float64)
    expected = ((u + 0.5) + 2 * (v + 0.25)) / 70.0
    np.testing.assert_allclose(out.data[..., 0][ok], expected[ok], atol=1e-12)
    assert ok[:-1, :-1].all()


def test_out_of_bounds_samples_are_zero_and_invalid():
    img = _noise()
    coords = np.full((20, 30, 2), -3.0)
    grid = SampleGrid.build(coords, img.shape)
    out, ok = bilinear_sample(img, grid)
    assert not ok.any()
    assert np.all(out.data == 0.0)


def test_source_validity_propagates_through_nonzero_weights():
    img = _noise()
    source_valid = np.ones(img.shape, dtype=bool)
    source_valid[5, 5] = False
    coords = np.array([[[4.0, 5.0], [5.0, 5.0], [4.5, 5.0], [4.5, 4.5], [3.0, 3.0]]])
    out, ok = bilinear_sample(img, SampleGrid.build(coords, img.shape), source_valid)
    assert ok.tolist() == [[True, False, False, False, True]]


def test_bottom_right_corner_is_reachable():
    img = _noise()
    coords = np.array([[[29.0, 19.0]]])
    out, ok = bilinear_sample(img, SampleGrid.build(coords, img.shape))
    assert ok.all()
    assert out.data[0, 0, 0] == img.data[19, 29, 0]


def test_sampling_is_bit_identical_across_threads():
    img = _noise(h=64, w=48, c=3, seed=3)
    rng = np.random.default_rng(4)
    flow = ResidualFlowField(rng.uniform(-3, 3, size=(64, 48, 2)))
    single = synthesize_from_residual_flow(img, flow, threads=1)
    multi = synthesize_from_residual_flow(img, flow, threads=4)
    assert np.array_equal(single[0].data, multi[0].data)
    assert np.array_equal(single[1], multi[1])


# ---------------------------------------------------------------------------
# Warps
# ---------------------------------------------------------------------------

def test_identity_homography_returns_source():
    img = _noise(c=3)
    out, ok = warp_by_homography(img, Homography(np.eye(3)))
    assert ok.all()
    np.testing.assert_allclose(out.data, img.data, atol=1e-12)


def test_translation_homography_shifts_image():
    img = _noise()
    H = Homography(np.array([[1.0, 0.0, -2.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))
    out, ok = warp_by_homography(img, H)
    # target(u) = source(u + 2)
    np.testing.assert_allclose(out.data[:, :-2], img.data[:, 2:], atol=1e-12)
    assert not ok[:, -2:].any()


def test_depth_grid_identity_pose(small_K):
    depth = DepthField(np.full(small_K.shape, 7.0))
    grid = depth_grid(depth, small_K, RigidPose.identity())
    assert grid.valid.all()
    np.testing.assert_allclose(grid.coords, small_K.pixel_grid(), atol=1e-12)


def test_depth_synthesis_rejects_points_behind_source(small_K):
    depth = DepthField(np.full(small_K.shape, 1.0))
    pose_t_to_s = RigidPose(np.eye(3), np.array([0.0, 0.0, -2.0]))
    _, ok = synthesize_from_depth(ImageBuffer(np.ones(small_K.shape)), depth, small_K, pose_t_to_s)
    assert not ok.any()


def test_oracle_depth_synthesis_reconstructs_static_scene(scene_pair):
    K = scene_pair.K
    out, ok = synthesize_from_depth(scene_pair.source.image, scene_pair.target.depth, K,
                                    scene_pair.pose_t_to_s)
    sel = ok & scene_pair.static_visible
    assert sel.sum() > 0.4 * sel.size
    assert np.abs(out.data - scene_pair.target.image.data)[sel].mean() < 0.02


# ---------------------------------------------------------------------------
# Pyramid
# ---------------------------------------------------------------------------

def test_area_downsample_averages_blocks():
    values = np.arange(16, dtype=np.float64).reshape(4, 4)
    out, ok = area_downsample(values)
    np.testing.assert_allclose(out, [[2.5, 4.5], [10.5, 12.5]])
    assert ok.all()


def test_area_downsample_block_needs_all_four_valid():
    valid = np.ones((4, 4), dtype=bool)
    valid[0, 1] = False
    out, ok = area_downsample(np.ones((4, 4)), valid)
    assert ok.tolist() == [[False, True], [True, True]]
    assert out[0, 0] == 0.0


def test_pyramid_shapes(kitti_K):
    img = ImageBuffer(np.zeros(kitti_K.shape))
    shapes = [level.shape for level in image_pyramid(img, 4)]
    assert shapes == [(192, 640), (96, 320), (48, 160), (24, 80)]
    for level, K_l in enumerate(kitti_K.scaled(0.5 ** k) for k in range(4)):
        assert K_l.shape == shapes[level]


def test_depth_pyramid_keeps_validity():
    d = np.ones((8, 8))
    d[0, 0] = 0.0
    levels = depth_pyramid(DepthField(d), 3)
    assert [lv.shape for lv in levels] == [(8, 8), (4, 4), (2, 2)]
    assert not levels[1].valid[0, 0] and not levels[2].valid[0, 0]
    assert levels[2].valid[1, 1]


def _random_grid(shape: tuple[int, int], source: ImageBuffer, seed: int = 5) -> SampleGrid:
    rng = np.random.default_rng(seed)
    u = rng.uniform(0.0, source.width - 1.001, size=shape)
    v = rng.uniform(0.0, source.height - 1.001, size=shape)
    return SampleGrid.build(np.stack([u, v], axis=-1), source.shape)


def test_bilinear_sampling_is_linear_in_the_image():
    a, b = _noise(c=3, seed=1), _noise(c=3, seed=2)
    grid = _random_grid((15, 25), a)
    mixed, ok = bilinear_sample(ImageBuffer(0.3 * a.data + 0.7 * b.data), grid)
    out_a, _ = bilinear_sample(a, grid)
    out_b, _ = bilinear_sample(b, grid)
    assert ok.all()
    np.testing.assert_allclose(mixed.data, 0.3 * out_a.data + 0.7 * out_b.data, atol=1e-12)


def test_bilinear_sample_lies_between_its_neighbours():
    img = _noise(seed=6)
    grid = _random_grid((15, 25), img)
    out, ok = bilinear_sample(img, grid)
    assert ok.all()
    x0 = np.floor(grid.coords[..., 0]).astype(int)
    y0 = np.floor(grid.coords[..., 1]).astype(int)
    d = img.data[..., 0]
    corners = np.stack([d[y0, x0], d[y0, x0 + 1], d[y0 + 1, x0], d[y0 + 1, x0 + 1]])
    assert np.all(out.data[..., 0] >= corners.min(axis=0) - 1e-12)
    assert np.all(out.data[..., 0] <= corners.max(axis=0) + 1e-12)


def test_homography_then_inverse_restores_a_smooth_image():
    v, u = np.mgrid[0:60, 0:80].astype(np.float64)
    img = ImageBuffer(0.5 + 0.25 * np.sin(u / 7.0) * np.cos(v / 5.0))
    H = Homography(np.array([[1.02, 0.01, -1.5], [-0.01, 0.99, 0.8], [1e-5, 0.0, 1.0]]))
    warped, warped_ok = warp_by_homography(img, H)
    back, ok = bilinear_sample(warped, homography_grid(H.inverse(), img.shape, img.shape), warped_ok)
    assert ok.sum() > 0.6 * ok.size
    err = np.abs(back.data - img.data)[..., 0][ok]
    assert err.mean() < 2e-3
    assert err.max() < 5e-3
