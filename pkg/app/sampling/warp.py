"""
Bilinear sampling and the three view-synthesis warps.

All warps are backward maps: every output pixel p looks up a coordinate in the
image being sampled, so the output is defined on the target lattice and pixels
whose coordinate falls outside the image are zero with validity false.

  warp_by_homography             I_s^w(p)  = I_s⟨H⁻¹·p⟩
  synthesize_from_depth          Î_t^d(p)  = I_s⟨proj(D_t(p), pose_t→s)⟩
  synthesize_from_residual_flow  Î_t^res(p) = I_s^w⟨p + u_res(p)⟩

Usage:
    warped, valid = warp_by_homography(source, plane_homography(K, pose, plane))
"""

from __future__ import annotations
from dataclasses import dataclass

import numpy as np

from app.geometry.core import CameraIntrinsics, Homography, RigidPose
from app.geometry.fields import DepthField, ImageBuffer, ResidualFlowField, require_same_shape
from app.utils.parallel import map_rows

_EDGE_TOL = 1e-9


# ---------------------------------------------------------------------------
# Sample grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SampleGrid:
    """(H, W, 2) sampling coordinates (u, v) in source pixels plus validity."""
    coords: np.ndarray
    valid: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.coords.shape[:2]

    @classmethod
    def build(cls, coords: np.ndarray, source_shape: tuple[int, int],
              valid: np.ndarray | None = None) -> SampleGrid:
        """Clear validity wherever coords leave [0, W−1]×[0, H−1] (with edge tolerance)."""
        coords = np.asarray(coords, dtype=np.float64)
        h, w = source_shape
        u, v = coords[..., 0], coords[..., 1]
        inside = np.isfinite(u) & np.isfinite(v)
        inside &= (u >= -_EDGE_TOL) & (u <= w - 1 + _EDGE_TOL)
        inside &= (v >= -_EDGE_TOL) & (v <= h - 1 + _EDGE_TOL)
        if valid is not None:
            inside &= np.asarray(valid, dtype=bool)
        coords = np.where(inside[..., None], coords, 0.0)
        return cls(coords, inside)

    @classmethod
    def identity(cls, shape: tuple[int, int]) -> SampleGrid:
        v, u = np.mgrid[0:shape[0], 0:shape[1]].astype(np.float64)
        return cls.build(np.stack([u, v], axis=-1), shape)


def _pixel_grid(shape: tuple[int, int]) -> np.ndarray:
    v, u = np.mgrid[0:shape[0], 0:shape[1]].astype(np.float64)
    return np.stack([u, v], axis=-1)


# ---------------------------------------------------------------------------
# Bilinear sampling
# ---------------------------------------------------------------------------

def bilinear_sample(image: ImageBuffer, grid: SampleGrid, source_valid: np.ndarray | None = None,
                    threads: int = 1) -> tuple[ImageBuffer, np.ndarray]:
    """
    Sample `image` at every grid coordinate.

    Output pixels are convex combinations of the 4 lattice neighbours. If
    `source_valid` is given, an output pixel is valid only if every neighbour
    with a non-zero weight is valid in the source.
    """
    data = image.data
    h, w = image.shape
    gh, gw = grid.shape
    coords, grid_valid = grid.coords, grid.valid
    src_ok = None if source_valid is None else np.asarray(source_valid, dtype=bool)
    if src_ok is not None:
        require_same_shape("source validity", src_ok.shape, image.shape)

    def block(r0: int, r1: int) -> tuple[np.ndarray, np.ndarray]:
        u = np.clip(coords[r0:r1, :, 0], 0.0, w - 1)
        v = np.clip(coords[r0:r1, :, 1], 0.0, h - 1)
        x0 = np.minimum(np.floor(u).astype(np.intp), max(w - 2, 0))
        y0 = np.minimum(np.floor(v).astype(np.intp), max(h - 2, 0))
        x1 = np.minimum(x0 + 1, w - 1)
        y1 = np.minimum(y0 + 1, h - 1)
        fx = (u - x0)[..., None]
        fy = (v - y0)[..., None]
        top = data[y0, x0] * (1.0 - fx) + data[y0, x1] * fx
        bottom = data[y1, x0] * (1.0 - fx) + data[y1, x1] * fx
        out = top * (1.0 - fy) + bottom * fy
        ok = grid_valid[r0:r1].copy()
        if src_ok is not None:
            wx, wy = fx[..., 0], fy[..., 0]
            ok &= src_ok[y0, x0] | ((1.0 - wx) * (1.0 - wy) == 0)
            ok &= src_ok[y0, x1] | (wx * (1.0 - wy) == 0)
            ok &= src_ok[y1, x0] | ((1.0 - wx) * wy == 0)
            ok &= src_ok[y1, x1] | (wx * wy == 0)
        out = np.where(ok[..., None], out, 0.0)
        return out, ok

    out, ok = map_rows(block, gh, threads)
    return ImageBuffer(out.reshape(gh, gw, image.channels)), ok


# ---------------------------------------------------------------------------
# Warps
# ---------------------------------------------------------------------------

def homography_grid(H: Homography, shape: tuple[int, int], source_shape: tuple[int, int]) -> SampleGrid:
    """Where each target pixel samples the source under the plane homography H (source→target)."""
    coords, in_front = H.inverse().apply(_pixel_grid(shape))
    return SampleGrid.build(coords, source_shape, in_front)


def warp_by_homography(source: ImageBuffer, H: Homography, shape: tuple[int, int] | None = None,
                       threads: int = 1) -> tuple[ImageBuffer, np.ndarray]:
    """Align the source with the target on the road plane (I_s^w)."""
    shape = shape or source.shape
    return bilinear_sample(source, homography_grid(H, shape, source.shape), threads=threads)


def depth_grid(depth_t: DepthField, K: CameraIntrinsics, pose_t_to_s: RigidPose,
               source_shape: tuple[int, int] | None = None) -> SampleGrid:
    """proj(D_t, R_t→s, T_t→s): source coordinates of every target pixel with valid depth."""
    rays = K.pixel_rays()
    require_same_shape("depth vs camera", depth_t.shape, rays.shape[:2])
    points = rays * depth_t.values[..., None]
    moved = pose_t_to_s.apply(points)
    z = moved[..., 2]
    ahead = depth_t.valid & (z > 1e-9)
    z_safe = np.where(ahead, z, 1.0)
    u = K.fx * moved[..., 0] / z_safe + K.cx
    v = K.fy * moved[..., 1] / z_safe + K.cy
    return SampleGrid.build(np.stack([u, v], axis=-1), source_shape or K.shape, ahead)


def synthesize_from_depth(source: ImageBuffer, depth_t: DepthField, K: CameraIntrinsics,
                          pose_t_to_s: RigidPose, threads: int = 1) -> tuple[ImageBuffer, np.ndarray]:
    """View synthesis by depth reprojection (Î_t^d)."""
    return bilinear_sample(source, depth_grid(depth_t, K, pose_t_to_s, source.shape), threads=threads)


def synthesize_from_residual_flow(warped_source: ImageBuffer, u_res: ResidualFlowField,
                                  warped_valid: np.ndarray | None = None,
                                  threads: int = 1) -> tuple[ImageBuffer, np.ndarray]:
    """View synthesis by residual flow (Î_t^res): sample I_s^w at p + u_res(p)."""
    require_same_shape("residual flow vs image", u_res.shape, warped_source.shape)
    coords = _pixel_grid(u_res.shape) + u_res.values
    grid = SampleGrid.build(coords, warped_source.shape, u_res.valid)
    return bilinear_sample(warped_source, grid, warped_valid, threads=threads)


# ---------------------------------------------------------------------------
# Pyramid
# ---------------------------------------------------------------------------

def area_downsample(values: np.ndarray, valid: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Factor-2 box average over the leading two axes; a block is valid if all 4 inputs are."""
    values = np.asarray(values, dtype=np.float64)
    h, w = values.shape[0] // 2 * 2, values.shape[1] // 2 * 2
    v = values[:h, :w]
    out = (v[0::2, 0::2] + v[0::2, 1::2] + v[1::2, 0::2] + v[1::2, 1::2]) / 4.0
    if valid is None:
        return out, np.ones(out.shape[:2], dtype=bool)
    m = np.asarray(valid, dtype=bool)[:h, :w]
    ok = m[0::2, 0::2] & m[0::2, 1::2] & m[1::2, 0::2] & m[1::2, 1::2]
    return np.where(ok if out.ndim == 2 else ok[..., None], out, 0.0), ok


def image_pyramid(image: ImageBuffer, levels: int = 4) -> list[ImageBuffer]:
    """Level 0 is the input; each further level halves both sides."""
    pyramid = [image]
    for _ in range(1, levels):
        prev = pyramid[-1]
        if prev.height < 2 or prev.width < 2:
            break
        data, _ = area_downsample(prev.data)
        pyramid.append(ImageBuffer(data))
    return pyramid


def depth_pyramid(depth: DepthField, levels: int = 4) -> list[DepthField]:
    pyramid = [depth]
    for _ in range(1, levels):
        prev = pyramid[-1]
        if min(prev.shape) < 2:
            break
        values, ok = area_downsample(prev.values, prev.valid)
        pyramid.append(DepthField(values, ok))
    return pyramid
