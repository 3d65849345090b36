"""
Planar-parallax algebra: flowscale S, structure γ, residual flow and depth.

With a = T_z / h_c (T the source camera centre in the target frame) a pixel of
structure γ moves along the epipolar line by

    u_res(p) = S(p)·(p − e_t),      S = γa / (1 − γa),      γ = S/(S + 1) · h_c/T_z

and its depth follows from the plane: D = h_c / (γ + Nᵀ·K⁻¹p̃).

The target pixel p shows the same scene point as the homography-warped source
at p + u_res(p); Î_t^res samples there. Pixels with γa ≥ 1 (the point would
sit behind the moving camera's plane) are invalid, never extrapolated.
"""

from __future__ import annotations

import numpy as np

from app.errors import DegenerateBaselineError, DomainError
from app.geometry.core import CameraIntrinsics, Epipole, GroundPlane, RigidPose, invert_pose, plane_homography
from app.geometry.fields import (
    DepthField, FlowScaleField, ResidualFlowField, ScalarField, StructureField, require_same_shape,
)
from app.sampling.warp import depth_grid
from app.utils.log import log

F_MIN = -100.0
F_MAX = 100.0
EPIPOLE_RADIUS = 2.0
CERTAINTY_EPS = 5.0
_TZ_TOL = 1e-9
_DENOM_TOL = 1e-9


def parallax_ratio(t_z: float, plane: GroundPlane) -> float:
    """a = T_z / h_c."""
    if abs(t_z) < _TZ_TOL:
        raise DegenerateBaselineError(f"|T_z| = {abs(t_z):.3g} m is below {_TZ_TOL:g}; residual flow is undefined")
    return float(t_z) / plane.height


def _pixel_offsets(shape: tuple[int, int], e: Epipole) -> np.ndarray:
    if e.at_infinity:
        raise DegenerateBaselineError("epipole at infinity: residual flow needs T_z != 0")
    v, u = np.mgrid[0:shape[0], 0:shape[1]].astype(np.float64)
    return np.stack([u - e.u, v - e.v], axis=-1)


# ---------------------------------------------------------------------------
# S ↔ γ
# ---------------------------------------------------------------------------

def flowscale_from_gamma(gamma: StructureField, t_z: float, plane: GroundPlane,
                         f_min: float = F_MIN, f_max: float = F_MAX) -> FlowScaleField:
    a = parallax_ratio(t_z, plane)
    ga = gamma.values * a
    denom = 1.0 - ga
    ok = gamma.valid & (np.abs(denom) >= _DENOM_TOL) & (ga < 1.0)
    S = np.where(ok, ga / np.where(ok, denom, 1.0), 0.0)
    return FlowScaleField(S, ok, f_min=f_min, f_max=f_max)


def gamma_from_flowscale(S: FlowScaleField, t_z: float, plane: GroundPlane) -> StructureField:
    a = parallax_ratio(t_z, plane)
    denom = S.values + 1.0
    ok = S.valid & (np.abs(denom) >= _DENOM_TOL)
    ratio = S.values / np.where(ok, denom, 1.0)
    return StructureField(np.where(ok, ratio / a, 0.0), ok)


# ---------------------------------------------------------------------------
# S ↔ u_res
# ---------------------------------------------------------------------------

def residual_flow_from_flowscale(S: FlowScaleField, e: Epipole) -> ResidualFlowField:
    d = _pixel_offsets(S.shape, e)
    return ResidualFlowField(S.values[..., None] * d, S.valid)


def flowscale_from_residual_flow(u: ResidualFlowField, e: Epipole, radius: float = EPIPOLE_RADIUS,
                                 f_min: float = F_MIN, f_max: float = F_MAX) -> FlowScaleField:
    """
    Least-squares scalar S with u ≈ S·(p − e_t).

    `residual` holds the flow magnitude orthogonal to (p − e_t); pixels within
    `radius` px of the epipole are invalid.
    """
    d = _pixel_offsets(u.shape, e)
    n2 = (d ** 2).sum(axis=-1)
    ok = u.valid & (n2 > radius * radius)
    safe = np.where(ok, n2, 1.0)
    S = (u.values * d).sum(axis=-1) / safe
    cross = u.values[..., 0] * d[..., 1] - u.values[..., 1] * d[..., 0]
    residual = np.where(ok, np.abs(cross) / np.sqrt(safe), 0.0)
    return FlowScaleField(np.where(ok, S, 0.0), ok, f_min=f_min, f_max=f_max, residual=residual)


# ---------------------------------------------------------------------------
# γ ↔ depth
# ---------------------------------------------------------------------------

def _plane_term(K: CameraIntrinsics, plane: GroundPlane, shape: tuple[int, int]) -> np.ndarray:
    rays = K.pixel_rays()
    require_same_shape("field vs camera", shape, rays.shape[:2])
    return rays @ plane.normal


def depth_from_gamma(gamma: StructureField, K: CameraIntrinsics, plane: GroundPlane) -> DepthField:
    denom = gamma.values + _plane_term(K, plane, gamma.shape)
    ok = gamma.valid & (denom > 1e-12)
    return DepthField(np.where(ok, plane.height / np.where(ok, denom, 1.0), 0.0), ok)


def gamma_from_depth(depth: DepthField, K: CameraIntrinsics, plane: GroundPlane) -> StructureField:
    """γ = h_c/D − Nᵀ·K⁻¹p̃; γ·D is the height of the point above the plane."""
    term = _plane_term(K, plane, depth.shape)
    safe = np.where(depth.valid, depth.values, 1.0)
    return StructureField(np.where(depth.valid, plane.height / safe - term, 0.0), depth.valid)


def flow_from_depth(depth: DepthField, K: CameraIntrinsics, pose_s_to_t: RigidPose, plane: GroundPlane,
                    e: Epipole, f_min: float = F_MIN, f_max: float = F_MAX,
                    ) -> tuple[StructureField, FlowScaleField, ResidualFlowField]:
    """Depth → γ → S → u_res for the pair described by pose_s_to_t."""
    gamma = gamma_from_depth(depth, K, plane)
    S = flowscale_from_gamma(gamma, float(pose_s_to_t.translation[2]), plane, f_min, f_max)
    return gamma, S, residual_flow_from_flowscale(S, e)


# ---------------------------------------------------------------------------
# Bins
# ---------------------------------------------------------------------------

def bin_flowscale(raw: np.ndarray | ScalarField, f_min: float = F_MIN, f_max: float = F_MAX) -> FlowScaleField:
    """Map a [0, 1] output to S = f_min + raw·(f_max − f_min). Out-of-range raw values are clamped."""
    if not f_min < f_max:
        raise DomainError(f"f_min must be below f_max, got {f_min} and {f_max}")
    if isinstance(raw, ScalarField):
        values, valid = raw.values, raw.valid
    else:
        values = np.asarray(raw, dtype=np.float64)
        valid = np.isfinite(values)
        values = np.where(valid, values, 0.0)
    outside = valid & ((values < 0.0) | (values > 1.0))
    if outside.any():
        log("PARALLAX", "raw flowscale outside [0, 1] clamped", icon="⚠️", clamped=int(outside.sum()))
    values = np.clip(values, 0.0, 1.0)
    return FlowScaleField(f_min + values * (f_max - f_min), valid, f_min=f_min, f_max=f_max)


def unbin_flowscale(S: FlowScaleField) -> ScalarField:
    return ScalarField((S.values - S.f_min) / (S.f_max - S.f_min), S.valid)


# ---------------------------------------------------------------------------
# Certainty
# ---------------------------------------------------------------------------

def certainty_mask(u_res: ResidualFlowField, depth_pp: DepthField, K: CameraIntrinsics,
                   pose_t_to_s: RigidPose, plane: GroundPlane, eps: float = CERTAINTY_EPS) -> np.ndarray:
    """
    1 where the flow-implied and depth-implied correspondences agree within eps px.

    Both are compared in the homography-aligned frame: p + u_res(p) against
    H_s→t·proj(D_pp(p), pose_t→s).
    """
    if not eps > 0:
        raise DomainError(f"certainty threshold must be positive, got {eps}")
    require_same_shape("flow vs depth", u_res.shape, depth_pp.shape)
    v, u = np.mgrid[0:u_res.shape[0], 0:u_res.shape[1]].astype(np.float64)
    q_flow = np.stack([u, v], axis=-1) + u_res.values

    reproj = depth_grid(depth_pp, K, pose_t_to_s, source_shape=(np.inf, np.inf))
    H = plane_homography(K, invert_pose(pose_t_to_s), plane)
    q_depth, in_front = H.apply(reproj.coords)

    gap = np.linalg.norm(q_flow - q_depth, axis=-1)
    return u_res.valid & reproj.valid & in_front & (gap <= eps)
