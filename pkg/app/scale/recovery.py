"""
Metric scale from the known camera mounting height.

Two estimators of the camera height implied by a (possibly scale-ambiguous)
depth map over road pixels:

  ransac  fit a plane to the back-projected road points, height = its offset
  median  median over road pixels of Nᵀ·P_i with the reference normal N

scale = h_pred / h_true, and the corrected depth is D / scale.

Usage:
    est = estimate_scale(depth, K, road, h_true=1.65, method="median")
    metric = recover_and_apply_scale(depth, est.h_pred, est.h_true)
"""

from __future__ import annotations
from dataclasses import dataclass
from typing import Literal

import numpy as np

from app.errors import DegenerateFitError, DomainError, EmptyMaskError
from app.geometry.core import CameraIntrinsics, GroundPlane
from app.geometry.fields import DepthField, require_same_shape
from app.utils.log import log

RANSAC_ITERS = 200
RANSAC_TOL_FRACTION = 0.02

Method = Literal["median", "ransac"]


@dataclass(frozen=True, eq=False)
class PlaneFit:
    plane: GroundPlane
    inlier_ratio: float
    iterations: int
    inliers: np.ndarray


@dataclass(frozen=True)
class ScaleEstimate:
    scale: float
    h_pred: float
    h_true: float
    method: str
    inlier_ratio: float | None = None

    def to_dict(self) -> dict:
        return {"method": self.method, "h_pred": self.h_pred, "h_true": self.h_true,
                "scale": self.scale, "inlier_ratio": self.inlier_ratio}


# ---------------------------------------------------------------------------
# RANSAC
# ---------------------------------------------------------------------------

def _least_squares_plane(points: np.ndarray) -> tuple[np.ndarray, float]:
    centroid = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - centroid, full_matrices=False)
    normal = vt[2]
    return normal, float(normal @ centroid)


def _check_spread(points: np.ndarray) -> None:
    if len(points) < 3:
        raise DegenerateFitError(f"plane fit needs at least 3 points, got {len(points)}")
    sv = np.linalg.svd(points - points.mean(axis=0), compute_uv=False)
    if sv[1] <= 1e-12 * max(sv[0], 1e-300):
        raise DegenerateFitError("points are collinear")


def fit_plane_ransac(points: np.ndarray, iters: int = RANSAC_ITERS, inlier_tol: float = 0.02,
                     seed: int = 0) -> PlaneFit:
    """
    Best 3-point plane by inlier count, refit by least squares on its inliers.

    The returned plane is oriented so that Nᵀ·X = h with h > 0 (camera at the origin).
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    _check_spread(points)
    rng = np.random.default_rng(seed)
    samples = rng.integers(0, len(points), size=(iters, 3))

    p1, p2, p3 = points[samples[:, 0]], points[samples[:, 1]], points[samples[:, 2]]
    normals = np.cross(p2 - p1, p3 - p1)
    lengths = np.linalg.norm(normals, axis=1)

    best_count, best = 0, None
    for i in range(iters):
        if lengths[i] <= 1e-12:
            continue
        n = normals[i] / lengths[i]
        d = n @ p1[i]
        inliers = np.abs(points @ n - d) < inlier_tol
        count = int(inliers.sum())
        if count > best_count:
            best_count, best = count, inliers
    if best is None or best_count < 3:
        raise DegenerateFitError("no non-degenerate 3-point sample found")

    try:
        _check_spread(points[best])
        n, d = _least_squares_plane(points[best])
    except DegenerateFitError:
        raise DegenerateFitError("inlier set of the best sample is degenerate") from None
    if d < 0:
        n, d = -n, -d
    if d <= 0:
        raise DegenerateFitError("fitted plane passes through the camera centre")
    inliers = np.abs(points @ n - d) < inlier_tol
    ratio = float(inliers.sum()) / len(points)
    return PlaneFit(GroundPlane(n / np.linalg.norm(n), d), ratio, iters, inliers)


# ---------------------------------------------------------------------------
# Camera height
# ---------------------------------------------------------------------------

def _road_points(depth: DepthField, K: CameraIntrinsics, mask: np.ndarray) -> np.ndarray:
    rays = K.pixel_rays()
    require_same_shape("depth vs camera", depth.shape, rays.shape[:2])
    require_same_shape("flat mask vs depth", np.shape(mask), depth.shape)
    sel = np.asarray(mask, dtype=bool) & depth.valid
    if not sel.any():
        raise EmptyMaskError("flat mask selects no pixel with valid depth")
    return rays[sel] * depth.values[sel][:, None]


def median_height(points: np.ndarray, plane_normal: np.ndarray) -> float:
    N = np.asarray(plane_normal, dtype=np.float64)
    return float(np.median(points @ (N / np.linalg.norm(N))))


def _height(depth: DepthField, K: CameraIntrinsics, mask: np.ndarray, method: Method,
            plane_normal: np.ndarray, iters: int, inlier_tol: float | None,
            seed: int) -> tuple[float, PlaneFit | None]:
    points = _road_points(depth, K, mask)
    if method == "median":
        return median_height(points, plane_normal), None
    if method == "ransac":
        tol = inlier_tol if inlier_tol is not None else RANSAC_TOL_FRACTION * abs(median_height(points, plane_normal))
        fit = fit_plane_ransac(points, iters, tol, seed)
        if fit.inlier_ratio < 0.5:
            log("SCALE", "low RANSAC inlier ratio", icon="⚠️", inlier_ratio=fit.inlier_ratio)
        return fit.plane.height, fit
    raise DomainError(f"unknown height method '{method}' (expected median or ransac)")


def camera_height_from_depth(depth: DepthField, K: CameraIntrinsics, mask: np.ndarray,
                             method: Method = "median", plane_normal=(0.0, 1.0, 0.0),
                             iters: int = RANSAC_ITERS, inlier_tol: float | None = None,
                             seed: int = 0) -> float:
    """
    Camera height implied by `depth` over the road pixels in `mask`.

    The RANSAC tolerance defaults to 2% of the median-method height, so it
    follows the scale of the depth map.
    """
    h, _ = _height(depth, K, mask, method, np.asarray(plane_normal), iters, inlier_tol, seed)
    return h


def estimate_scale(depth: DepthField, K: CameraIntrinsics, mask: np.ndarray, h_true: float,
                   method: Method = "median", plane_normal=(0.0, 1.0, 0.0),
                   iters: int = RANSAC_ITERS, inlier_tol: float | None = None, seed: int = 0) -> ScaleEstimate:
    if not h_true > 0:
        raise DomainError(f"true camera height must be positive, got {h_true}")
    h_pred, fit = _height(depth, K, mask, method, np.asarray(plane_normal), iters, inlier_tol, seed)
    if not h_pred > 0:
        raise DomainError(f"estimated camera height is not positive ({h_pred:.6g} m)")
    return ScaleEstimate(h_pred / h_true, h_pred, float(h_true), method,
                         fit.inlier_ratio if fit is not None else None)


def recover_and_apply_scale(depth: DepthField, h_pred: float, h_true: float) -> DepthField:
    """Divide depth by h_pred/h_true so its implied camera height becomes h_true."""
    if not (h_pred > 0 and h_true > 0):
        raise DomainError(f"camera heights must be positive, got h_pred={h_pred} h_true={h_true}")
    return DepthField(depth.values / (h_pred / h_true), depth.valid)
