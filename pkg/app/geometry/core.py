"""
Pinhole camera, rigid poses, the ground plane and the plane-induced homography.

Conventions used everywhere in the package:
  - camera frame x-right, y-down, z-forward; integer pixel coordinates are
    pixel centres
  - a relative pose (R, T) maps source-frame points to the target frame,
    X_t = R·X_s + T, so T is the source camera centre seen from the target
  - GroundPlane(N, h) lives in the target frame with Nᵀ·X = h for plane points;
    N points from the camera toward the road, (0, 1, 0) for a level camera

All types are immutable values and every operation is a pure function.
"""

from __future__ import annotations
import math
from dataclasses import dataclass, field

import numpy as np

from app.errors import (
    DomainError, InvalidIntrinsicsError, InvalidPlaneError, InvalidPoseError,
    SingularHomographyError,
)

_ORTHO_TOL = 1e-9
_UNIT_TOL = 1e-12
_DET_TOL = 1e-12
_EPIPOLE_TZ = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# Camera
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidIntrinsicsError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise InvalidIntrinsicsError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidIntrinsicsError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image")

    @classmethod
    def from_matrix(cls, K: np.ndarray, width: int, height: int) -> CameraIntrinsics:
        K = np.asarray(K, dtype=np.float64)
        return cls(float(K[0, 0]), float(K[1, 1]), float(K[0, 2]), float(K[1, 2]), int(width), int(height))

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    @property
    def inverse(self) -> np.ndarray:
        return np.array([[1.0 / self.fx, 0.0, -self.cx / self.fx],
                         [0.0, 1.0 / self.fy, -self.cy / self.fy],
                         [0.0, 0.0, 1.0]])

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def pixel_grid(self) -> np.ndarray:
        """(H, W, 2) array of (u, v) pixel-centre coordinates."""
        v, u = np.mgrid[0:self.height, 0:self.width].astype(np.float64)
        return np.stack([u, v], axis=-1)

    def pixel_rays(self) -> np.ndarray:
        """(H, W, 3) rays K⁻¹·p̃ with unit z, one per pixel."""
        grid = self.pixel_grid()
        x = (grid[..., 0] - self.cx) / self.fx
        y = (grid[..., 1] - self.cy) / self.fy
        return np.stack([x, y, np.ones_like(x)], axis=-1)

    def scaled(self, factor: float) -> CameraIntrinsics:
        """Intrinsics of the image area-resized by `factor` (pyramid levels).

        Pixel centres move as u' = (u + 0.5)·factor − 0.5.
        """
        width = max(1, int(self.width * factor))
        height = max(1, int(self.height * factor))
        return CameraIntrinsics(self.fx * factor, self.fy * factor,
                                (self.cx + 0.5) * factor - 0.5, (self.cy + 0.5) * factor - 0.5,
                                width, height)


def _check_intrinsics(K: CameraIntrinsics) -> None:
    if not (K.fx > 0 and K.fy > 0):
        raise InvalidIntrinsicsError(f"singular intrinsics fx={K.fx} fy={K.fy}")


def project(K: CameraIntrinsics, points: np.ndarray) -> np.ndarray:
    """Project (..., 3) camera-frame points to (..., 2) pixels. Requires z > 0."""
    points = np.asarray(points, dtype=np.float64)
    z = points[..., 2]
    if np.any(~(z > 0)):
        raise DomainError("cannot project points with z <= 0")
    u = K.fx * points[..., 0] / z + K.cx
    v = K.fy * points[..., 1] / z + K.cy
    return np.stack([u, v], axis=-1)


def backproject(K: CameraIntrinsics, pixels: np.ndarray, depth: np.ndarray | float) -> np.ndarray:
    """Lift (..., 2) pixels with z-depth in metres to (..., 3) camera-frame points."""
    pixels = np.asarray(pixels, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(~(depth > 0)):
        raise DomainError("depth must be positive for backprojection")
    x = (pixels[..., 0] - K.cx) / K.fx
    y = (pixels[..., 1] - K.cy) / K.fy
    return np.stack([x * depth, y * depth, np.broadcast_to(depth, x.shape).copy()], axis=-1)


# ---------------------------------------------------------------------------
# Poses
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RigidPose:
    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        T = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        if R.shape != (3, 3) or T.shape != (3,):
            raise InvalidPoseError(f"rotation must be 3x3 and translation 3-vector, got {R.shape} and {T.shape}")
        if not np.all(np.isfinite(R)) or not np.all(np.isfinite(T)):
            raise InvalidPoseError("pose contains non-finite values")
        if np.max(np.abs(R.T @ R - np.eye(3))) > _ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
            raise InvalidPoseError("rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", _frozen(R))
        object.__setattr__(self, "translation", _frozen(T))

    @classmethod
    def identity(cls) -> RigidPose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M: np.ndarray) -> RigidPose:
        """From a 3×4 [R | T] matrix (row-major list of 12 numbers is accepted)."""
        M = np.asarray(M, dtype=np.float64).reshape(3, 4)
        return cls(M[:, :3], M[:, 3])

    @property
    def matrix(self) -> np.ndarray:
        return np.hstack([self.rotation, self.translation[:, None]])

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def inverse(self) -> RigidPose:
        return invert_pose(self)

    def allclose(self, other: RigidPose, atol: float = 1e-9) -> bool:
        return (np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
                and np.allclose(self.translation, other.translation, rtol=0, atol=atol))


def compose_pose(a: RigidPose, b: RigidPose) -> RigidPose:
    """a ∘ b: first apply b, then a."""
    return RigidPose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert_pose(a: RigidPose) -> RigidPose:
    Rt = a.rotation.T
    return RigidPose(Rt, -Rt @ a.translation)


def rotation_x(degrees: float) -> np.ndarray:
    """Camera-to-world rotation about x; positive degrees pitch the optical axis down (toward +y)."""
    t = math.radians(degrees)
    c, s = math.cos(t), math.sin(t)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]])


def rotation_y(degrees: float) -> np.ndarray:
    t = math.radians(degrees)
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


# ---------------------------------------------------------------------------
# Ground plane
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GroundPlane:
    normal: np.ndarray
    height: float

    def __post_init__(self):
        N = np.asarray(self.normal, dtype=np.float64).reshape(-1)
        if N.shape != (3,) or abs(np.linalg.norm(N) - 1.0) > _UNIT_TOL:
            raise InvalidPlaneError(f"plane normal must be a unit 3-vector, got {N.tolist()}")
        if not (self.height > 0):
            raise InvalidPlaneError(f"camera height must be positive, got {self.height}")
        object.__setattr__(self, "normal", _frozen(N))
        object.__setattr__(self, "height", float(self.height))

    @classmethod
    def from_normal(cls, normal, height: float) -> GroundPlane:
        N = np.asarray(normal, dtype=np.float64)
        norm = np.linalg.norm(N)
        if norm == 0:
            raise InvalidPlaneError("plane normal is the zero vector")
        return cls(N / norm, height)

    @classmethod
    def level(cls, height: float) -> GroundPlane:
        return cls(np.array([0.0, 1.0, 0.0]), height)

    @classmethod
    def pitched(cls, height: float, pitch_deg: float) -> GroundPlane:
        """Plane seen by a camera pitched down by pitch_deg (normal rotated, image untouched)."""
        return cls(rotation_x(pitch_deg).T @ np.array([0.0, 1.0, 0.0]), height)

    def transform(self, pose: RigidPose) -> GroundPlane:
        """Express the plane in the frame that `pose` maps into."""
        N = pose.rotation @ self.normal
        return GroundPlane(N / np.linalg.norm(N), self.height + float(N @ pose.translation))


# ---------------------------------------------------------------------------
# Homography / epipole
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Homography:
    matrix: np.ndarray

    def __post_init__(self):
        H = np.asarray(self.matrix, dtype=np.float64)
        if H.shape != (3, 3) or not np.all(np.isfinite(H)):
            raise SingularHomographyError(f"homography must be a finite 3x3 matrix, got shape {H.shape}")
        if abs(np.linalg.det(H)) <= _DET_TOL:
            raise SingularHomographyError("homography is singular")
        object.__setattr__(self, "matrix", _frozen(H))

    def inverse(self) -> Homography:
        return Homography(np.linalg.inv(self.matrix))

    def normalized(self) -> np.ndarray:
        return self.matrix / self.matrix[2, 2]

    def apply(self, pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Map (..., 2) pixels; returns mapped pixels and a mask of positive homogeneous scale."""
        pixels = np.asarray(pixels, dtype=np.float64)
        H = self.matrix
        x = H[0, 0] * pixels[..., 0] + H[0, 1] * pixels[..., 1] + H[0, 2]
        y = H[1, 0] * pixels[..., 0] + H[1, 1] * pixels[..., 1] + H[1, 2]
        w = H[2, 0] * pixels[..., 0] + H[2, 1] * pixels[..., 1] + H[2, 2]
        ok = w > 1e-12
        safe = np.where(ok, w, 1.0)
        return np.stack([x / safe, y / safe], axis=-1), ok


@dataclass(frozen=True)
class Epipole:
    u: float
    v: float
    at_infinity: bool = False

    @property
    def point(self) -> np.ndarray:
        return np.array([self.u, self.v])


def plane_homography(K: CameraIntrinsics, pose: RigidPose, plane: GroundPlane) -> Homography:
    """
    Homography induced by the ground plane, mapping source pixels to target pixels.

    pose is the source→target transform and plane is given in the target frame.
    The plane is re-expressed in the source frame (n_s = RᵀN, d_s = h_c − NᵀT)
    so K(R + T·n_sᵀ/d_s)K⁻¹ is exact for every plane point. When the camera
    moves parallel to the road and does not rotate this is K(R + T·Nᵀ/h_c)K⁻¹.
    """
    _check_intrinsics(K)
    R, T, N = pose.rotation, pose.translation, plane.normal
    n_s = R.T @ N
    d_s = plane.height - float(N @ T)
    if d_s <= 0:
        raise InvalidPlaneError(f"source camera is not above the plane (distance {d_s:.6g} m)")
    M = R + np.outer(T, n_s) / d_s
    return Homography(K.matrix @ M @ K.inverse)


def epipole(K: CameraIntrinsics, pose: RigidPose) -> Epipole:
    """Image of the source camera centre in the target view (focus of expansion)."""
    _check_intrinsics(K)
    T = pose.translation
    if abs(T[2]) < _EPIPOLE_TZ:
        return Epipole(float("inf"), float("inf"), at_infinity=True)
    return Epipole(float(K.fx * T[0] / T[2] + K.cx), float(K.fy * T[1] / T[2] + K.cy))
