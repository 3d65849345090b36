"""
Ground-truth oracle: ray-cast a textured road with axis-aligned boxes.

World frame shares the camera axes (x-right, y-down, z-forward); the road is
y = 0 and boxes stand on it, spanning y ∈ [−height, 0]. A camera pose is
camera-to-world. Rays K⁻¹p̃ have unit camera z, so the ray parameter of the
first hit is the depth. γ = (height above road) / depth and is exactly 0 on
the road.

Textures are world-fixed sums of seeded sinusoids (or a checkerboard) and
faces carry a constant shade, so a surface looks the same from every pose.
Box intersections are computed relative to the camera centre: a co-moving box
(positioned relative to the camera) renders bit-identically in every frame.

Usage:
    scene = default_scene()
    pair = make_pair(scene, *forward_poses(1.65), K)
"""

from __future__ import annotations
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from app.errors import CameraBelowPlaneError, DomainError
from app.geometry.core import (
    CameraIntrinsics, Epipole, GroundPlane, RigidPose, compose_pose, epipole, invert_pose, rotation_x, rotation_y,
)
from app.geometry.fields import DepthField, ImageBuffer, StructureField
from app.utils.parallel import map_rows

SKY_ID = -1
GROUND_ID = 0
SKY_VALUE = 0.8
_UP = np.array([0.0, 1.0, 0.0])
_DEFAULT_SHADES = (0.85, 0.75, 1.0, 0.6, 0.95, 0.7)


# ---------------------------------------------------------------------------
# Scene description
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoxSpec:
    """Box on the road, centred at (x, z); co-moving boxes are placed relative to the camera."""
    x: float
    z: float
    width: float
    height: float
    length: float
    shades: tuple[float, ...] = _DEFAULT_SHADES
    co_moving: bool = False

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0 and self.length > 0):
            raise DomainError(f"box sizes must be positive, got {self.width}x{self.height}x{self.length}")
        if len(self.shades) != 6:
            raise DomainError(f"a box needs 6 face shades, got {len(self.shades)}")

    def corners(self, camera_centre: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(lo, hi) world corners."""
        cx, cz = (camera_centre[0] + self.x, camera_centre[2] + self.z) if self.co_moving else (self.x, self.z)
        lo = np.array([cx - self.width / 2, -self.height, cz - self.length / 2])
        hi = np.array([cx + self.width / 2, 0.0, cz + self.length / 2])
        return lo, hi

    def relative_corners(self, camera_centre: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.co_moving:
            lo = np.array([self.x - self.width / 2, -self.height - camera_centre[1], self.z - self.length / 2])
            hi = np.array([self.x + self.width / 2, -camera_centre[1], self.z + self.length / 2])
            return lo, hi
        lo, hi = self.corners(camera_centre)
        return lo - camera_centre, hi - camera_centre


@dataclass(frozen=True)
class TextureSpec:
    kind: Literal["noise", "checker"] = "noise"
    seed: int = 7
    checker_size: float = 0.5
    fade_distance: float = 25.0


@dataclass(frozen=True)
class SceneSpec:
    boxes: tuple[BoxSpec, ...] = ()
    texture: TextureSpec = field(default_factory=TextureSpec)
    sky: float = SKY_VALUE


def default_scene(seed: int = 7, co_moving: bool = False) -> SceneSpec:
    """Three boxes along a straight road; optionally a fourth box riding with the camera."""
    boxes = [
        BoxSpec(-2.5, 12.0, 1.8, 1.5, 4.0),
        BoxSpec(3.0, 18.0, 2.0, 2.5, 3.0),
        BoxSpec(0.5, 25.0, 1.6, 1.2, 3.5),
    ]
    if co_moving:
        boxes.append(BoxSpec(0.0, 9.0, 1.8, 1.4, 3.0, co_moving=True))
    return SceneSpec(tuple(boxes), TextureSpec(seed=seed))


def camera_pose(height: float, z: float = 0.0, x: float = 0.0, pitch_deg: float = 0.0,
                yaw_deg: float = 0.0) -> RigidPose:
    """Camera-to-world pose of a camera `height` m above the road, pitched down by pitch_deg, turned by yaw_deg."""
    return RigidPose(rotation_y(yaw_deg) @ rotation_x(pitch_deg), np.array([x, -height, z]))


def forward_poses(height: float, baseline: float = 0.8, pitch_deg: float = 0.0,
                  yaw_deg: float = 0.0) -> tuple[RigidPose, RigidPose]:
    """(target, source) poses with the source `baseline` m behind the target, turned by yaw_deg."""
    return (camera_pose(height, 0.0, pitch_deg=pitch_deg),
            camera_pose(height, -baseline, pitch_deg=pitch_deg, yaw_deg=yaw_deg))


def plane_for_pose(pose: RigidPose) -> GroundPlane:
    """The road expressed in the frame of a camera with camera-to-world `pose`."""
    height = -float(pose.translation[1])
    if not height > 0:
        raise CameraBelowPlaneError(f"camera centre y={pose.translation[1]:.6g} is not above the road (y < 0)")
    return GroundPlane.from_normal(pose.rotation.T @ _UP, height)


# ---------------------------------------------------------------------------
# Textures
# ---------------------------------------------------------------------------

class _Texture:
    """Seeded sinusoid banks for the road and every box face."""

    def __init__(self, spec: TextureSpec, n_boxes: int):
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        sign = rng.choice([-1.0, 1.0], size=(2, 6))
        # the road varies slowly along z so distant rows stay below the pixel Nyquist rate
        self.ground = (rng.uniform(0.3, 1.0, 6) * sign[0], rng.uniform(0.02, 0.08, 6) * sign[1],
                       rng.uniform(0.0, 2 * np.pi, 6))
        self.faces = []
        for _ in range(n_boxes):
            faces = []
            for _ in range(6):
                faces.append((rng.uniform(0.4, 1.2, 6) * rng.choice([-1.0, 1.0], 6),
                              rng.uniform(0.4, 1.2, 6) * rng.choice([-1.0, 1.0], 6),
                              rng.uniform(0.0, 2 * np.pi, 6)))
            self.faces.append(faces)

    @staticmethod
    def _bank(a: np.ndarray, b: np.ndarray, bank) -> np.ndarray:
        ka, kb, phase = bank
        arg = 2 * np.pi * (a[..., None] * ka + b[..., None] * kb) + phase
        return np.sin(arg).mean(axis=-1)

    def road(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        if self.spec.kind == "checker":
            s = self.spec.checker_size
            return 0.3 + 0.4 * ((np.floor(x / s) + np.floor(z / s)) % 2)
        fade = np.exp(-(np.maximum(z, 0.0) / self.spec.fade_distance) ** 2)
        return 0.5 + 0.4 * fade * self._bank(x, z, self.ground)

    def face(self, box: int, face: int, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.spec.kind == "checker":
            s = self.spec.checker_size
            return 0.25 + 0.5 * ((np.floor(a / s) + np.floor(b / s)) % 2)
        return 0.5 + 0.35 * self._bank(a, b, self.faces[box][face])


# ---------------------------------------------------------------------------
# Ray casting
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class _Hits:
    t: np.ndarray
    surface: np.ndarray
    direction: np.ndarray


def _cast(u: np.ndarray, v: np.ndarray, K: CameraIntrinsics, pose: RigidPose,
          boxes_rel: list[tuple[np.ndarray, np.ndarray]]) -> _Hits:
    rays = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1)
    d = rays @ pose.rotation.T
    origin_y = pose.translation[1]

    t = np.full(u.shape, np.inf)
    surface = np.full(u.shape, SKY_ID, dtype=np.int64)
    ground = d[..., 1] > 1e-12
    t = np.where(ground, -origin_y / np.where(ground, d[..., 1], 1.0), t)
    surface[ground] = GROUND_ID

    safe = np.where(np.abs(d) < 1e-300, 1e-300, d)
    for b, (lo, hi) in enumerate(boxes_rel):
        t1, t2 = lo / safe, hi / safe
        enter = np.minimum(t1, t2)
        leave = np.maximum(t1, t2)
        axis = np.argmax(enter, axis=-1)
        t_near = np.take_along_axis(enter, axis[..., None], axis=-1)[..., 0]
        t_far = leave.min(axis=-1)
        hit = (t_near <= t_far) & (t_near > 1e-9) & (t_near < t)
        d_axis = np.take_along_axis(d, axis[..., None], axis=-1)[..., 0]
        face = 2 * axis + (d_axis < 0)
        t = np.where(hit, t_near, t)
        surface = np.where(hit, 1 + 6 * b + face, surface)
    return _Hits(t, surface, d)


def _shade(hits: _Hits, pose: RigidPose, scene: SceneSpec, texture: _Texture,
           boxes_rel: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    out = np.full(hits.t.shape, scene.sky)
    ground = hits.surface == GROUND_ID
    if ground.any():
        t = hits.t[ground]
        x = pose.translation[0] + t * hits.direction[ground][:, 0]
        z = pose.translation[2] + t * hits.direction[ground][:, 2]
        out[ground] = texture.road(x, z)
    for b, (lo, _) in enumerate(boxes_rel):
        for f in range(6):
            sel = hits.surface == 1 + 6 * b + f
            if not sel.any():
                continue
            local = hits.t[sel][:, None] * hits.direction[sel] - lo
            a_ax, b_ax = [ax for ax in range(3) if ax != f // 2]
            value = texture.face(b, f, local[:, a_ax], local[:, b_ax])
            out[sel] = scene.boxes[b].shades[f] * value
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Frames
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RenderedFrame:
    image: ImageBuffer
    depth: DepthField
    gamma: StructureField
    pose: RigidPose
    plane: GroundPlane
    surface: np.ndarray
    static: np.ndarray


def render(scene: SceneSpec, pose: RigidPose, K: CameraIntrinsics, supersample: int = 2,
           threads: int = 1) -> RenderedFrame:
    """
    Render image, exact depth, γ and surface ids for a camera-to-world pose.

    Surface ids: −1 sky, 0 road, 1 + 6·box + face for box faces (face order
    −x, +x, top, bottom, front −z, back +z). Only the image is supersampled;
    depth and γ are exact at pixel centres.
    """
    plane = plane_for_pose(pose)
    if supersample < 1:
        raise DomainError(f"supersample must be >= 1, got {supersample}")
    centre = pose.translation
    boxes_rel = [box.relative_corners(centre) for box in scene.boxes]
    texture = _Texture(scene.texture, len(scene.boxes))
    offsets = (np.arange(supersample) + 0.5) / supersample - 0.5
    moving_ids = {1 + 6 * b + f for b, box in enumerate(scene.boxes) if box.co_moving for f in range(6)}

    def block(r0: int, r1: int):
        v, u = np.mgrid[r0:r1, 0:K.width].astype(np.float64)
        hits = _cast(u, v, K, pose, boxes_rel)
        image = np.zeros(u.shape)
        for oy in offsets:
            for ox in offsets:
                sub = hits if supersample == 1 else _cast(u + ox, v + oy, K, pose, boxes_rel)
                image += _shade(sub, pose, scene, texture, boxes_rel)
        image /= supersample * supersample
        valid = hits.surface != SKY_ID
        depth = np.where(valid, hits.t, 0.0)
        safe = np.where(valid, hits.t, 1.0)
        world_y = centre[1] + safe * hits.direction[..., 1]
        gamma = np.where(valid & (hits.surface != GROUND_ID), -world_y / safe, 0.0)
        static = valid & ~np.isin(hits.surface, list(moving_ids))
        return image, depth, valid, gamma, hits.surface, static

    image, depth, valid, gamma, surface, static = map_rows(block, K.height, threads)
    return RenderedFrame(ImageBuffer(image), DepthField(depth, valid), StructureField(gamma, valid),
                         pose, plane, surface, static)


@dataclass(frozen=True, eq=False)
class FramePair:
    target: RenderedFrame
    source: RenderedFrame
    pose_s_to_t: RigidPose
    plane: GroundPlane
    visibility: np.ndarray
    K: CameraIntrinsics

    @property
    def pose_t_to_s(self) -> RigidPose:
        return invert_pose(self.pose_s_to_t)

    @property
    def epipole(self) -> Epipole:
        return epipole(self.K, self.pose_s_to_t)

    @property
    def static_visible(self) -> np.ndarray:
        return self.target.static & self.visibility


def _visibility(scene: SceneSpec, target: RenderedFrame, source_pose: RigidPose, K: CameraIntrinsics) -> np.ndarray:
    """Target pixels whose static surface point is seen unoccluded inside the source image."""
    sel = target.static.copy()
    rays = K.pixel_rays()[sel]
    points = target.pose.apply(rays * target.depth.values[sel][:, None])
    in_source = invert_pose(source_pose).apply(points)
    z = in_source[:, 2]
    ahead = z > 1e-9
    zs = np.where(ahead, z, 1.0)
    u = K.fx * in_source[:, 0] / zs + K.cx
    v = K.fy * in_source[:, 1] / zs + K.cy
    inside = ahead & (u >= 0) & (u <= K.width - 1) & (v >= 0) & (v <= K.height - 1)
    boxes_rel = [box.relative_corners(source_pose.translation) for box in scene.boxes]
    hits = _cast(u, v, K, source_pose, boxes_rel)
    unoccluded = np.abs(hits.t - z) <= 1e-6 * np.maximum(z, 1.0)
    out = np.zeros(target.static.shape, dtype=bool)
    out[sel] = inside & unoccluded
    return out


def make_pair(scene: SceneSpec, pose_t: RigidPose, pose_s: RigidPose, K: CameraIntrinsics,
              supersample: int = 2, threads: int = 1) -> FramePair:
    """Target and source renders, the exact source→target pose and the road in the target frame."""
    target = render(scene, pose_t, K, supersample, threads)
    source = render(scene, pose_s, K, supersample, threads)
    relative = compose_pose(invert_pose(pose_t), pose_s)
    return FramePair(target, source, relative, target.plane, _visibility(scene, target, pose_s, K), K)
