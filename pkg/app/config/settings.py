"""
Run configuration, camera presets and the flat key-value config files.

Config files are KEY=value text (comments with #), read with dotenv_values
and validated by pydantic. Vectors are comma separated.

Camera file keys:
    fx, fy, cx, cy, width, height   pinhole intrinsics in pixels
    cam_height_m                    camera height above the road (m)
    plane_normal                    road normal in the camera frame, e.g. 0,1,0
    pitch_deg                       downward pitch, used when plane_normal is absent
    pose                            optional 3x4 row-major source→target pose

Scene file keys:
    seed, texture (noise|checker), checker_size, fade_distance, sky
    box<N> = x,z,width,height,length[,co_moving]

Configure via .env (or the environment):
    PARALLAX_ALPHA=0.85  PARALLAX_DELTA=0.2  PARALLAX_EPSILON=5
    PARALLAX_TAU_DEG=3   PARALLAX_F_MIN=-100 PARALLAX_F_MAX=100
    PARALLAX_CAP_M=80    PARALLAX_THREADS=1  PARALLAX_SEED=0
"""

from __future__ import annotations
import math
import os
import re
from pathlib import Path
from typing import Any, Literal

import numpy as np
from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from app.errors import ConfigError
from app.geometry.core import CameraIntrinsics, GroundPlane, RigidPose
from app.photometric.losses import PhotometricParams
from app.synth.scenes import BoxSpec, SceneSpec, TextureSpec

load_dotenv()


def _vector(value: Any) -> Any:
    if isinstance(value, str):
        return [float(x) for x in value.replace(" ", "").split(",") if x]
    return value


def _validated(model: type[BaseModel], values: dict[str, Any], source: str):
    try:
        return model(**values)
    except ValidationError as exc:
        err = exc.errors()[0]
        key = ".".join(str(p) for p in err["loc"]) or "?"
        raise ConfigError(key, f"{err['msg']} (in {source})") from None


def read_key_values(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return {k.strip().lower(): v for k, v in dotenv_values(path).items() if v is not None}


# ---------------------------------------------------------------------------
# Camera
# ---------------------------------------------------------------------------

class CameraConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    cam_height_m: float = 1.65
    plane_normal: list[float] | None = None
    pitch_deg: float = 0.0
    pose: list[float] | None = None

    @field_validator("plane_normal", "pose", mode="before")
    @classmethod
    def _split(cls, v):
        return _vector(v)

    @field_validator("plane_normal")
    @classmethod
    def _three(cls, v):
        if v is not None and len(v) != 3:
            raise ValueError("plane_normal needs 3 numbers")
        return v

    @field_validator("pose")
    @classmethod
    def _twelve(cls, v):
        if v is not None and len(v) != 12:
            raise ValueError("pose needs 12 numbers (3x4 row-major)")
        return v

    @field_validator("cam_height_m")
    @classmethod
    def _positive(cls, v):
        if not v > 0:
            raise ValueError("must be positive")
        return v

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, self.cx, self.cy, self.width, self.height)

    def plane(self) -> GroundPlane:
        if self.plane_normal is not None:
            return GroundPlane.from_normal(self.plane_normal, self.cam_height_m)
        return GroundPlane.pitched(self.cam_height_m, self.pitch_deg)

    def relative_pose(self) -> RigidPose | None:
        return RigidPose.from_matrix(np.asarray(self.pose)) if self.pose is not None else None


def _pinhole(width: int, height: int, cam_height: float, pitch: float = 0.0) -> CameraConfig:
    return CameraConfig(fx=0.58 * width, fy=1.92 * height, cx=width / 2, cy=height / 2,
                        width=width, height=height, cam_height_m=cam_height, pitch_deg=pitch)


PRESETS: dict[str, CameraConfig] = {
    "kitti": _pinhole(640, 192, 1.65),
    "cityscapes": _pinhole(512, 192, 1.2, 2.18),
}


def load_camera(path: str | Path | None = None, preset: str | None = None) -> CameraConfig:
    if path is not None:
        return _validated(CameraConfig, read_key_values(path), str(path))
    name = preset or "kitti"
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown camera preset '{name}' (expected {', '.join(PRESETS)})")
    return PRESETS[name]


# ---------------------------------------------------------------------------
# Scene
# ---------------------------------------------------------------------------

class BoxConfig(BaseModel):
    x: float
    z: float
    width: float
    height: float
    length: float
    co_moving: bool = False


class SceneConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = 7
    texture: Literal["noise", "checker"] = "noise"
    checker_size: float = 0.5
    fade_distance: float = 25.0
    sky: float = 0.8
    boxes: list[BoxConfig] = []

    @model_validator(mode="before")
    @classmethod
    def _collect_boxes(cls, data: Any):
        if not isinstance(data, dict):
            return data
        data = dict(data)
        numbered = sorted((k for k in data if re.fullmatch(r"box\d+", k)), key=lambda k: int(k[3:]))
        boxes = list(data.pop("boxes", []))
        for key in numbered:
            raw = data.pop(key)
            nums = _vector(raw) if isinstance(raw, str) else raw
            if len(nums) not in (5, 6):
                raise ValueError(f"{key} needs x,z,width,height,length[,co_moving]")
            boxes.append({"x": nums[0], "z": nums[1], "width": nums[2], "height": nums[3],
                          "length": nums[4], "co_moving": bool(nums[5]) if len(nums) == 6 else False})
        data["boxes"] = boxes
        return data

    def spec(self) -> SceneSpec:
        boxes = tuple(BoxSpec(b.x, b.z, b.width, b.height, b.length, co_moving=b.co_moving) for b in self.boxes)
        texture = TextureSpec(self.texture, self.seed, self.checker_size, self.fade_distance)
        return SceneSpec(boxes, texture, self.sky)


def load_scene(path: str | Path | None = None) -> SceneConfig:
    """Scene file, or the default three-box road when path is None."""
    if path is None:
        return SceneConfig(boxes=[
            BoxConfig(x=-2.5, z=12.0, width=1.8, height=1.5, length=4.0),
            BoxConfig(x=3.0, z=18.0, width=2.0, height=2.5, length=3.0),
            BoxConfig(x=0.5, z=25.0, width=1.6, height=1.2, length=3.5),
        ])
    return _validated(SceneConfig, read_key_values(path), str(path))


# ---------------------------------------------------------------------------
# Run parameters
# ---------------------------------------------------------------------------

_ENV = {
    "alpha": "PARALLAX_ALPHA",
    "delta": "PARALLAX_DELTA",
    "epsilon": "PARALLAX_EPSILON",
    "tau_deg": "PARALLAX_TAU_DEG",
    "f_min": "PARALLAX_F_MIN",
    "f_max": "PARALLAX_F_MAX",
    "cap": "PARALLAX_CAP_M",
    "threads": "PARALLAX_THREADS",
    "seed": "PARALLAX_SEED",
}


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    alpha: float = 0.85
    delta: float = 0.2
    epsilon: float = 5.0
    tau_deg: float = 3.0
    f_min: float = -100.0
    f_max: float = 100.0
    cap: float = 80.0
    seed: int = 0
    threads: int = 1
    neighbor_offset: int = 2
    gamma_tol: float = 0.05
    epipole_radius: float = 2.0
    smoothness_weight: float = 1e-3
    ransac_iters: int = 200
    supersample: int = 2
    baseline: float = 0.8
    scales: int = 1
    use_certainty_mask: bool = True
    use_static_mask: bool = True

    @field_validator("alpha")
    @classmethod
    def _unit(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError("must lie in [0, 1]")
        return v

    @field_validator("delta", "epsilon", "cap", "gamma_tol", "epipole_radius", "baseline")
    @classmethod
    def _pos(cls, v):
        if not v > 0:
            raise ValueError("must be positive")
        return v

    @field_validator("threads", "neighbor_offset", "ransac_iters", "supersample", "scales")
    @classmethod
    def _at_least_one(cls, v):
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("tau_deg")
    @classmethod
    def _angle(cls, v):
        if not 0.0 < v < 90.0:
            raise ValueError("must lie in (0, 90) degrees")
        return v

    @model_validator(mode="after")
    def _bins(self):
        if not self.f_min < self.f_max:
            raise ValueError("f_min must be below f_max")
        return self

    @property
    def tau(self) -> float:
        return math.cos(math.radians(self.tau_deg))

    @property
    def photometric(self) -> PhotometricParams:
        return PhotometricParams(alpha=self.alpha)

    @classmethod
    def from_env(cls, **overrides: Any) -> RunConfig:
        """Defaults, then PARALLAX_* environment variables, then explicit overrides (None is ignored)."""
        values: dict[str, Any] = {}
        for key, env in _ENV.items():
            raw = os.getenv(env)
            if raw not in (None, ""):
                values[key] = raw
        values.update({k: v for k, v in overrides.items() if v is not None})
        return _validated(cls, values, "environment/flags")
