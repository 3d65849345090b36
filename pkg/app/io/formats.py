"""
File formats: PFM fields, PNG/PPM/PGM images and masks, binary PLY point
clouds and JSON reports.

PFM is little-endian (negative scale header), rows stored bottom to top.
Samples are float32 on disk while fields are float64 in memory, so a round
trip is exact for float32-representable values and otherwise rounds to the
nearest float32. Invalid pixels are written as +inf and read back as invalid. Masks are 8-bit
PGM with 0/255.
"""

from __future__ import annotations
import json
import sys
from pathlib import Path
from typing import Any, TextIO

import numpy as np
from PIL import Image
from plyfile import PlyData, PlyElement

from app.errors import ConfigError, DomainError
from app.geometry.core import CameraIntrinsics, GroundPlane, RigidPose
from app.geometry.fields import DepthField, FlowScaleField, ImageBuffer, ResidualFlowField, ScalarField, StructureField

PathLike = str | Path


# ---------------------------------------------------------------------------
# PFM
# ---------------------------------------------------------------------------

def write_pfm(path: PathLike, data: np.ndarray) -> None:
    data = np.asarray(data, dtype="<f4")
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[..., 0]
    if data.ndim == 2:
        header = "Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = "PF"
    else:
        raise DomainError(f"PFM holds (H, W) or (H, W, 3) arrays, got shape {data.shape}")
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(f"{header}\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(data[::-1]).tobytes())


def read_pfm(path: PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header not in (b"PF", b"Pf"):
            raise DomainError(f"{path}: not a PFM file")
        dims = f.readline().split()
        while not dims:
            dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        channels = 3 if header == b"PF" else 1
        data = np.frombuffer(f.read(), dtype=dtype, count=w * h * channels)
    data = data.reshape((h, w, channels) if channels == 3 else (h, w))[::-1]
    return data.astype(np.float64)


def write_field(path: PathLike, field: ScalarField) -> None:
    write_pfm(path, field.with_invalid())


def read_depth(path: PathLike) -> DepthField:
    return DepthField(read_pfm(path))


def read_structure(path: PathLike) -> StructureField:
    return StructureField(read_pfm(path))


def read_flowscale(path: PathLike, f_min: float = -100.0, f_max: float = 100.0) -> FlowScaleField:
    return FlowScaleField(read_pfm(path), f_min=f_min, f_max=f_max)


def write_flow(path: PathLike, flow: ResidualFlowField) -> None:
    data = np.zeros((*flow.shape, 3))
    data[..., :2] = flow.values
    data[~flow.valid] = np.inf
    write_pfm(path, data)


def read_flow(path: PathLike) -> ResidualFlowField:
    data = read_pfm(path)
    if data.ndim != 3:
        raise DomainError(f"{path}: flow PFM must have 3 channels")
    return ResidualFlowField(data[..., :2])


def write_vectors(path: PathLike, values: np.ndarray, valid: np.ndarray) -> None:
    data = np.array(values, dtype=np.float64)
    data[~valid] = np.inf
    write_pfm(path, data)


# ---------------------------------------------------------------------------
# Images and masks (Pillow)
# ---------------------------------------------------------------------------

def read_image(path: PathLike) -> ImageBuffer:
    with Image.open(path) as img:
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB")
        data = np.asarray(img, dtype=np.float64) / 255.0
    return ImageBuffer(data)


def write_image(path: PathLike, image: ImageBuffer) -> None:
    data = np.round(np.clip(image.data, 0.0, 1.0) * 255.0).astype(np.uint8)
    if image.channels == 1:
        Image.fromarray(data[..., 0], mode="L").save(path)
    else:
        Image.fromarray(data, mode="RGB").save(path)


def write_mask(path: PathLike, mask: np.ndarray) -> None:
    Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8), mode="L").save(path)


def read_mask(path: PathLike) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L")) > 127


# ---------------------------------------------------------------------------
# PLY (plyfile)
# ---------------------------------------------------------------------------

def depth_to_points(depth: DepthField, K: CameraIntrinsics, image: ImageBuffer | None = None,
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Camera-frame xyz and 8-bit rgb of every valid pixel, in row-major order."""
    rays = K.pixel_rays()
    sel = depth.valid
    points = rays[sel] * depth.values[sel][:, None]
    if image is None:
        colors = np.full((len(points), 3), 255, dtype=np.uint8)
    else:
        rgb = image.data if image.channels == 3 else np.repeat(image.data, 3, axis=2)
        colors = np.round(np.clip(rgb[sel], 0.0, 1.0) * 255.0).astype(np.uint8)
    return points, colors


def write_ply(path: PathLike, points: np.ndarray, colors: np.ndarray) -> None:
    dtype = [("x", "f4"), ("y", "f4"), ("z", "f4"), ("red", "u1"), ("green", "u1"), ("blue", "u1")]
    elements = np.empty(len(points), dtype=dtype)
    elements["x"], elements["y"], elements["z"] = points[:, 0], points[:, 1], points[:, 2]
    elements["red"], elements["green"], elements["blue"] = colors[:, 0], colors[:, 1], colors[:, 2]
    PlyData([PlyElement.describe(elements, "vertex")], byte_order="<").write(str(path))


def read_ply(path: PathLike) -> tuple[np.ndarray, np.ndarray]:
    vertex = PlyData.read(str(path))["vertex"]
    points = np.stack([vertex["x"], vertex["y"], vertex["z"]], axis=1).astype(np.float64)
    colors = np.stack([vertex["red"], vertex["green"], vertex["blue"]], axis=1)
    return points, colors


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

def dumps(obj: Any) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False, default=_json_default)


def _json_default(value: Any):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serialisable: {type(value).__name__}")


def write_json(path: PathLike | None, obj: Any, stream: TextIO | None = None) -> None:
    """Write to `path`, or to standard output when path is None."""
    text = dumps(obj)
    if path is None:
        out = stream or sys.stdout
        out.write(text + "\n")
        out.flush()
    else:
        Path(path).write_text(text + "\n", encoding="utf-8")


def read_json(path: PathLike) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def pose_to_dict(pose_s_to_t: RigidPose, plane: GroundPlane) -> dict:
    return {
        "pose": pose_s_to_t.matrix.reshape(-1).tolist(),
        "plane_normal": plane.normal.tolist(),
        "cam_height_m": plane.height,
    }


def write_pose(path: PathLike, pose_s_to_t: RigidPose, plane: GroundPlane) -> None:
    write_json(path, pose_to_dict(pose_s_to_t, plane))


def read_pose(path: PathLike) -> tuple[RigidPose, GroundPlane]:
    """Source→target pose (3×4 row-major) and the road plane in the target frame."""
    data = read_json(path)
    try:
        pose = RigidPose.from_matrix(np.asarray(data["pose"], dtype=np.float64))
        plane = GroundPlane.from_normal(data["plane_normal"], float(data["cam_height_m"]))
    except KeyError as exc:
        raise ConfigError(exc.args[0], f"missing from {path}") from None
    return pose, plane
