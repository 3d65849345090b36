"""
PipelineState for one planar-parallax evaluation pass.

Inputs are set by the caller; every node fills in its own outputs and returns
only what it changed. Arrays and field objects live in the state as-is.
"""

from __future__ import annotations
from typing import Annotated, Any
from typing_extensions import TypedDict
import operator

import numpy as np

from app.config.settings import RunConfig
from app.geometry.core import CameraIntrinsics, GroundPlane, Homography, RigidPose
from app.geometry.fields import DepthField, FlowScaleField, ImageBuffer, ResidualFlowField, StructureField
from app.photometric.losses import LossReport
from app.surface.normals import NormalField


class PipelineState(TypedDict, total=False):
    # Identity
    run_id: str
    stage: str
    status: str
    current_node: str
    started_at: str
    completed_at: str

    # Inputs
    config: RunConfig
    K: CameraIntrinsics
    pose_s_to_t: RigidPose
    plane: GroundPlane
    target: ImageBuffer
    source: ImageBuffer
    depth_mono: DepthField
    flowscale: FlowScaleField

    # Warp
    homography: Homography
    warped: ImageBuffer
    warped_valid: np.ndarray

    # Parallax
    gamma_pp: StructureField
    depth_pp: DepthField
    flow: ResidualFlowField

    # Synthesis: name → (image, validity)
    synthesized: dict[str, tuple[ImageBuffer, np.ndarray]]

    # Masks
    normals: NormalField
    masks: dict[str, np.ndarray]

    # Losses
    losses: dict[str, LossReport]
    total: LossReport

    # events: append-only, nodes return only their new events
    events: Annotated[list[dict[str, Any]], operator.add]
