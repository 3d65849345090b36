"""
Photometric error, masks and the self-supervision losses, as pure evaluators.

pe(a, b) = α/2·(1 − SSIM(a, b)) + (1 − α)·|a − b|, averaged over channels.
SSIM uses 3×3 box statistics with reflection padding and the usual
stabilisers c1 = 0.01², c2 = 0.03² on [0, 1] intensities.

Masked losses report value = sum(map)/count. An empty mask gives value 0 and
empty_mask=True, never NaN. The consistency loss is a plain sum (see
loss_consist) with a mean-normalised variant.

Usage:
    report = loss_homo(warped, target, flat, PhotometricParams())
    total = schedule_total(TrainingStage.HOMO, {"mono": m, "res": r, "pp": p, "homo": report})
"""

from __future__ import annotations
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np
from scipy.ndimage import uniform_filter

from app.errors import DomainError, EmptySourcesError, UnknownStageError
from app.geometry.fields import DepthField, ImageBuffer, ScalarField, require_same_shape
from app.utils.log import log

SMOOTHNESS_WEIGHT = 1e-3
STATIC_DELTA = 0.2


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhotometricParams:
    alpha: float = 0.85
    ssim_window: int = 3
    c1: float = 0.01 ** 2
    c2: float = 0.03 ** 2

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise DomainError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.ssim_window < 3 or self.ssim_window % 2 == 0:
            raise DomainError(f"ssim_window must be odd and >= 3, got {self.ssim_window}")


@dataclass(frozen=True, eq=False)
class LossReport:
    name: str
    value: float
    contribution: np.ndarray | None = None
    count: int = 0
    empty_mask: bool = False
    breakdown: dict[str, float] = field(default_factory=dict)
    reduction: str = "mean"

    def to_dict(self) -> dict:
        out = {"name": self.name, "value": float(self.value), "count": int(self.count),
               "empty_mask": bool(self.empty_mask), "reduction": self.reduction}
        if self.breakdown:
            out["breakdown"] = {k: float(v) for k, v in self.breakdown.items()}
        return out


class TrainingStage(str, Enum):
    EARLY = "early"
    HOMO = "homo"
    DISTILL = "distill"


# ---------------------------------------------------------------------------
# SSIM / pe
# ---------------------------------------------------------------------------

def _pair(a: ImageBuffer, b: ImageBuffer) -> tuple[np.ndarray, np.ndarray]:
    require_same_shape("image pair", a.data.shape, b.data.shape)
    return a.data, b.data


def _ssim_channels(x: np.ndarray, y: np.ndarray, params: PhotometricParams) -> np.ndarray:
    size = (params.ssim_window, params.ssim_window, 1)

    def pool(z: np.ndarray) -> np.ndarray:
        return uniform_filter(z, size=size, mode="mirror")

    mu_x, mu_y = pool(x), pool(y)
    sigma_x = pool(x * x) - mu_x * mu_x
    sigma_y = pool(y * y) - mu_y * mu_y
    sigma_xy = pool(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + params.c1) * (2 * sigma_xy + params.c2)
    den = (mu_x * mu_x + mu_y * mu_y + params.c1) * (sigma_x + sigma_y + params.c2)
    return np.clip(num / den, -1.0, 1.0)


def ssim_map(a: ImageBuffer, b: ImageBuffer, params: PhotometricParams = PhotometricParams()) -> np.ndarray:
    """(H, W) channel-averaged SSIM in [−1, 1]."""
    x, y = _pair(a, b)
    return _ssim_channels(x, y, params).mean(axis=2)


def photometric_error(a: ImageBuffer, b: ImageBuffer, params: PhotometricParams = PhotometricParams()) -> np.ndarray:
    """(H, W) pe map."""
    x, y = _pair(a, b)
    ssim_term = (1.0 - _ssim_channels(x, y, params)).mean(axis=2)
    l1 = np.abs(x - y).mean(axis=2)
    return params.alpha / 2.0 * ssim_term + (1.0 - params.alpha) * l1


def min_reprojection(target: ImageBuffer, candidates: Sequence[ImageBuffer],
                     valids: Sequence[np.ndarray | None] | None = None,
                     params: PhotometricParams = PhotometricParams()) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel minimum pe over candidates; pixels invalid in a candidate do not compete."""
    if not candidates:
        raise EmptySourcesError("at least one source image is required")
    valids = list(valids) if valids is not None else [None] * len(candidates)
    best = np.full(target.shape, np.inf)
    for image, valid in zip(candidates, valids):
        pe = photometric_error(target, image, params)
        if valid is not None:
            pe = np.where(valid, pe, np.inf)
        best = np.minimum(best, pe)
    any_valid = np.isfinite(best)
    return np.where(any_valid, best, 0.0), any_valid


def _as_list(images: ImageBuffer | Sequence[ImageBuffer]) -> list[ImageBuffer]:
    return [images] if isinstance(images, ImageBuffer) else list(images)


# ---------------------------------------------------------------------------
# Masks
# ---------------------------------------------------------------------------

def auto_mask(target: ImageBuffer, warped_sources: Sequence[ImageBuffer], raw_sources: Sequence[ImageBuffer],
              params: PhotometricParams = PhotometricParams(),
              warped_valid: Sequence[np.ndarray | None] | None = None,
              depth_valid: np.ndarray | None = None) -> np.ndarray:
    """
    Keep pixels where the reprojected sources beat the unwarped ones.

    `depth_valid` additionally removes pixels whose depth is invalid.
    """
    if not warped_sources or not raw_sources:
        raise EmptySourcesError("auto_mask needs at least one warped and one raw source")
    reproj, reproj_ok = min_reprojection(target, warped_sources, warped_valid, params)
    identity, _ = min_reprojection(target, raw_sources, None, params)
    mask = reproj_ok & (reproj < identity)
    if depth_valid is not None:
        mask &= np.asarray(depth_valid, dtype=bool)
    return mask


def static_mask(depth_mono: DepthField, depth_pp: DepthField, delta: float = STATIC_DELTA) -> np.ndarray:
    """1 where the two depth estimates agree within relative gap delta."""
    if not delta > 0:
        raise DomainError(f"delta must be positive, got {delta}")
    require_same_shape("depth pair", depth_mono.shape, depth_pp.shape)
    ok = depth_mono.valid & depth_pp.valid
    m = np.where(ok, depth_mono.values, 1.0)
    p = np.where(ok, depth_pp.values, 1.0)
    gap = np.maximum((m - p) / p, (p - m) / m)
    return ok & (gap < delta)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def _masked_mean(name: str, pe: np.ndarray, mask: np.ndarray) -> LossReport:
    mask = np.asarray(mask, dtype=bool)
    require_same_shape(f"{name} mask", mask.shape, pe.shape)
    contribution = np.where(mask, pe, 0.0)
    count = int(mask.sum())
    if count == 0:
        log("LOSS", "empty mask", icon="⚠️", loss=name)
        return LossReport(name, 0.0, contribution, 0, empty_mask=True)
    return LossReport(name, float(contribution.sum() / count), contribution, count)


def _and(*masks: np.ndarray | None) -> np.ndarray:
    present = [np.asarray(m, dtype=bool) for m in masks if m is not None]
    out = present[0].copy()
    for m in present[1:]:
        out &= m
    return out


def loss_homo(warped: ImageBuffer, target: ImageBuffer, flat: np.ndarray,
              params: PhotometricParams = PhotometricParams(), valid: np.ndarray | None = None) -> LossReport:
    """Road alignment under the plane homography, over the flat mask."""
    return _masked_mean("homo", photometric_error(target, warped, params), _and(flat, valid))


def loss_mono(synthesized: ImageBuffer | Sequence[ImageBuffer], target: ImageBuffer, auto: np.ndarray,
              params: PhotometricParams = PhotometricParams(),
              valids: Sequence[np.ndarray | None] | None = None, name: str = "mono") -> LossReport:
    """Depth-reprojection loss under the auto-mask; min over sources when several are given."""
    pe, any_valid = min_reprojection(target, _as_list(synthesized), valids, params)
    return _masked_mean(name, pe, _and(auto, any_valid))


def loss_pp(synthesized: ImageBuffer | Sequence[ImageBuffer], target: ImageBuffer, auto: np.ndarray,
            certainty: np.ndarray, params: PhotometricParams = PhotometricParams(),
            valids: Sequence[np.ndarray | None] | None = None) -> LossReport:
    pe, any_valid = min_reprojection(target, _as_list(synthesized), valids, params)
    return _masked_mean("pp", pe, _and(auto, certainty, any_valid))


def loss_res(synthesized: ImageBuffer, target: ImageBuffer, params: PhotometricParams = PhotometricParams(),
             valid: np.ndarray | None = None) -> LossReport:
    """Residual-flow synthesis loss; over every pixel unless `valid` restricts it."""
    pe = photometric_error(target, synthesized, params)
    mask = np.ones(pe.shape, dtype=bool) if valid is None else valid
    return _masked_mean("res", pe, mask)


def _mean_normalized(depth: DepthField) -> np.ndarray:
    if depth.count == 0:
        raise DomainError("depth field has no valid pixels")
    return depth.values / depth.values[depth.valid].mean()


def loss_consist(depth_mono: DepthField, depth_pp: DepthField, static: np.ndarray,
                 normalized: bool = False) -> LossReport:
    """
    Σ |D̄_mono − D̄_pp| over static pixels, with D̄ = D / mean(D) over its valid pixels.

    normalized=True divides by the pixel count like the other losses.
    """
    require_same_shape("depth pair", depth_mono.shape, depth_pp.shape)
    mask = _and(static, depth_mono.valid, depth_pp.valid)
    contribution = np.where(mask, np.abs(_mean_normalized(depth_mono) - _mean_normalized(depth_pp)), 0.0)
    count = int(mask.sum())
    if count == 0:
        log("LOSS", "empty mask", icon="⚠️", loss="consist")
        return LossReport("consist", 0.0, contribution, 0, empty_mask=True,
                          reduction="mean" if normalized else "sum")
    total = float(contribution.sum())
    if normalized:
        return LossReport("consist", total / count, contribution, count)
    return LossReport("consist", total, contribution, count, reduction="sum")


def smoothness_loss(disparity: ScalarField | np.ndarray, image: ImageBuffer, name: str = "smooth") -> LossReport:
    """
    Edge-aware smoothness of the mean-normalised disparity.

    Forward differences on the (H−1)×(W−1) interior; image gradients are
    averaged over channels. The map is zero on the last row and column.
    """
    if isinstance(disparity, ScalarField):
        d, ok = disparity.values, disparity.valid
    else:
        d = np.asarray(disparity, dtype=np.float64)
        ok = np.ones(d.shape, dtype=bool)
    require_same_shape("disparity vs image", d.shape, image.shape)
    mean = d[ok].mean() if ok.any() else 0.0
    if not mean > 0:
        raise DomainError("disparity must have a positive mean")
    dn = d / mean
    img = image.data
    dx = np.abs(dn[:-1, 1:] - dn[:-1, :-1])
    dy = np.abs(dn[1:, :-1] - dn[:-1, :-1])
    ix = np.abs(img[:-1, 1:] - img[:-1, :-1]).mean(axis=2)
    iy = np.abs(img[1:, :-1] - img[:-1, :-1]).mean(axis=2)
    interior = dx * np.exp(-ix) + dy * np.exp(-iy)
    inside = ok[:-1, :-1] & ok[:-1, 1:] & ok[1:, :-1]
    contribution = np.zeros(d.shape)
    contribution[:-1, :-1] = np.where(inside, interior, 0.0)
    padded = np.zeros(d.shape, dtype=bool)
    padded[:-1, :-1] = inside
    return _masked_mean(name, contribution, padded)


def average_reports(name: str, reports: Sequence[LossReport]) -> LossReport:
    """Mean of per-scale values; the contribution map of the finest scale is kept."""
    if not reports:
        raise EmptySourcesError(f"no per-scale reports for '{name}'")
    values = [r.value for r in reports]
    return LossReport(name, float(np.mean(values)), reports[0].contribution,
                      sum(r.count for r in reports), all(r.empty_mask for r in reports),
                      {f"scale{i}": v for i, v in enumerate(values)}, reports[0].reduction)


# ---------------------------------------------------------------------------
# Schedule
# ---------------------------------------------------------------------------

_STAGE_COMPONENTS: dict[TrainingStage, tuple[str, ...]] = {
    TrainingStage.EARLY: ("mono", "res", "pp"),
    TrainingStage.HOMO: ("mono", "res", "pp", "homo"),
    TrainingStage.DISTILL: ("mono", "homo", "consist"),
}


def parse_stage(stage: TrainingStage | str) -> TrainingStage:
    try:
        return TrainingStage(stage)
    except ValueError:
        raise UnknownStageError(f"unknown training stage '{stage}' (expected early, homo or distill)") from None


def stage_for_epoch(epoch: int, homo_start: int = 5, freeze_epoch: int = 20) -> TrainingStage:
    if epoch < homo_start:
        return TrainingStage.EARLY
    if epoch < freeze_epoch:
        return TrainingStage.HOMO
    return TrainingStage.DISTILL


def schedule_total(stage: TrainingStage | str, components: Mapping[str, LossReport | float],
                   smoothness_weight: float = SMOOTHNESS_WEIGHT) -> LossReport:
    """
    Compose the stage's total loss.

    early: mono + res + pp; homo: adds homo; distill: mono + homo + consist,
    where the distill mono term is "mono_static" when supplied. "smooth" is
    added in every stage with smoothness_weight.
    """
    stage = parse_stage(stage)

    def value(key: str) -> float:
        v = components[key]
        return float(v.value if isinstance(v, LossReport) else v)

    breakdown: dict[str, float] = {}
    for key in _STAGE_COMPONENTS[stage]:
        source = "mono_static" if stage is TrainingStage.DISTILL and key == "mono" and "mono_static" in components else key
        if source not in components:
            raise DomainError(f"stage '{stage.value}' needs component loss '{key}'")
        breakdown[key] = value(source)
    if "smooth" in components:
        breakdown["smooth"] = smoothness_weight * value("smooth")
    total = float(sum(breakdown.values()))
    return LossReport("total", total, None, 0, breakdown=breakdown, reduction="sum")
