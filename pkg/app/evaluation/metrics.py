"""
Standard monocular depth metrics with an 80 m cap and optional per-frame
median scaling.

Usage:
    m = evaluate(pred, gt, cap=80.0, median_scale=True)
    print(format_table([("oracle", m)]))
"""

from __future__ import annotations
from dataclasses import asdict, dataclass

import numpy as np

from app.errors import EmptyMaskError
from app.geometry.fields import DepthField, require_same_shape

MIN_DEPTH = 1e-3
MAX_DEPTH = 80.0

COLUMNS = ("abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3")
_HEADERS = ("Abs Rel", "Sq Rel", "RMSE", "RMSE log", "δ<1.25", "δ<1.25²", "δ<1.25³")


@dataclass(frozen=True)
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float
    count: int
    median_ratio: float | None = None

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, c) for c in COLUMNS)

    def to_dict(self) -> dict:
        return asdict(self)


def compute_errors(gt: np.ndarray, pred: np.ndarray) -> tuple[float, ...]:
    """Metrics over matching 1-D arrays of valid depths."""
    thresh = np.maximum(gt / pred, pred / gt)
    a1 = (thresh < 1.25).mean()
    a2 = (thresh < 1.25 ** 2).mean()
    a3 = (thresh < 1.25 ** 3).mean()

    rmse = np.sqrt(((gt - pred) ** 2).mean())
    rmse_log = np.sqrt(((np.log(gt) - np.log(pred)) ** 2).mean())
    abs_rel = np.mean(np.abs(gt - pred) / gt)
    sq_rel = np.mean(((gt - pred) ** 2) / gt)
    return float(abs_rel), float(sq_rel), float(rmse), float(rmse_log), float(a1), float(a2), float(a3)


def evaluate(pred: DepthField, gt: DepthField, cap: float = MAX_DEPTH, median_scale: bool = False,
             mask: np.ndarray | None = None, min_depth: float = MIN_DEPTH) -> DepthMetrics:
    """
    Compare pred against gt on pixels with valid gt in (0, cap] and valid pred.

    With median_scale, pred is first multiplied by med(gt)/med(pred); pred is
    then clipped to [min_depth, cap].
    """
    require_same_shape("prediction vs ground truth", pred.shape, gt.shape)
    valid = gt.valid & pred.valid & (gt.values > 0) & (gt.values <= cap)
    if mask is not None:
        require_same_shape("evaluation mask", np.shape(mask), gt.shape)
        valid &= np.asarray(mask, dtype=bool)
    if not valid.any():
        raise EmptyMaskError("no valid ground-truth pixels to evaluate")
    g = gt.values[valid]
    p = pred.values[valid]
    ratio = None
    if median_scale:
        ratio = float(np.median(g) / np.median(p))
        p = p * ratio
    p = np.clip(p, min_depth, cap)
    return DepthMetrics(*compute_errors(g, p), count=int(valid.sum()), median_ratio=ratio)


def format_table(rows: list[tuple[str, DepthMetrics]]) -> str:
    """Aligned plain-text table, one row per labelled result."""
    width = max([len(label) for label, _ in rows] + [6])
    head = f"{'':<{width}} | " + " | ".join(f"{h:>9}" for h in _HEADERS)
    lines = [head, "-" * len(head)]
    for label, m in rows:
        lines.append(f"{label:<{width}} | " + " | ".join(f"{v:>9.4f}" for v in m.as_tuple()))
    return "\n".join(lines)
