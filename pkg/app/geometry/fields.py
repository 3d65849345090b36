"""
Per-pixel field values shared by sampling, parallax and photometric code.

Every field is an (H, W) or (H, W, C) float64 array plus an (H, W) boolean
validity mask. Non-finite inputs are marked invalid on construction and invalid
pixels always hold 0, so no NaN ever travels through the kernel.
"""

from __future__ import annotations
from dataclasses import dataclass, replace

import numpy as np

from app.errors import DomainError, ShapeMismatchError


def require_same_shape(what: str, a: tuple[int, ...], b: tuple[int, ...]) -> None:
    if tuple(a) != tuple(b):
        raise ShapeMismatchError(what, a, b)


def _clean(values: np.ndarray, valid: np.ndarray | None, spatial_ndim: int) -> tuple[np.ndarray, np.ndarray]:
    values = np.array(values, dtype=np.float64)
    finite = np.isfinite(values)
    if values.ndim > spatial_ndim:
        finite = finite.all(axis=tuple(range(spatial_ndim, values.ndim)))
    if valid is None:
        valid = finite
    else:
        valid = np.asarray(valid, dtype=bool)
        require_same_shape("validity mask", valid.shape, values.shape[:spatial_ndim])
        valid = valid & finite
    values[~valid] = 0.0
    values.setflags(write=False)
    valid = valid.copy()
    valid.setflags(write=False)
    return values, valid


@dataclass(frozen=True, eq=False)
class ScalarField:
    values: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise DomainError(f"{type(self).__name__} must be 2-D, got shape {values.shape}")
        values, valid = _clean(values, self.valid, 2)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[:2]

    @property
    def count(self) -> int:
        return int(self.valid.sum())

    def masked(self, mask: np.ndarray):
        """Same field with validity additionally restricted to `mask`."""
        return replace(self, valid=self.valid & np.asarray(mask, dtype=bool))

    def scaled(self, k: float):
        return replace(self, values=self.values * k)

    def with_invalid(self, fill: float = np.inf) -> np.ndarray:
        """Values with invalid pixels replaced by `fill` (file encoding)."""
        out = self.values.astype(np.float64, copy=True)
        out[~self.valid] = fill
        return out


@dataclass(frozen=True, eq=False)
class StructureField(ScalarField):
    """γ = h_p / d_p per pixel."""


@dataclass(frozen=True, eq=False)
class DepthField(ScalarField):
    """z-depth in metres; valid pixels are strictly positive."""

    def __post_init__(self):
        super().__post_init__()
        positive = self.valid & (self.values > 0)
        if not np.array_equal(positive, self.valid):
            values = np.where(positive, self.values, 0.0)
            values.setflags(write=False)
            positive.setflags(write=False)
            object.__setattr__(self, "values", values)
            object.__setattr__(self, "valid", positive)


@dataclass(frozen=True, eq=False)
class FlowScaleField(ScalarField):
    """Epipolar flow multiplier S with its bin bounds.

    `residual` is set when S was recovered from a flow field: the magnitude of the
    flow component orthogonal to (p − e_t).
    """
    f_min: float = -100.0
    f_max: float = 100.0
    residual: np.ndarray | None = None

    def __post_init__(self):
        if not self.f_min < self.f_max:
            raise DomainError(f"f_min must be below f_max, got {self.f_min} and {self.f_max}")
        super().__post_init__()


@dataclass(frozen=True, eq=False)
class ResidualFlowField:
    values: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 3 or values.shape[2] != 2:
            raise DomainError(f"flow must be (H, W, 2), got shape {values.shape}")
        values, valid = _clean(values, self.valid, 2)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[:2]

    @classmethod
    def zeros(cls, shape: tuple[int, int]) -> ResidualFlowField:
        return cls(np.zeros((*shape, 2)))

    @classmethod
    def uniform(cls, shape: tuple[int, int], du: float, dv: float) -> ResidualFlowField:
        values = np.empty((*shape, 2))
        values[..., 0] = du
        values[..., 1] = dv
        return cls(values)


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """(H, W, C) intensities in [0, 1], C ∈ {1, 3}. 2-D input becomes one channel."""
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[..., None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise DomainError(f"image must be (H, W) or (H, W, 1|3), got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DomainError("image contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[:2]

    def gray(self) -> np.ndarray:
        return self.data.mean(axis=2)
