"""
Road detection from depth: per-pixel surface normals, the cosine flat mask and
the trapezoidal road prior.

Normals come from the back-projected point cloud P = D·K⁻¹p̃. Four neighbour
pairs at offset n give four cross products; each is normalised and turned to
face the camera (negative dot with P) before the average is taken and
renormalised. Pixels whose neighbours fall outside the image or have invalid
depth are invalid.
"""

from __future__ import annotations
import math
from dataclasses import dataclass

import numpy as np

from app.errors import DomainError
from app.geometry.core import CameraIntrinsics
from app.geometry.fields import DepthField, StructureField, require_same_shape
from app.utils.parallel import map_rows

NEIGHBOR_OFFSET = 2
FLAT_TAU = math.cos(math.radians(3.0))
GAMMA_TOL = 0.05


@dataclass(frozen=True, eq=False)
class NormalField:
    values: np.ndarray
    valid: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[:2]


def _pairs(n: int) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    # (row, col) offsets of the two neighbours of each pair
    return [
        ((0, -n), (-n, 0)),
        ((0, n), (n, 0)),
        ((-n, -n), (n, -n)),
        ((-n, n), (n, n)),
    ]


def surface_normals(depth: DepthField, K: CameraIntrinsics, n: int = NEIGHBOR_OFFSET,
                    threads: int = 1) -> NormalField:
    h, w = depth.shape
    if n < 1:
        raise DomainError(f"neighbour offset must be >= 1, got {n}")
    if h <= 2 * n or w <= 2 * n:
        raise DomainError(f"image {w}x{h} too small for neighbour offset {n}")
    rays = K.pixel_rays()
    require_same_shape("depth vs camera", depth.shape, rays.shape[:2])
    P = rays * depth.values[..., None]
    ok = depth.valid
    pairs = _pairs(n)

    def block(r0: int, r1: int) -> tuple[np.ndarray, np.ndarray]:
        out = np.zeros((r1 - r0, w, 3))
        good = np.zeros((r1 - r0, w), dtype=bool)
        lo, hi = max(r0, n), min(r1, h - n)
        if lo >= hi:
            return out, good
        rows, cols = slice(lo, hi), slice(n, w - n)
        centre = P[rows, cols]
        valid = ok[rows, cols].copy()
        total = np.zeros_like(centre)

        def at(di: int, dj: int) -> tuple[np.ndarray, np.ndarray]:
            rs, cs = slice(lo + di, hi + di), slice(n + dj, w - n + dj)
            return P[rs, cs], ok[rs, cs]

        for (a, b) in pairs:
            pa, va = at(*a)
            pb, vb = at(*b)
            c = np.cross(pa - centre, pb - centre)
            norm = np.linalg.norm(c, axis=-1)
            valid &= va & vb & (norm > 1e-15)
            c = c / np.where(norm > 0, norm, 1.0)[..., None]
            facing = np.where((c * centre).sum(axis=-1) > 0, -1.0, 1.0)
            total += c * facing[..., None]

        mean = total / 4.0
        length = np.linalg.norm(mean, axis=-1)
        valid &= length > 1e-12
        normal = mean / np.where(valid, length, 1.0)[..., None]
        out[lo - r0:hi - r0, n:w - n] = np.where(valid[..., None], normal, 0.0)
        good[lo - r0:hi - r0, n:w - n] = valid
        return out, good

    values, valid = map_rows(block, h, threads)
    return NormalField(values, valid)


def flat_mask(normals: NormalField, plane_normal: np.ndarray, tau: float = FLAT_TAU) -> np.ndarray:
    """1 where |cos(n(p), N)| > tau."""
    if not 0.0 < tau < 1.0:
        raise DomainError(f"tau must lie in (0, 1), got {tau}")
    N = np.asarray(plane_normal, dtype=np.float64)
    N = N / np.linalg.norm(N)
    cos = np.abs(normals.values @ N)
    return normals.valid & (cos > tau)


# ---------------------------------------------------------------------------
# Trapezoid road prior
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Trapezoid:
    """Corner fractions of the road prior: bottom edge on the last row, top edge at top_row·H."""
    top_row: float = 0.55
    top_left: float = 0.35
    top_right: float = 0.65
    bottom_left: float = 0.05
    bottom_right: float = 0.95

    def mask(self, width: int, height: int) -> np.ndarray:
        v, u = np.mgrid[0:height, 0:width].astype(np.float64)
        r_top = self.top_row * height
        span = max(height - 1 - r_top, 1e-12)
        t = np.clip((v - r_top) / span, 0.0, 1.0)
        left = (self.top_left + t * (self.bottom_left - self.top_left)) * width
        right = (self.top_right + t * (self.bottom_right - self.top_right)) * width
        return (v >= r_top) & (u >= left) & (u <= right)


def trapezoid_road_mask(width: int, height: int, gamma: StructureField | None = None,
                        gamma_tol: float = GAMMA_TOL, shape: Trapezoid = Trapezoid()) -> np.ndarray:
    """Trapezoid prior restricted to pixels with |γ| ≤ gamma_tol (when γ is given)."""
    if not gamma_tol > 0:
        raise DomainError(f"gamma_tol must be positive, got {gamma_tol}")
    mask = shape.mask(width, height)
    if gamma is not None:
        require_same_shape("structure vs image", gamma.shape, (height, width))
        mask &= gamma.valid & (np.abs(gamma.values) <= gamma_tol)
    return mask


def road_flat_mask(normals: NormalField, plane_normal: np.ndarray, gamma: StructureField | None,
                   tau: float = FLAT_TAU, gamma_tol: float = GAMMA_TOL,
                   shape: Trapezoid = Trapezoid()) -> np.ndarray:
    """M_flat: cosine flat mask ∩ trapezoid ∩ |γ| ≤ gamma_tol."""
    h, w = normals.shape
    return flat_mask(normals, plane_normal, tau) & trapezoid_road_mask(w, h, gamma, gamma_tol, shape)
