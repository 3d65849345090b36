"""
Exceptions raised by the planar-parallax kernel.

All of them are ValueErrors: the CLI turns any of these into exit code 2 and the
run service into HTTP 400. Per-pixel problems never raise; they clear the
pixel's validity flag instead.
"""

from __future__ import annotations


class ParallaxError(ValueError):
    pass


class InvalidIntrinsicsError(ParallaxError):
    pass


class InvalidPoseError(ParallaxError):
    pass


class InvalidPlaneError(ParallaxError):
    pass


class SingularHomographyError(ParallaxError):
    pass


class DomainError(ParallaxError):
    """Argument outside the domain of the operation (e.g. non-positive depth)."""


class DegenerateBaselineError(ParallaxError):
    """T_z ≈ 0: the residual-flow relations need forward/backward motion."""


class ShapeMismatchError(ParallaxError):
    def __init__(self, what: str, a: tuple[int, ...], b: tuple[int, ...]):
        super().__init__(f"{what}: shape {tuple(a)} does not match shape {tuple(b)}")
        self.shapes = (tuple(a), tuple(b))


class EmptySourcesError(ParallaxError):
    pass


class EmptyMaskError(ParallaxError):
    pass


class UnknownStageError(ParallaxError):
    pass


class DegenerateFitError(ParallaxError):
    pass


class CameraBelowPlaneError(ParallaxError):
    pass


class ConfigError(ParallaxError):
    def __init__(self, key: str, message: str):
        super().__init__(f"config key '{key}': {message}")
        self.key = key
