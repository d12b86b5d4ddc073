"""Exception types shared across modules."""

from __future__ import annotations

import numpy as np


class NumericalError(RuntimeError):
    """A computation failed numerically (divergence, underflow, no fit)."""


class DivergenceError(NumericalError):
    """A simulated orbit left the finite range; carries the iterate index."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class ScalingRegionError(NumericalError):
    """No usable scaling region in a correlation sum; carries the curve."""

    def __init__(self, message: str, radii: np.ndarray, correlation_sums: np.ndarray):
        super().__init__(message)
        self.radii = radii
        self.correlation_sums = correlation_sums
