"""
Means and a sliding-window filter for convergence histories.
"""

from collections import deque
from typing import Callable, Deque, Optional, Sequence, Union

import numpy as np

Values = Union[Sequence[float], np.ndarray]


def mean_arithmetic(values: Values) -> Optional[complex]:
    """Get the arithmetic mean of the input values."""
    values = np.asarray(values)
    if values.size == 0:
        return None
    return values.mean()


def mean_geometric(values: Values) -> Optional[float]:
    """Get the geometric mean of the (positive) input values."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return None
    if np.any(values <= 0):
        return 0.0
    return float(np.exp(np.mean(np.log(values))))


class FIRFilter:
    """
    Finite-window filter over the most recent `size` samples.

    `function` reduces the window to a single value; any of the means
    above can be used.
    """

    def __init__(
        self,
        size: int,
        function: Callable[[Values], Optional[float]] = mean_arithmetic,
    ) -> None:
        if size < 1:
            raise ValueError(f"window size {size} must be positive")
        self.size: int = size
        self.values: Deque[float] = deque(maxlen=size)
        self.function: Callable[[Values], Optional[float]] = function

    def iterate(self, value: float) -> Optional[float]:
        """
        Push one sample, dropping the oldest once the window is full.
        """
        self.values.append(value)
        return self.value

    @property
    def value(self) -> Optional[float]:
        """Reduced value of the current window, None while it is empty."""
        return self.function(list(self.values))


def convergence_factor(residuals: Sequence[float], window: int = 0) -> Optional[float]:
    """
    Geometric mean of successive residual ratios r_{k+1} / r_k.

    Only the last `window` ratios are used when `window` is positive.
    Returns None when fewer than two residuals are available.
    """
    if len(residuals) < 2:
        return None
    size = window if window > 0 else len(residuals) - 1
    fir = FIRFilter(size, mean_geometric)
    for previous, current in zip(residuals[:-1], residuals[1:]):
        fir.iterate(current / previous if previous > 0 else 0.0)
    return fir.value
