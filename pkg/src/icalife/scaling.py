"""Per-column standardization shared by the GP and the baseline regressors."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ColumnScaler:
    """Mean/std pairs for standardizing a 2-d feature block or a 1-d target."""

    mean: np.ndarray
    std: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def inverse_transform(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.std + self.mean


def fit_scaler(x: np.ndarray) -> ColumnScaler:
    """Fit per-column mean/std. Zero-variance columns get std 1 with a warning."""
    x = np.asarray(x, dtype=float)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    zero = std == 0.0
    if np.any(zero):
        logger.warning("zero-variance column(s) %s: scaler std set to 1",
                       np.nonzero(np.atleast_1d(zero))[0].tolist())
        std = np.where(zero, 1.0, std)
    return ColumnScaler(mean=mean, std=std)
