"""Z-score standardization with an explicit, reusable transform.

The population (divide-by-N) standard deviation is used throughout, and the
standardized matrix is augmented with a leading column of ones so downstream
linear utilities carry an intercept slot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError


@dataclass
class Standardization:
    """Per-variable shift/scale fitted on one data set, reusable on others."""

    means: np.ndarray
    stds: np.ndarray

    def apply(self, raw: np.ndarray) -> np.ndarray:
        raw = np.atleast_2d(np.asarray(raw, dtype=float))
        return (raw - self.means) / self.stds

    def augment(self, raw: np.ndarray) -> np.ndarray:
        """Standardize and prepend the constant-1 column."""
        z = self.apply(raw)
        return np.column_stack([np.ones(z.shape[0]), z])

    def invert(self, z: np.ndarray) -> np.ndarray:
        return np.atleast_2d(np.asarray(z, dtype=float)) * self.stds + self.means

    def to_dict(self) -> dict:
        return {"means": [float(v) for v in self.means],
                "stds": [float(v) for v in self.stds]}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardization":
        return cls(means=np.asarray(d["means"], dtype=float),
                   stds=np.asarray(d["stds"], dtype=float))

    @classmethod
    def identity(cls, dim: int) -> "Standardization":
        return cls(means=np.zeros(dim), stds=np.ones(dim))


def fit_standardization(raw: np.ndarray, names: list[str] | None = None) -> Standardization:
    """Fit per-column z-score parameters; a constant column is an error."""
    raw = np.atleast_2d(np.asarray(raw, dtype=float))
    if raw.shape[0] < 2:
        raise NumericError("standardization needs at least 2 rows")
    means = raw.mean(axis=0)
    stds = raw.std(axis=0)          # population convention (ddof=0)
    zero = np.flatnonzero(stds == 0.0)
    if zero.size:
        j = int(zero[0])
        label = names[j] if names else f"column {j}"
        raise NumericError(f"variable {label} has zero variance; cannot standardize")
    return Standardization(means=means, stds=stds)


def standardize_states(raw: np.ndarray, names: list[str] | None = None):
    """Fit on ``raw`` and return (augmented matrix, transform)."""
    transform = fit_standardization(raw, names)
    return transform.augment(raw), transform
