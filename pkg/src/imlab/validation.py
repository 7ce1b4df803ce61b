"""Input checks shared by the estimator layer and the harness."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_scalar

from .evolution import Model, SpectralModel
from .operators import BandProjectorSpec
from .spectral_field import GridSpec, SpectralField, grid_tables


def check_positive(value, name: str, *, strict: bool = True) -> float:
    """Positive finite real, returned as ``float``."""
    check_scalar(value, name, numbers.Real, min_val=0.0,
                 include_boundaries="neither" if strict else "left")
    if not np.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    return float(value)


def check_field(x, grid: GridSpec | None = None, name: str = "field") -> SpectralField:
    if not isinstance(x, SpectralField):
        raise TypeError(f"{name} must be a SpectralField, got {type(x).__name__}")
    if grid is not None and x.grid != grid:
        raise ValueError(f"{name} lives on {x.grid}, expected {grid}")
    return x


def check_state(x, model: Model, name: str = "state"):
    """Spectral models take fields on their grid; abstract models take vectors of the right length."""
    if isinstance(model, SpectralModel):
        return check_field(x, model.grid, name)
    arr = np.asarray(x, dtype=float)
    if arr.shape != model.levels.shape:
        raise ValueError(f"{name} must have shape {model.levels.shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_split(spec, model: Model) -> BandProjectorSpec:
    """``spec`` must cut the model's spectrum between two attained levels."""
    if not isinstance(spec, BandProjectorSpec):
        raise TypeError("spec must be a BandProjectorSpec")
    if isinstance(model, SpectralModel):
        t = grid_tables(model.grid)
        levels = np.unique(t.ksq[t.retained])
    else:
        levels = np.unique(model.levels)
    if spec.lam_n not in levels:
        raise ValueError(f"lam_n={spec.lam_n} is not an eigenvalue of the model")
    above = levels[levels > spec.lam_n]
    if above.size == 0 or above.min() != spec.lam_next:
        raise ValueError(f"lam_next={spec.lam_next} is not the level after lam_n={spec.lam_n}")
    return spec
