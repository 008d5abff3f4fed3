"""Input checks shared by the estimators and the functional API."""
import numpy as np
from sklearn.utils import check_array

from .exceptions import ConfigurationError


def check_vector(x, dim=None, name="vector"):
    """Return ``x`` as a finite 1-D float64 array, optionally of length ``dim``."""
    try:
        arr = check_array(np.asarray(x, dtype=np.float64).reshape(1, -1), dtype=np.float64)[0]
    except ValueError as exc:
        raise ConfigurationError(f"{name}: {exc}") from exc
    if dim is not None and arr.shape[0] != dim:
        raise ConfigurationError(f"{name} has dimension {arr.shape[0]}, expected {dim}")
    return arr


def check_trajectory(traj, dim=None):
    """Return a trajectory as an (n, D) float64 array with n >= 1."""
    try:
        arr = check_array(traj, dtype=np.float64, ensure_min_samples=1)
    except ValueError as exc:
        raise ConfigurationError(f"trajectory: {exc}") from exc
    if dim is not None and arr.shape[1] != dim:
        raise ConfigurationError(f"trajectory has state dimension {arr.shape[1]}, expected {dim}")
    return arr


def check_positive(value, name, strict=True):
    if not np.isfinite(value) or (value <= 0 if strict else value < 0):
        bound = "> 0" if strict else ">= 0"
        raise ConfigurationError(f"{name} must be {bound}, got {value}")
    return value
