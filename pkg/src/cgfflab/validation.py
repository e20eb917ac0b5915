"""Input validation helpers shared by the estimators and functional API."""

import numbers

import numpy as np


class ValidationError(ValueError):
    """Raised when an argument violates a documented precondition."""


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValidationError(f"{name} must be a finite real number, got {value!r}")
    if strict and value <= 0:
        raise ValidationError(f"{name} must be > 0, got {value!r}")
    if not strict and value < 0:
        raise ValidationError(f"{name} must be >= 0, got {value!r}")
    return float(value)


def check_alpha(alpha, allow_zero=False):
    ok = isinstance(alpha, numbers.Real) and (alpha >= 0 if allow_zero else alpha > 0) and alpha < 1
    if not ok:
        interval = "[0, 1)" if allow_zero else "(0, 1)"
        raise ValidationError(f"alpha must lie in {interval}, got {alpha!r}")
    return float(alpha)


def check_int(value, name, minimum=None):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ValidationError(f"{name} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ValidationError(f"{name} must be >= {minimum}, got {value!r}")
    return int(value)


def check_seed(seed):
    seed = check_int(seed, "seed", minimum=0)
    if seed >= 2**64:
        raise ValidationError("seed must fit in 64 bits")
    return seed


def is_power_of_two(n):
    return n >= 1 and (n & (n - 1)) == 0


def check_points(points):
    """Coerce to an ``(m, 2)`` float array; a single point gives ``m == 1``."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValidationError(f"points must have shape (2,) or (m, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("points must be finite")
    return arr
