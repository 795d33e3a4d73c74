"""Input validation helpers used by every public entry point."""

from __future__ import annotations

import math
import warnings

import numpy as np

__all__ = [
    "check_scalar",
    "check_epsilon",
    "as_vector",
    "check_options",
]

#: loosest timescale ratio the asymptotic machinery is trusted with
EPSILON_HARD_LIMIT = 0.5
#: above this the expansions are formally valid but practically coarse
EPSILON_SOFT_LIMIT = 0.1


def check_scalar(value, name, *, positive=False, nonnegative=False,
                 maximum=None, integer=False):
    """Validate a numeric scalar and return it as float (or int)."""
    if isinstance(value, bool) or not isinstance(value, (int, float, np.integer, np.floating)):
        raise ValueError(f"{name} must be a real scalar, got {value!r}")
    if integer and float(value) != float(int(value)):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    value = int(value) if integer else float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")
    if positive and value <= 0:
        raise ValueError(f"{name} must be positive, got {value!r}")
    if nonnegative and value < 0:
        raise ValueError(f"{name} must be nonnegative, got {value!r}")
    if maximum is not None and value > maximum:
        raise ValueError(f"{name} must be <= {maximum}, got {value!r}")
    return value


def check_epsilon(epsilon):
    """Validate the timescale ratio; warn when it is large but legal."""
    epsilon = check_scalar(epsilon, "epsilon", positive=True,
                           maximum=EPSILON_HARD_LIMIT)
    if epsilon > EPSILON_SOFT_LIMIT:
        warnings.warn(
            f"epsilon = {epsilon} is large; asymptotic accuracy degrades "
            f"above {EPSILON_SOFT_LIMIT}",
            stacklevel=3,
        )
    return epsilon


def as_vector(value, name, *, size=None):
    """Coerce to a finite 1-d float array, optionally of fixed size."""
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if size is not None and arr.size != size:
        raise ValueError(f"{name} must have length {size}, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {arr!r}")
    return arr


def check_options(value, name, options):
    if value not in options:
        allowed = ", ".join(repr(o) for o in options)
        raise ValueError(f"{name} must be one of {allowed}, got {value!r}")
    return value
