"""Input-validation helpers shared across the package.

These follow the spirit of ``sklearn.utils.validation``: every public entry
point funnels raw user input through one of these functions so that error
messages are uniform and name the offending argument.
"""
from __future__ import annotations

import numbers

import numpy as np


def check_positive_int(value, name: str, *, minimum: int = 1) -> int:
    """Return ``value`` as ``int`` or raise ``ValueError`` naming ``name``."""
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_positive_float(value, name: str, *, allow_zero: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise TypeError(f"{name} must be a real number, got {type(value).__name__}")
    value = float(value)
    if not np.isfinite(value) or value < 0 or (value == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise ValueError(f"{name} must be finite and {bound}, got {value}")
    return value


def check_intervals(intervals, name: str = "window") -> tuple[tuple[float, float], ...]:
    """Normalize one interval ``(a, b)`` or a list of intervals.

    Intervals are returned sorted, as float pairs, and must be disjoint.
    """
    arr = np.asarray(intervals, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] == 0:
        raise ValueError(f"{name} must be an interval (a, b) or a list of intervals")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} endpoints must be finite")
    if np.any(arr[:, 0] >= arr[:, 1]):
        raise ValueError(f"{name} intervals must satisfy a < b, got {arr.tolist()}")
    arr = arr[np.argsort(arr[:, 0])]
    if np.any(arr[1:, 0] < arr[:-1, 1]):
        raise ValueError(f"{name} intervals overlap: {arr.tolist()}")
    return tuple((float(a), float(b)) for a, b in arr)


def check_state_array(values, d: int, n: int, L: int, name: str = "state") -> np.ndarray:
    """Check that ``values`` has the box shape ``(2L+1,)*d + (n,)``."""
    values = np.asarray(values)
    expected = (2 * L + 1,) * d + (n,)
    if values.shape != expected:
        raise ValueError(f"{name} has shape {values.shape}, expected {expected}")
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{name} contains non-finite values")
    return values


def check_random_state(seed) -> np.random.Generator:
    """Turn ``None``/int/Generator into a ``numpy.random.Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, numbers.Integral):
        return np.random.default_rng(seed)
    raise TypeError(f"cannot build a random generator from {seed!r}")
