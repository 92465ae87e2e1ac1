"""Input validation helpers used by the public functions and estimators."""

import math
import numbers

import numpy as np

from .exceptions import ValidationError

COMMON = 0
RARE = 1
GROUP_NAMES = ("common", "rare")


def check_probability(value, name, *, low_open=False, high_open=False, low=0.0, high=1.0):
    """Check that ``value`` is a finite real within ``[low, high]``.

    ``low_open``/``high_open`` make the respective end exclusive.
    """
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise ValidationError(f"{name} must be a real number, got {value!r}")
    v = float(value)
    if not math.isfinite(v):
        raise ValidationError(f"{name} must be finite, got {v!r}")
    lo_bad = v <= low if low_open else v < low
    hi_bad = v >= high if high_open else v > high
    if lo_bad or hi_bad:
        lb = "(" if low_open else "["
        rb = ")" if high_open else "]"
        raise ValidationError(f"{name} must lie in {lb}{low:g}, {high:g}{rb}, got {v!r}")
    return v


def check_nonnegative(value, name):
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise ValidationError(f"{name} must be a real number, got {value!r}")
    v = float(value)
    if not math.isfinite(v) or v < 0:
        raise ValidationError(f"{name} must be finite and >= 0, got {v!r}")
    return v


def check_positive(value, name):
    v = check_nonnegative(value, name)
    if v <= 0:
        raise ValidationError(f"{name} must be > 0, got {v!r}")
    return v


def check_int(value, name, minimum=None):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ValidationError(f"{name} must be an integer, got {value!r}")
    v = int(value)
    if minimum is not None and v < minimum:
        raise ValidationError(f"{name} must be >= {minimum}, got {v}")
    return v


def check_seed(seed, name="seed"):
    v = check_int(seed, name)
    if not 0 <= v < 2**64:
        raise ValidationError(f"{name} must be a 64-bit unsigned integer, got {v}")
    return v


def check_finite_array(arr, name, ndim=None, dtype=float):
    a = np.asarray(arr, dtype=dtype)
    if ndim is not None and a.ndim != ndim:
        raise ValidationError(f"{name} must be {ndim}-dimensional, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} contains NaN or Inf")
    return a


def encode_groups(groups, n=None):
    """Map group tags (``"common"``/``"rare"``, 0/1 or booleans) to an int8 array."""
    g = np.asarray(groups)
    if g.ndim != 1:
        raise ValidationError(f"groups must be 1-dimensional, got shape {g.shape}")
    if g.dtype.kind in "USO":
        out = np.empty(g.shape[0], dtype=np.int8)
        for i, tag in enumerate(g):
            if tag == "common":
                out[i] = COMMON
            elif tag == "rare":
                out[i] = RARE
            else:
                raise ValidationError(f"group tag at index {i} must be 'common' or 'rare', got {tag!r}")
    else:
        if g.size and not np.all((g == 0) | (g == 1)):
            raise ValidationError("numeric group tags must be 0 (common) or 1 (rare)")
        out = g.astype(np.int8)
    if n is not None and out.shape[0] != n:
        raise ValidationError(f"groups has length {out.shape[0]}, expected {n}")
    return out


def check_binary_labels(y, n=None, name="y"):
    a = np.asarray(y)
    if a.ndim != 1:
        raise ValidationError(f"{name} must be 1-dimensional, got shape {a.shape}")
    if a.size and not np.all((a == 0) | (a == 1)):
        raise ValidationError(f"{name} must contain only 0/1 labels")
    if n is not None and a.shape[0] != n:
        raise ValidationError(f"{name} has length {a.shape[0]}, expected {n}")
    return a.astype(np.int8)


def group_name(code):
    return GROUP_NAMES[int(code)]


def group_code(name):
    if isinstance(name, str):
        try:
            return GROUP_NAMES.index(name)
        except ValueError:
            raise ValidationError(f"unknown group {name!r}; expected 'common' or 'rare'") from None
    code = int(name)
    if code not in (COMMON, RARE):
        raise ValidationError(f"unknown group code {name!r}")
    return code
