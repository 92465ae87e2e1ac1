"""Error-compensated reductions.

``math.fsum`` is exactly rounded, so the group decomposition of a mean
gradient holds to a few ulps regardless of summation order.
"""

import math

import numpy as np


def fsum(values):
    return math.fsum(np.asarray(values, dtype=float).ravel().tolist())


def fsum_columns(matrix):
    """Exactly rounded column sums of a 2-D array."""
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2:
        raise ValueError("fsum_columns expects a 2-D array")
    return np.array([math.fsum(col) for col in m.T.tolist()], dtype=float)


def fmean(values):
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("mean of empty array")
    return math.fsum(v.tolist()) / v.size


def fmean_rows(matrix):
    m = np.asarray(matrix, dtype=float)
    if m.shape[0] == 0:
        raise ValueError("mean of empty array")
    return fsum_columns(m) / m.shape[0]
