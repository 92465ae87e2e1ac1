"""Prediction generators that are calibrated by construction."""

import numpy as np


def calibrated_rare_predictions(n, seed):
    """p ~ U(0.5, 1) and y ~ Bernoulli(p): accuracy matches confidence."""
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.5, 1.0, n)
    y = (rng.random(n) < p).astype(int)
    return p, y
