"""Mutual information of a thresholded Gaussian by numerical integration."""

import math

from scipy import integrate, stats


def threshold_mi(threshold, loc=0.0, scale=1.0):
    """I(X; Y) in nats for X ~ N(loc, scale^2), Y = 1[X > threshold].

    Integrates sum_y p(x, y) log(p(x, y) / (p(x) p(y))) over x; with
    deterministic labels p(x, y) is p(x) on one side of the threshold.
    """
    p1 = stats.norm.sf(threshold, loc, scale)
    p0 = 1.0 - p1
    pdf = lambda x: stats.norm.pdf(x, loc, scale)
    lo, _ = integrate.quad(lambda x: pdf(x) * -math.log(p0), -math.inf, threshold)
    hi, _ = integrate.quad(lambda x: pdf(x) * -math.log(p1), threshold, math.inf)
    return lo + hi
