"""Slow, literal reference computations used to cross-check the vectorized code."""

import math
from fractions import Fraction

import numpy as np
from scipy import integrate


def brute_components(time, status, x):
    """Riemann-sum accumulators by explicit loops over grid points and subjects."""
    time = [float(t) for t in time]
    x = np.asarray(x, dtype=float)
    n, p = x.shape
    order = sorted(range(n), key=lambda i: time[i])
    grid = [time[i] for i in order]

    def xbar(t):
        members = [l for l in range(n) if time[l] >= t]
        return sum(x[l] for l in members) / len(members)

    a = np.zeros((p, p))
    prev = 0.0
    for t in grid:
        delta = t - prev
        prev = t
        m = xbar(t)
        for l in range(n):
            if time[l] >= t:
                r = x[l] - m
                a += np.outer(r, r) * delta
    d = np.zeros(p)
    sigma = np.zeros((p, p))
    for i in range(n):
        if status[i] == 1:
            r = x[i] - xbar(time[i])
            d += r
            sigma += np.outer(r, r)
    return a, d, sigma


def exact_pair_components():
    """Rational arithmetic for the two-subject fixture {(1,1,0),(2,1,1)}."""
    xbar1 = Fraction(0 + 1, 2)
    xbar2 = Fraction(1, 1)
    a = ((0 - xbar1) ** 2 + (1 - xbar1) ** 2) * 1 + (1 - xbar2) ** 2 * 1
    d = (0 - xbar1) + (1 - xbar2)
    sigma = (0 - xbar1) ** 2 + (1 - xbar2) ** 2
    return a, d, sigma


def censoring_probability(lam_cum, beta=(1.0, 0.5, 0.5), lo=0.02, hi=1.28):
    """P(T > C) for X1, X2 ~ U(0,1), X3 ~ Bernoulli(1/2), C ~ U(lo, hi), by quadrature."""
    total = 0.0
    for x3 in (0, 1):
        f = lambda c, x2, x1: math.exp(-lam_cum(c) - (beta[0] * x1 + beta[1] * x2 + beta[2] * x3) * c) / (hi - lo)
        v, _ = integrate.tplquad(f, 0, 1, 0, 1, lo, hi, epsabs=1e-13, epsrel=1e-12)
        total += 0.5 * v
    return total


def std_normal_cdf(x):
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))
