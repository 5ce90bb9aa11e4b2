"""Independent quadrature oracles shared by the test modules."""

import math

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator


def increment_integral(A, ell, sigma, eps, x_prev, k):
    """int d^k exp(-W(d)/eps) dd for the 1-D quadratic scenario, W = E(x+d) - E(x) + sigma|d|."""
    w = A * x_prev - ell

    def f(d):
        return d**k * math.exp(-(w * d + 0.5 * A * d * d + sigma * abs(d)) / eps)

    L = 200 * eps
    opts = dict(epsabs=0, epsrel=1e-12, limit=200)
    return quad(f, -L, 0, **opts)[0] + quad(f, 0, L, **opts)[0]


def increment_mean(A, ell, sigma, eps, x_prev=0.0):
    return increment_integral(A, ell, sigma, eps, x_prev, 1) / increment_integral(A, ell, sigma, eps, x_prev, 0)


def increment_cdf(A, ell, sigma, eps, x_prev=0.0, n_grid=4001):
    """CDF of the increment: quad over consecutive cells of a grid, then monotone interpolation."""
    w = A * x_prev - ell
    z0 = increment_integral(A, ell, sigma, eps, x_prev, 0)
    f = lambda d: math.exp(-(w * d + 0.5 * A * d * d + sigma * abs(d)) / eps) / z0
    L = 60 * eps
    grid = np.unique(np.concatenate([np.linspace(-L, L, n_grid), [0.0]]))
    cells = [quad(f, a, b, epsabs=1e-15, epsrel=1e-12)[0] for a, b in zip(grid[:-1], grid[1:])]
    cdf = np.concatenate([[0.0], np.cumsum(cells)])
    interp = PchipInterpolator(grid, cdf)
    return lambda d: np.clip(interp(np.clip(d, -L, L)), 0.0, 1.0)
