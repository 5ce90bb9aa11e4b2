"""Product Gauss-Legendre rules on the unit sphere S^{n-1}.

Hyperspherical coordinates are used; every polar angle is split at pi/2 and
the azimuth at multiples of pi/2, so each panel lies inside one coordinate
orthant.  Integrands that are smooth away from the coordinate hyperplanes
(e.g. anything built from a weighted l1 norm) are then smooth on each panel
and the rule converges spectrally.
"""

from functools import lru_cache

import numpy as np
from scipy.special import gammaln


def sphere_area(n):
    """Hausdorff measure of S^{n-1}."""
    return float(np.exp(np.log(2.0) + 0.5 * n * np.log(np.pi) - gammaln(0.5 * n)))


def _panel_rule(q, edges):
    x, w = np.polynomial.legendre.leggauss(q)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        nodes.append(0.5 * (b - a) * x + 0.5 * (a + b))
        weights.append(0.5 * (b - a) * w)
    return np.concatenate(nodes), np.concatenate(weights)


@lru_cache(maxsize=32)
def sphere_rule(n, q):
    """Nodes ``(N, n)`` and weights ``(N,)`` integrating over S^{n-1}.

    ``q`` is the Gauss-Legendre order per panel per angle.  For ``n == 1`` the
    "sphere" is {-1, +1} with counting measure.
    """
    if n < 1:
        raise ValueError("dimension must be >= 1")
    if n == 1:
        u = np.array([[1.0], [-1.0]])
        wts = np.ones(2)
    else:
        az, waz = _panel_rule(q, np.linspace(0.0, 2 * np.pi, 5))
        angles = [az]
        weights = [waz]
        for _ in range(n - 2):
            pol, wpol = _panel_rule(q, np.array([0.0, 0.5 * np.pi, np.pi]))
            angles.insert(0, pol)
            weights.insert(0, wpol)
        grids = np.meshgrid(*angles, indexing="ij")
        wgrids = np.meshgrid(*weights, indexing="ij")
        phis = [g.ravel() for g in grids]
        wts = np.prod([g.ravel() for g in wgrids], axis=0)
        u = np.empty((phis[0].size, n))
        sin_prod = np.ones(phis[0].size)
        for k in range(n - 2):
            u[:, k] = sin_prod * np.cos(phis[k])
            # Jacobian factor sin^{n-2-k}(phi_k)
            wts = wts * np.sin(phis[k]) ** (n - 2 - k)
            sin_prod = sin_prod * np.sin(phis[k])
        u[:, n - 2] = sin_prod * np.cos(phis[-1])
        u[:, n - 1] = sin_prod * np.sin(phis[-1])
    u.setflags(write=False)
    wts.setflags(write=False)
    return u, wts
