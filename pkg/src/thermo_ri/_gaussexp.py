"""Half-line integrals of exp(-a z^2 - b z), a >= 0.

These are the one-dimensional building blocks of the thermalized transition
density for quadratic energies: on each side of the origin the density of
the scaled increment is a truncated Gaussian (a > 0) or an exponential
(a == 0).  Everything is evaluated in log form or through the scaled
complementary error function so nothing overflows for large |b|/sqrt(a).
"""

import numpy as np
from scipy.special import erfc, erfcx, gammaln

_SQRT2 = np.sqrt(2.0)
# above this value of alpha = b / sqrt(2a) the asymptotic series in a is used
_ALPHA_SERIES = 10.0
_N_SERIES = 40


def _log_erfcx(x):
    x = np.asarray(x, dtype=float)
    pos = x >= 0
    out = np.empty_like(x)
    out[pos] = np.log(erfcx(x[pos]))
    xn = x[~pos]
    out[~pos] = xn**2 + np.log(erfc(xn))
    return out


def _broadcast(a, b):
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    return a.astype(float), b.astype(float)


def log_mass(a, b):
    """log of int_0^inf exp(-a z^2 - b z) dz; +inf when a == 0 and b <= 0."""
    a, b = _broadcast(a, b)
    out = np.empty_like(a)
    zero = a == 0
    with np.errstate(divide="ignore"):
        out[zero] = np.where(b[zero] > 0, -np.log(np.where(b[zero] > 0, b[zero], 1.0)), np.inf)
    ap, bp = a[~zero], b[~zero]
    s = 1.0 / np.sqrt(2 * ap)
    out[~zero] = np.log(s) + 0.5 * np.log(np.pi / 2) + _log_erfcx(bp * s / _SQRT2)
    return out[()]


def moments(a, b):
    """Normalized first and second moments (E[Z], E[Z^2]) of the half-line density."""
    a, b = _broadcast(a, b)
    m1 = np.full_like(a, np.nan)
    m2 = np.full_like(a, np.nan)
    zero = a == 0
    ok = zero & (b > 0)
    m1[ok] = 1.0 / b[ok]
    m2[ok] = 2.0 / b[ok] ** 2

    pos = ~zero
    s = np.where(pos, 1.0 / np.sqrt(np.where(pos, 2 * a, 1.0)), 0.0)
    alpha = b * s
    direct = pos & (alpha <= _ALPHA_SERIES)
    if np.any(direct):
        al, ss = alpha[direct], s[direct]
        lam = np.sqrt(2 / np.pi) / erfcx(al / _SQRT2)
        m1[direct] = ss * (lam - al)
        m2[direct] = ss**2 * (1 + al * (al - lam))
    series = pos & ~direct
    if np.any(series):
        m1[series], m2[series] = _series_moments(a[series], b[series])
    return m1[()], m2[()]


def _series_moments(a, b):
    # int z^k e^{-bz} e^{-a z^2} = sum_j (-a)^j / j! (k+2j)! / b^{k+2j+1}; asymptotic, used for large b^2/a
    j = np.arange(_N_SERIES)[:, None]
    x = a[None, :] / b[None, :] ** 2
    sign = np.where(j % 2 == 0, 1.0, -1.0)

    def scaled(k):
        # terms of b^{k+1} I_k
        logt = j * np.log(x) - gammaln(j + 1) + gammaln(k + 2 * j + 1)
        t = sign * np.exp(logt)
        # truncate at the smallest term (optimal truncation of an asymptotic series)
        mags = np.abs(t)
        cut = np.argmin(mags, axis=0)
        mask = j <= cut[None, :]
        return np.sum(np.where(mask, t, 0.0), axis=0)

    s0, s1, s2 = scaled(0), scaled(1), scaled(2)
    return s1 / (s0 * b), s2 / (s0 * b**2)


def log_survival(a, b, z):
    """log P(Z > z) for the normalized half-line density, z >= 0."""
    a, b = _broadcast(a, b)
    z = np.broadcast_to(np.asarray(z, dtype=float), a.shape)
    out = np.empty_like(a)
    zero = a == 0
    out[zero] = -b[zero] * z[zero]
    pos = ~zero
    s = 1.0 / np.sqrt(2 * a[pos])
    al = b[pos] * s
    zz = z[pos]
    out[pos] = -(b[pos] * zz + a[pos] * zz**2) + _log_erfcx((al + zz / s) / _SQRT2) - _log_erfcx(al / _SQRT2)
    return out[()]


def _log_density(a, b, z, lm):
    return -(a * z**2 + b * z) - lm


def inverse_survival(a, b, log_p, max_iter=200):
    """Solve log P(Z > z) = log_p for z >= 0 (vectorized safeguarded Newton)."""
    a, b = _broadcast(a, b)
    shape = a.shape
    log_p = np.minimum(np.broadcast_to(np.asarray(log_p, dtype=float), shape).ravel(), 0.0)
    a, b = a.ravel(), b.ravel()
    lm = np.atleast_1d(log_mass(a, b))
    zero = a == 0
    z = np.zeros_like(a)
    z[zero] = -log_p[zero] / b[zero]
    idx = np.flatnonzero(~zero)
    if idx.size == 0:
        return z.reshape(shape)[()]
    aa, bb, tt, ll = a[idx], b[idx], log_p[idx], lm[idx]
    lo = np.zeros_like(aa)
    # upper bracket: grow until the survival drops below the target
    # for b >= 0 both exp(-b z) and exp(-a z^2) bound the survival, so the smaller root brackets
    hi = np.sqrt(-tt / aa)
    hi = np.where(bb > 0, np.minimum(hi, -tt / np.where(bb > 0, bb, 1.0)), hi) + 1e-300
    for _ in range(200):
        bad = log_survival(aa, bb, hi) > tt
        if not np.any(bad):
            break
        hi = np.where(bad, 2 * hi + 1.0 / np.sqrt(aa), hi)
    x = 0.5 * (lo + hi)
    # converged entries are frozen so a draw does not depend on the rest of the batch
    act = np.ones(x.shape, dtype=bool)
    for _ in range(max_iter):
        xa, la, ha = x[act], lo[act], hi[act]
        aa_, bb_, tt_, ll_ = aa[act], bb[act], tt[act], ll[act]
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            g = log_survival(aa_, bb_, xa) - tt_
            la = np.where(g > 0, xa, la)
            ha = np.where(g <= 0, xa, ha)
            # d/dz log S = -hazard
            hazard = np.exp(_log_density(aa_, bb_, xa, ll_) - (g + tt_))
            xn = xa + g / hazard
        inside = np.isfinite(xn) & (xn > la) & (xn < ha)
        xn = np.where(inside, xn, 0.5 * (la + ha))
        done = np.abs(xn - xa) <= 1e-15 * np.maximum(1.0, np.abs(xa))
        x[act], lo[act], hi[act] = xn, la, ha
        act[np.flatnonzero(act)[done]] = False
        if not np.any(act):
            break
    z[idx] = x
    return z.reshape(shape)[()]
