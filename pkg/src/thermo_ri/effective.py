"""Effective dual dissipation potential and its Cramer transform.

For a one-homogeneous dissipation Psi the effective dual potential is the
log-partition function of the measure exp(-Psi(z)) dz tilted by w,

    F(w) = log int exp(-(<w, z> + Psi(z))) dz,

finite exactly when -w lies in the interior of the elastic region.  Its
gradient is minus the mean of the tilted density and its Hessian the
covariance.  ``EpsilonDualPotential`` adds the energy's higher-order Taylor
terms (scaled by eps) to the exponent; ``EffectivePotential`` is the convex
conjugate of F, evaluated by a damped Newton ascent.

Two additive normalizations of F are exposed.  ``"exact"`` is the literal
integral above.  ``"reduced"`` drops the w-independent constant so that the box
and ball closed forms read -sum log(sigma_i^2 - w_i^2) and
-(n+1)/2 log(sigma^2 - |w|^2).  Gradients do not depend on the choice.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import quad_vec
from scipy.special import gammaln, logsumexp

from . import _gaussexp
from .dissipation import BOUNDARY_TOL, DissipationPotential, ElasticRegion
from .energy import QuadraticEnergy
from .errors import ConvergenceError, DomainError, NearBoundaryError, ToleranceError
from .sphere import sphere_area, sphere_rule

_Q_MAX = {2: 4096, 3: 256}


def _as_dissipation(d):
    if isinstance(d, ElasticRegion):
        return DissipationPotential(d)
    return d


class EffectiveDualPotential:
    """F(w) with closed-form (box, ball) or spherical-quadrature backends.

    Parameters
    ----------
    dissipation : DissipationPotential or ElasticRegion
    backend : {"auto", "box", "ball", "quadrature"}
        ``"auto"`` picks the closed form matching the region kind and falls
        back to quadrature for general regions.
    normalization : {"exact", "reduced"}
    tol : float
        Target agreement of successive angular refinements.
    """

    def __init__(self, dissipation, backend="auto", normalization="exact", tol=1e-8, q0=16, guard=BOUNDARY_TOL):
        self.dissipation = _as_dissipation(dissipation)
        self.region = self.dissipation.region
        self.dim = self.region.dim
        kind = self.region.kind
        if backend == "auto":
            backend = kind if kind in ("box", "ball") else "quadrature"
        if backend in ("box", "ball") and backend != kind:
            raise ValueError(f"closed-form backend {backend!r} does not match a {kind!r} region")
        if backend not in ("box", "ball", "quadrature"):
            raise ValueError(f"unknown backend {backend!r}")
        if normalization not in ("exact", "reduced"):
            raise ValueError("normalization must be 'exact' or 'reduced'")
        if normalization == "reduced" and kind == "general":
            raise ValueError("the reduced normalization is only defined for box and ball regions")
        self.backend = backend
        self.normalization = normalization
        self.tol = tol
        self.q0 = q0
        self.guard = guard
        self._psi_cache = {}

    # -- constants -----------------------------------------------------------------

    @property
    def exact_offset(self):
        """Exact minus reduced normalization (w-independent)."""
        r = self.region
        if r.kind == "box":
            return float(np.sum(np.log(2 * r.sigma)))
        if r.kind == "ball":
            n, s = r.dim, float(r.sigma[0])
            # int exp(-s|z|) dz = |S^{n-1}| Gamma(n) / s^n, the reduced form gives s^{-(n+1)}
            return math.log(sphere_area(n)) + float(gammaln(n)) + math.log(s)
        raise ValueError("no reduced normalization for general regions")

    def _shift(self):
        return -self.exact_offset if self.normalization == "reduced" else 0.0

    def margin(self, w):
        return self.region.boundary_distance(-np.asarray(w, dtype=float))

    def _require_interior(self, w):
        d = float(self.margin(w))
        if d <= self.guard:
            raise NearBoundaryError(f"-w is within {self.guard:g} of the yield surface (distance {d:.3g})", d)
        return d

    # -- public evaluators ---------------------------------------------------------------

    def value(self, w):
        """F(w); +inf when -w is not interior (boundary distance <= guard)."""
        w = np.asarray(w, dtype=float)
        if not np.all(np.isfinite(w)):
            raise DomainError("non-finite covector")
        if self.backend != "quadrature":
            d = np.asarray(self.margin(w))
            out = np.full(d.shape, np.inf)
            ok = d > self.guard
            if np.any(ok):
                out[ok] = self._closed_value(w[ok] if w.ndim > 1 else w)
            return out[()]
        rows = np.atleast_2d(w).reshape(-1, self.dim)
        vals = np.empty(len(rows))
        for i, row in enumerate(rows):
            if float(self.margin(row)) <= self.guard:
                vals[i] = np.inf
            else:
                vals[i] = self._quadrature(row)[0] + self._shift()
        return vals.reshape(w.shape[:-1])[()] if w.ndim > 1 else float(vals[0])

    __call__ = value

    def gradient(self, w):
        w = np.asarray(w, dtype=float).reshape(self.dim)
        self._require_interior(w)
        if self.backend != "quadrature":
            return self._closed_gradient(w)
        return self._quadrature(w)[1]

    def hessian(self, w):
        w = np.asarray(w, dtype=float).reshape(self.dim)
        self._require_interior(w)
        if self.backend != "quadrature":
            return self._closed_hessian(w)
        return self._quadrature(w)[2]

    def evaluate_all(self, w):
        """(value, gradient, Hessian) in one pass."""
        w = np.asarray(w, dtype=float).reshape(self.dim)
        self._require_interior(w)
        if self.backend != "quadrature":
            return float(self._closed_value(w)), self._closed_gradient(w), self._closed_hessian(w)
        v, g, h = self._quadrature(w)
        return v + self._shift(), g, h

    # -- closed forms ---------------------------------------------------------------------

    def _closed_value(self, w):
        s = self.region.sigma
        if self.backend == "box":
            gap = (s - np.abs(w)) * (s + np.abs(w))
            v = -np.sum(np.log(gap), axis=-1)
        else:
            r = np.linalg.norm(w, axis=-1)
            v = -0.5 * (self.dim + 1) * np.log((s[0] - r) * (s[0] + r))
        return v + (self.exact_offset if self.normalization == "exact" else 0.0)

    def _closed_gradient(self, w):
        s = self.region.sigma
        if self.backend == "box":
            return 2 * w / ((s - np.abs(w)) * (s + np.abs(w)))
        r = np.linalg.norm(w)
        return (self.dim + 1) * w / ((s[0] - r) * (s[0] + r))

    def _closed_hessian(self, w):
        s = self.region.sigma
        if self.backend == "box":
            gap = (s - np.abs(w)) * (s + np.abs(w))
            return np.diag(2 * (s**2 + w**2) / gap**2)
        r = np.linalg.norm(w)
        gap = (s[0] - r) * (s[0] + r)
        return (self.dim + 1) * (np.eye(self.dim) / gap + 2 * np.outer(w, w) / gap**2)

    # -- spherical quadrature -------------------------------------------------------------

    def _rule(self, q):
        if q not in self._psi_cache:
            u, wts = sphere_rule(self.dim, q)
            self._psi_cache[q] = (u, np.log(wts), self.dissipation.region.support(u))
        return self._psi_cache[q]

    def _moments_on_rule(self, w, q):
        u, logw, psi_u = self._rule(q)
        n = self.dim
        m = u @ w + psi_u
        if np.any(m <= 0):
            raise NearBoundaryError("tilted measure not integrable on quadrature nodes", float(m.min()))
        # radial integrals: int r^{n-1+k} e^{-m r} dr = Gamma(n+k) / m^{n+k}
        logc = logw - n * np.log(m)
        log_z = logsumexp(logc)
        p = np.exp(logc - log_z)
        mean = (p * (n / m)) @ u
        second = (u * (p * n * (n + 1) / m**2)[:, None]).T @ u
        value = log_z + float(gammaln(n))
        return value, -mean, second - np.outer(mean, mean)

    def _quadrature(self, w):
        if self.dim == 1:
            return self._moments_on_rule(w, 1)
        q = self.q0
        q_max = _Q_MAX.get(self.dim, 32)
        prev = self._moments_on_rule(w, q)
        while True:
            q *= 2
            if q > q_max:
                raise ToleranceError(f"angular quadrature did not reach tol={self.tol:g} by order {q_max}")
            cur = self._moments_on_rule(w, q)
            dg = np.max(np.abs(cur[1] - prev[1]))
            if dg <= self.tol * (1 + np.max(np.abs(cur[1]))) and abs(cur[0] - prev[0]) <= self.tol:
                return cur
            prev = cur


class EpsilonDualPotential:
    """F_eps(w) = log int exp(-(<w,z> + T_eps(z) + Psi(z))) dz at a fixed anchor (t, x).

    ``T_eps(z) = (E(t, x + eps z) - E(t, x)) / eps - <DE(t, x), z>`` collects
    the k >= 2 Taylor terms of the energy.  ``eps == 0`` (or an energy with
    vanishing Hessian) reduces exactly to the base potential.
    """

    def __init__(self, base, energy, t, x, eps, radial_rtol=1e-11, s_max0=50.0):
        if eps < 0:
            raise DomainError("eps must be non-negative")
        self.base = base
        self.energy = energy
        self.t = float(t)
        self.x = np.asarray(x, dtype=float).reshape(base.dim)
        self.eps = float(eps)
        self.radial_rtol = radial_rtol
        self.s_max0 = s_max0
        quad_energy = isinstance(energy, QuadraticEnergy)
        self._trivial = self.eps == 0 or (quad_energy and not np.any(energy.A))
        self._closed_1d = (
            not self._trivial and quad_energy and base.dim == 1 and base.region.kind in ("box", "ball")
        )

    @property
    def dim(self):
        return self.base.dim

    @property
    def guard(self):
        return self.base.guard

    def margin(self, w):
        return self.base.margin(w)

    def _shift(self):
        return self.base._shift()

    def value(self, w):
        if self._trivial:
            return self.base.value(w)
        w = np.asarray(w, dtype=float).reshape(self.dim)
        if float(self.base.margin(w)) <= self.base.guard:
            return np.inf
        return self._moments(w)[0] + self._shift()

    __call__ = value

    def gradient(self, w):
        if self._trivial:
            return self.base.gradient(w)
        w = np.asarray(w, dtype=float).reshape(self.dim)
        self.base._require_interior(w)
        return self._moments(w)[1]

    def hessian(self, w):
        if self._trivial:
            return self.base.hessian(w)
        w = np.asarray(w, dtype=float).reshape(self.dim)
        self.base._require_interior(w)
        return self._moments(w)[2]

    def evaluate_all(self, w):
        if self._trivial:
            return self.base.evaluate_all(w)
        w = np.asarray(w, dtype=float).reshape(self.dim)
        self.base._require_interior(w)
        v, g, h = self._moments(w)
        return v + self._shift(), g, h

    def _moments(self, w):
        if self._closed_1d:
            return self._closed_form_1d(w)
        if self.dim == 1:
            return self._moments_on_rule(w, 1)
        q = self.base.q0
        q_max = _Q_MAX.get(self.dim, 32)
        prev = self._moments_on_rule(w, q)
        while True:
            q *= 2
            if q > q_max:
                raise ToleranceError("angular quadrature of the eps-potential did not converge")
            cur = self._moments_on_rule(w, q)
            if np.max(np.abs(cur[1] - prev[1])) <= self.base.tol * (1 + np.max(np.abs(cur[1]))):
                return cur
            prev = cur

    def _closed_form_1d(self, w):
        a = 0.5 * self.eps * float(self.energy.A[0, 0])
        sig_p = float(self.base.region.support(np.array([1.0])))
        sig_m = float(self.base.region.support(np.array([-1.0])))
        b = np.array([w[0] + sig_p, sig_m - w[0]])
        lm = _gaussexp.log_mass(a, b)
        log_z = float(np.logaddexp(lm[0], lm[1]))
        prob = np.exp(lm - log_z)
        m1, m2 = _gaussexp.moments(a, b)
        mean = prob[0] * m1[0] - prob[1] * m1[1]
        second = prob[0] * m2[0] + prob[1] * m2[1]
        return log_z, np.array([-mean]), np.array([[second - mean**2]])

    def abs_moment(self, w, p):
        """E|z|^p under the normalized tilted density exp(-(<w,z> + T_eps(z) + Psi(z)))."""
        w = np.asarray(w, dtype=float).reshape(self.dim)
        self.base._require_interior(w)
        n = self.dim
        q = self.base.q0
        q_max = _Q_MAX.get(n, 32)
        prev = None
        while True:
            u, logw, psi_u = self.base._rule(1 if n == 1 else q)
            m = u @ w + psi_u
            j0, jp = self._radial(m, u, powers=(n - 1, n - 1 + p))
            c = np.exp(logw - n * np.log(m) - np.max(logw - n * np.log(m)))
            cur = float(np.sum(c * jp / m**p) / np.sum(c * j0))
            if n == 1 or (prev is not None and abs(cur - prev) <= self.base.tol * max(1.0, abs(cur))):
                return cur
            prev = cur
            q *= 2
            if q > q_max:
                raise ToleranceError("angular quadrature of the absolute moment did not converge")

    def _radial(self, m, u, powers=None):
        """J_k = int_0^inf s^k exp(-s - T_eps(s u / m)) ds per direction (k = n-1, n, n+1 by default)."""
        n = self.dim
        N = m.size
        powers = (n - 1, n, n + 1) if powers is None else powers

        def integrand(s):
            z = (s / m)[:, None] * u
            tail = self.energy.taylor_tail(self.t, self.x, z, self.eps)
            base = np.exp(-s - tail)
            return np.concatenate([s**k * base for k in powers])

        s_max = self.s_max0
        while s_max <= 3200:
            res, _ = quad_vec(integrand, 0.0, s_max, epsabs=0.0, epsrel=self.radial_rtol, norm="max", limit=2000)
            end = integrand(s_max)
            if np.all(end * max(1.0, s_max) <= 1e-12 * np.maximum(res, 1e-300)):
                return tuple(res[k * N : (k + 1) * N] for k in range(len(powers)))
            s_max *= 2
        raise DomainError(f"transition density not integrable at eps={self.eps:g} (radial tail does not decay)")

    def _moments_on_rule(self, w, q):
        u, logw, psi_u = self.base._rule(q)
        n = self.dim
        m = u @ w + psi_u
        if np.any(m <= 0):
            raise NearBoundaryError("tilted measure not integrable on quadrature nodes", float(m.min()))
        j0, j1, j2 = self._radial(m, u)
        if np.any(j0 <= 0):
            raise ToleranceError("radial quadrature underflow")
        logc = logw - n * np.log(m) + np.log(j0)
        log_z = logsumexp(logc)
        p = np.exp(logc - log_z)
        r1 = j1 / (j0 * m)
        r2 = j2 / (j0 * m**2)
        mean = (p * r1) @ u
        second = (u * (p * r2)[:, None]).T @ u
        return log_z, -mean, second - np.outer(mean, mean)


class EffectivePotential:
    """Cramer transform G(x) = sup_w <w, x> - F(w) of an effective dual potential."""

    def __init__(self, dual, grad_tol=1e-9, max_iter=200):
        self.dual = dual
        self.grad_tol = grad_tol
        self.max_iter = max_iter

    def solve(self, x, w0=None):
        """Return ``(value, w_star, grad_norm, iterations)``."""
        x = np.asarray(x, dtype=float).reshape(self.dual.dim)
        if not np.all(np.isfinite(x)):
            raise DomainError("non-finite state")
        dual = self.dual
        w = np.zeros(dual.dim) if w0 is None else np.asarray(w0, dtype=float).copy()
        f, g_f, h_f = dual.evaluate_all(w)
        obj = float(w @ x - f)
        scale = max(1.0, float(np.linalg.norm(x)))
        for it in range(self.max_iter):
            grad = x - g_f
            gnorm = float(np.linalg.norm(grad))
            if gnorm <= self.grad_tol * scale:
                return obj, w, gnorm, it
            step = np.linalg.solve(h_f, grad)
            t = 1.0
            while True:
                cand = w + t * step
                if float(dual.margin(cand)) > dual.guard:
                    try:
                        fc, gc, hc = dual.evaluate_all(cand)
                    except NearBoundaryError:
                        fc = np.inf
                    oc = float(cand @ x - fc)
                    # near the optimum the objective gain drowns in roundoff; a halved gradient also counts
                    if np.isfinite(fc) and (oc >= obj + 1e-4 * t * float(grad @ step)
                                            or np.linalg.norm(x - gc) <= 0.5 * gnorm):
                        break
                t *= 0.5
                if t < 1e-14:
                    raise ConvergenceError("line search failed in Cramer transform", best=obj, residual=gnorm)
            w, f, g_f, h_f, obj = cand, fc, gc, hc, oc
        grad = x - g_f
        raise ConvergenceError(
            f"Cramer transform did not converge in {self.max_iter} iterations",
            best=obj,
            residual=float(np.linalg.norm(grad)),
        )

    def value(self, x):
        return self.solve(x)[0]

    __call__ = value

    def argmax(self, x):
        return self.solve(x)[1]

    def gradient(self, x):
        """DG(x) = w*(x), the maximizing covector."""
        return self.solve(x)[1]
