"""Elastic regions and the one-homogeneous dissipation potentials they induce.

A dissipation potential here is always the support function of a bounded,
closed, convex elastic region containing the origin in its interior,

    Psi(x) = sup { <l, x> : l in region }.

Three region kinds are provided: axis-aligned boxes (weighted l1 dissipation),
Euclidean balls (scaled Euclidean norm) and general regions given only by
their support function.  All norms are Euclidean.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import optimize
from scipy.special import ndtri
from scipy.stats import qmc

from .errors import DomainError

#: guard distance to the yield surface; points closer than this count as boundary
BOUNDARY_TOL = 1e-9

SupportFn = Callable[[np.ndarray], np.ndarray]


def _finite(x, what="input"):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError(f"non-finite {what}: {x!r}")
    return x


@dataclass(frozen=True, eq=False)
class ElasticRegion:
    """Geometry of the elastic region in the dual space.

    Use the constructors :meth:`box`, :meth:`ball` and :meth:`general`
    rather than instantiating directly.
    """

    kind: str
    dim: int
    sigma: Optional[np.ndarray] = None
    support_fn: Optional[SupportFn] = field(default=None, repr=False)
    inner_radius: float = 0.0
    outer_radius: float = 0.0

    @classmethod
    def box(cls, sigma):
        sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
        if sigma.ndim != 1 or np.any(~np.isfinite(sigma)) or np.any(sigma <= 0):
            raise ValueError("box half-widths must be a finite positive vector")
        sigma.setflags(write=False)
        return cls("box", sigma.size, sigma, None, float(sigma.min()), float(np.linalg.norm(sigma)))

    @classmethod
    def ball(cls, sigma, dim=1):
        sigma = float(sigma)
        if not np.isfinite(sigma) or sigma <= 0:
            raise ValueError("ball radius must be finite and positive")
        if dim < 1:
            raise ValueError("dimension must be >= 1")
        if dim == 1:
            # the 1-D ball is the 1-D box
            return cls.box([sigma])
        s = np.array([sigma])
        s.setflags(write=False)
        return cls("ball", int(dim), s, None, sigma, sigma)

    @classmethod
    def general(cls, support_fn, dim, inner_radius, outer_radius):
        """Region known only through ``support_fn``.

        ``support_fn`` maps an array of directions of shape ``(..., dim)`` to
        the support values of shape ``(...)``.  ``inner_radius`` and
        ``outer_radius`` are the radii of balls contained in / containing the
        region; they are checked by :meth:`check_radii`, not trusted blindly.
        """
        if not (0 < inner_radius <= outer_radius < np.inf):
            raise ValueError("need 0 < inner_radius <= outer_radius < inf")
        return cls("general", int(dim), None, support_fn, float(inner_radius), float(outer_radius))

    @classmethod
    def from_config(cls, cfg):
        kind = cfg["kind"].lower()
        if kind == "box":
            return cls.box(cfg["sigma"])
        if kind == "ball":
            return cls.ball(cfg["sigma"], int(cfg.get("dim", 1)))
        raise ValueError(f"unknown region kind {cfg['kind']!r} (expected 'box' or 'ball')")

    def to_config(self):
        if self.kind == "box":
            return {"kind": "box", "sigma": self.sigma.tolist()}
        if self.kind == "ball":
            return {"kind": "ball", "sigma": float(self.sigma[0]), "dim": self.dim}
        raise ValueError("general regions have no config representation")

    @property
    def c_psi(self):
        return self.inner_radius

    @property
    def C_psi(self):
        return self.outer_radius

    def support(self, u):
        """Support function h(u) = sup{<l,u> : l in region}, vectorized over leading axes."""
        u = np.asarray(u, dtype=float)
        if self.kind == "box":
            return np.abs(u) @ self.sigma
        if self.kind == "ball":
            return self.sigma[0] * np.linalg.norm(u, axis=-1)
        norms = np.linalg.norm(u, axis=-1)
        safe = np.where(norms > 0, norms, 1.0)
        out = np.asarray(self.support_fn(u / safe[..., None]), dtype=float) * norms
        return np.where(norms > 0, out, 0.0)

    def boundary_distance(self, w):
        """Signed Euclidean distance from ``w`` to the yield surface, positive inside."""
        w = _finite(w, "covector")
        if self.kind == "box":
            excess = np.abs(w) - self.sigma
            outside = np.linalg.norm(np.maximum(excess, 0.0), axis=-1)
            inside = np.min(-excess, axis=-1)
            return np.where(outside > 0, -outside, inside)[()]
        if self.kind == "ball":
            return (self.sigma[0] - np.linalg.norm(w, axis=-1))[()]
        # for any convex region the signed distance equals min_u h(u) - <w,u>
        w2 = np.atleast_2d(w)
        d = np.array([_sphere_min(self, -row)[0] for row in w2.reshape(-1, self.dim)])
        return d.reshape(w2.shape[:-1])[()] if np.ndim(w) > 1 else float(d[0])

    def contains(self, w, tol=0.0):
        return np.asarray(self.boundary_distance(w)) >= -tol

    def check_radii(self, n_dirs=2000, seed=0):
        """Sample directions and confirm c_psi <= h(u) <= C_psi; returns the observed range."""
        u = np.random.default_rng(seed).standard_normal((n_dirs, self.dim))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        h = self.support(u)
        lo, hi = float(h.min()), float(h.max())
        ok = lo >= self.inner_radius * (1 - 1e-12) and hi <= self.outer_radius * (1 + 1e-12)
        return ok, lo, hi


def _seed_directions(n):
    n_grid = 64 * n
    if n == 2:
        ang = np.linspace(0.0, 2 * np.pi, n_grid, endpoint=False)
        return np.column_stack([np.cos(ang), np.sin(ang)])
    pts = qmc.Halton(d=n, scramble=False).random(n_grid + 1)[1:]
    g = ndtri(np.clip(pts, 1e-12, 1 - 1e-12))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    eye = np.eye(n)
    return np.vstack([g, eye, -eye])


def _sphere_min(region, v, n_starts=3):
    """Minimize <v,u> + h(u) over the unit sphere; returns (value, argmin)."""
    v = np.asarray(v, dtype=float)
    n = v.size
    if n == 1:
        cand = np.array([[1.0], [-1.0]])
        vals = cand[:, 0] * v[0] + region.support(cand)
        k = int(np.argmin(vals))
        return float(vals[k]), cand[k]

    def f_dir(u):
        return float(u @ v + region.support(u))

    seeds = _seed_directions(n)
    vals = seeds @ v + region.support(seeds)
    order = np.argsort(vals)[:n_starts]
    best_val, best_u = float(vals[order[0]]), seeds[order[0]]

    if n == 2:
        step = 2 * np.pi / (64 * n)

        def f_ang(a):
            return f_dir(np.array([np.cos(a), np.sin(a)]))

        for k in order:
            a0 = np.arctan2(seeds[k, 1], seeds[k, 0])
            res = optimize.minimize_scalar(
                f_ang, bounds=(a0 - step, a0 + step), method="bounded", options={"xatol": 1e-13}
            )
            if res.fun < best_val:
                best_val, best_u = float(res.fun), np.array([np.cos(res.x), np.sin(res.x)])
        return best_val, best_u

    def f_vec(x):
        nx = np.linalg.norm(x)
        return f_dir(x / nx) if nx > 0 else np.inf

    for k in order:
        res = optimize.minimize(
            f_vec,
            seeds[k],
            method="Nelder-Mead",
            options={"xatol": 1e-13, "fatol": 1e-15, "maxiter": 20000},
        )
        u = res.x / np.linalg.norm(res.x)
        val = f_dir(u)
        if val < best_val:
            best_val, best_u = val, u
    return best_val, best_u


@dataclass(frozen=True, eq=False)
class DissipationPotential:
    """Psi = support function of ``region``; positively one-homogeneous and convex."""

    region: ElasticRegion

    @property
    def dim(self):
        return self.region.dim

    def __call__(self, x):
        x = _finite(x, "state")
        return self.region.support(x)[()]

    psi = __call__

    def conjugate_indicator(self, w):
        """Psi*(w): 0 on the (closed) elastic region, +inf outside."""
        d = np.asarray(self.region.boundary_distance(w))
        return np.where(d >= 0, 0.0, np.inf)[()]

    def inf_gap(self, v):
        """m(v) = inf{<v,u> + Psi(u) : |u| = 1}.

        Positive iff -v is interior to the elastic region, zero on the yield
        surface, negative outside.
        """
        v = _finite(v, "covector")
        if self.region.kind in ("box", "ball"):
            return self.region.boundary_distance(-v)
        v2 = np.atleast_2d(v)
        out = np.array([_sphere_min(self.region, row)[0] for row in v2.reshape(-1, self.dim)])
        return float(out[0]) if v.ndim <= 1 else out.reshape(v2.shape[:-1])

    def inf_gap_argmin(self, v):
        """(m(v), u*) with u* a minimizing unit direction."""
        v = _finite(v, "covector").reshape(self.dim)
        if self.region.kind == "general":
            return _sphere_min(self.region, v)
        if self.region.kind == "ball":
            nv = np.linalg.norm(v)
            u = -v / nv if nv > 0 else np.eye(self.dim)[0]
            return float(self.region.sigma[0] - nv), u
        # box: an axis direction attains the minimum for interior -v; fall back
        # to the sphere search (exact support) otherwise
        s = self.region.sigma
        vals = np.concatenate([v + s, -v + s])
        k = int(np.argmin(vals))
        m_axis = float(vals[k])
        if m_axis >= 0:
            u = np.zeros(self.dim)
            u[k % self.dim] = 1.0 if k < self.dim else -1.0
            return m_axis, u
        return _sphere_min(self.region, v)

    def prox(self, y, lam):
        """Proximal map of lam*Psi: argmin_x lam*Psi(x) + |x - y|^2 / 2."""
        y = _finite(y, "point")
        if self.region.kind == "box":
            return np.sign(y) * np.maximum(np.abs(y) - lam * self.region.sigma, 0.0)
        if self.region.kind == "ball":
            ny = np.linalg.norm(y, axis=-1, keepdims=True)
            shrink = np.maximum(ny - lam * self.region.sigma[0], 0.0)
            return np.where(ny > 0, y * shrink / np.where(ny > 0, ny, 1.0), 0.0)
        # x = s*u with s = max(<u,y> - lam*h(u), 0) maximized over the sphere
        m, u = _sphere_min(self.region, -y / lam)
        return np.zeros_like(y) if m >= 0 else (-lam * m) * u
