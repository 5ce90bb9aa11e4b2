"""Energetic potentials E(t, x) with derivative access, and stable-set queries."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dissipation import BOUNDARY_TOL, ElasticRegion
from .errors import DomainError


class Load:
    """Time-dependent covector l(t); subclasses provide ``value`` and optionally ``rate``."""

    dim: int
    lipschitz: Optional[float] = None

    def value(self, t):
        raise NotImplementedError

    def rate(self, t, h=1e-6):
        # central difference when no analytic rate is known
        return (self.value(t + h) - self.value(t - h)) / (2 * h)


class SinusoidLoad(Load):
    """l_i(t) = amp_i * sin(2*pi*freq*t + phase_i)."""

    def __init__(self, amp, freq=1.0, phase=0.0):
        self.amp = np.atleast_1d(np.asarray(amp, dtype=float))
        self.freq = float(freq)
        self.phase = np.broadcast_to(np.asarray(phase, dtype=float), self.amp.shape).copy()
        self.dim = self.amp.size
        self.lipschitz = float(np.linalg.norm(self.amp) * 2 * np.pi * abs(self.freq))

    def value(self, t):
        return self.amp * np.sin(2 * np.pi * self.freq * t + self.phase)

    def rate(self, t, h=None):
        w = 2 * np.pi * self.freq
        return self.amp * w * np.cos(w * t + self.phase)


class ConstantLoad(Load):
    def __init__(self, value):
        self._value = np.atleast_1d(np.asarray(value, dtype=float))
        self.dim = self._value.size
        self.lipschitz = 0.0

    def value(self, t):
        return self._value.copy()

    def rate(self, t, h=None):
        return np.zeros(self.dim)


class PiecewiseLinearLoad(Load):
    """Linear interpolation of a table ``values[k]`` at ``times[k]``; constant beyond the ends."""

    def __init__(self, times, values):
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float).reshape(self.times.size, -1)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("load table times must be strictly increasing")
        self.dim = self.values.shape[1]
        slopes = np.diff(self.values, axis=0) / np.diff(self.times)[:, None]
        self._slopes = slopes
        self.lipschitz = float(np.max(np.linalg.norm(slopes, axis=1))) if len(slopes) else 0.0

    def value(self, t):
        return np.array([np.interp(t, self.times, self.values[:, i]) for i in range(self.dim)])

    def rate(self, t, h=None):
        k = np.searchsorted(self.times, t, side="right") - 1
        if k < 0 or k >= len(self._slopes):
            return np.zeros(self.dim)
        return self._slopes[k].copy()


class CallbackLoad(Load):
    def __init__(self, fn, dim, rate=None, lipschitz=None):
        self._fn = fn
        self._rate = rate
        self.dim = int(dim)
        self.lipschitz = lipschitz

    def value(self, t):
        return np.atleast_1d(np.asarray(self._fn(t), dtype=float))

    def rate(self, t, h=1e-6):
        if self._rate is not None:
            return np.atleast_1d(np.asarray(self._rate(t), dtype=float))
        return super().rate(t, h)


def load_from_config(cfg):
    kind = cfg["kind"].lower()
    if kind == "sin":
        return SinusoidLoad(cfg["amp"], cfg.get("freq", 1.0), cfg.get("phase", 0.0))
    if kind in ("const", "constant"):
        return ConstantLoad(cfg["value"])
    if kind in ("table", "piecewise_linear"):
        return PiecewiseLinearLoad(cfg["times"], cfg["values"])
    raise ValueError(f"unknown load kind {cfg['kind']!r}")


class EnergyPotential:
    """Common interface: value, gradient, Hessian and time derivative of the gradient.

    ``x`` may carry leading batch axes: ``x.shape == (..., dim)``.
    """

    dim: int
    horizon: float

    def _check_time(self, t):
        t = float(t)
        slack = 1e-12 * max(1.0, self.horizon)
        if not (-slack <= t <= self.horizon + slack) or not np.isfinite(t):
            raise DomainError(f"time {t} outside [0, {self.horizon}]")
        return t

    def evaluate(self, t, x):
        raise NotImplementedError

    def gradient(self, t, x):
        raise NotImplementedError

    def hessian(self, t, x):
        raise NotImplementedError

    def dt_gradient(self, t, x):
        raise NotImplementedError

    def taylor_tail(self, t, x, z, eps):
        """(E(t, x + eps z) - E(t, x)) / eps - <DE(t, x), z>, i.e. the k >= 2 Taylor terms."""
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        if eps == 0:
            return np.zeros(z.shape[:-1])
        dE = self.evaluate(t, x + eps * z) - self.evaluate(t, x)
        return dE / eps - np.sum(z * self.gradient(t, x), axis=-1)

    @property
    def convexity_modulus(self):
        """Declared lower bound gamma_E on the Hessian eigenvalues (None if unknown)."""
        return None


class QuadraticEnergy(EnergyPotential):
    """E(t, x) = 1/2 <A x, x> - <l(t), x> with A symmetric non-negative."""

    def __init__(self, A, load, horizon=1.0, load_rate_bound=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max())):
            raise ValueError("A must be symmetric")
        eig = np.linalg.eigvalsh(A)
        if eig[0] < -1e-12 * max(1.0, abs(eig[-1])):
            raise ValueError(f"A must be non-negative (min eigenvalue {eig[0]:.3g})")
        if load.dim != A.shape[0]:
            raise ValueError("load dimension does not match A")
        if horizon <= 0:
            raise ValueError("horizon must be positive")
        self.A = A
        self.load = load
        self.horizon = float(horizon)
        self.dim = A.shape[0]
        self.eigenvalues = eig
        self.load_rate_bound = load_rate_bound if load_rate_bound is not None else load.lipschitz

    @classmethod
    def from_config(cls, cfg, horizon=1.0):
        return cls(cfg["A"], load_from_config(cfg["load"]), horizon=cfg.get("T", horizon))

    @property
    def grad_lipschitz(self):
        return float(max(self.eigenvalues[-1], 0.0))

    @property
    def derivative_bound(self):
        # D^2 E = A and all higher derivatives vanish
        return self.grad_lipschitz

    @property
    def convexity_modulus(self):
        return float(max(self.eigenvalues[0], 0.0))

    def evaluate(self, t, x):
        t = self._check_time(t)
        x = np.asarray(x, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", x, self.A, x) - x @ self.load.value(t)

    def gradient(self, t, x):
        t = self._check_time(t)
        return np.asarray(x, dtype=float) @ self.A - self.load.value(t)

    def hessian(self, t, x):
        self._check_time(t)
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.A, x.shape[:-1] + self.A.shape).copy()

    def dt_gradient(self, t, x):
        t = self._check_time(t)
        x = np.asarray(x, dtype=float)
        h = 1e-6 * self.horizon
        return np.broadcast_to(-self.load.rate(t, h), x.shape).copy()

    def taylor_tail(self, t, x, z, eps):
        z = np.asarray(z, dtype=float)
        return 0.5 * eps * np.einsum("...i,ij,...j->...", z, self.A, z)


class SmoothEnergy(EnergyPotential):
    """User-supplied smooth energy given by oracles.

    ``value(t, x)``, ``grad(t, x)`` and ``hess(t, x)`` must accept ``x`` with
    leading batch axes.  The bounds ``derivative_bound`` (sup over k >= 2 of
    the operator norm of D^k E), ``grad_lipschitz`` and ``convexity_modulus``
    are declarations; :meth:`check_derivatives` only spot-checks the oracles.
    """

    def __init__(self, value, grad, hess, dim, horizon=1.0, dt_grad=None,
                 derivative_bound=None, grad_lipschitz=None, convexity_modulus=None, dt_grad_bound=None):
        self._value = value
        self._grad = grad
        self._hess = hess
        self._dt_grad = dt_grad
        self.dim = int(dim)
        self.horizon = float(horizon)
        self.derivative_bound = derivative_bound
        self.grad_lipschitz = grad_lipschitz
        self._gamma = convexity_modulus
        self.dt_grad_bound = dt_grad_bound

    @property
    def convexity_modulus(self):
        return self._gamma

    def evaluate(self, t, x):
        t = self._check_time(t)
        return np.asarray(self._value(t, np.asarray(x, dtype=float)), dtype=float)

    def gradient(self, t, x):
        t = self._check_time(t)
        return np.asarray(self._grad(t, np.asarray(x, dtype=float)), dtype=float)

    def hessian(self, t, x):
        t = self._check_time(t)
        x = np.asarray(x, dtype=float)
        return np.asarray(self._hess(t, x), dtype=float).reshape(x.shape[:-1] + (self.dim, self.dim))

    def dt_gradient(self, t, x):
        t = self._check_time(t)
        if self._dt_grad is not None:
            return np.asarray(self._dt_grad(t, np.asarray(x, dtype=float)), dtype=float)
        h = 1e-6 * self.horizon
        lo, hi = max(t - h, 0.0), min(t + h, self.horizon)
        return (self._grad(hi, x) - self._grad(lo, x)) / (hi - lo)

    def check_derivatives(self, n_samples=100, scale=1.0, seed=0):
        """Max relative central-difference mismatch of (gradient, Hessian) over random (t, x)."""
        rng = np.random.default_rng(seed)
        worst_g = worst_h = 0.0
        for _ in range(n_samples):
            t = rng.uniform(0, self.horizon)
            x = scale * rng.standard_normal(self.dim)
            h = 1e-6 * max(1.0, np.linalg.norm(x))
            eye = np.eye(self.dim)
            fd_g = np.array([(self.evaluate(t, x + h * e) - self.evaluate(t, x - h * e)) / (2 * h) for e in eye])
            fd_h = np.array([(self.gradient(t, x + h * e) - self.gradient(t, x - h * e)) / (2 * h) for e in eye])
            g = self.gradient(t, x)
            H = self.hessian(t, x)
            worst_g = max(worst_g, np.linalg.norm(fd_g - g) / max(1.0, np.linalg.norm(g)))
            worst_h = max(worst_h, np.linalg.norm(fd_h - H) / max(1.0, np.linalg.norm(H)))
        return worst_g, worst_h


def nonconvex_eddp_example(horizon=1.0):
    """V(x) = x^2/20 + log(cosh(10 x))/20: strictly convex, yet Psi~*(DV) is not convex for Psi = |.|."""

    def value(t, x):
        x = x[..., 0]
        # log cosh written to avoid overflow
        ax = np.abs(10 * x)
        logcosh = ax + np.log1p(np.exp(-2 * ax)) - np.log(2.0)
        return x**2 / 20 + logcosh / 20

    def grad(t, x):
        return 0.5 * np.tanh(10 * x) + x / 10

    def hess(t, x):
        return (5.0 / np.cosh(10 * x) ** 2 + 0.1)[..., None]

    return SmoothEnergy(value, grad, hess, dim=1, horizon=horizon, dt_grad=lambda t, x: np.zeros_like(x),
                        derivative_bound=None, grad_lipschitz=5.1, convexity_modulus=0.1, dt_grad_bound=0.0)


@dataclass
class StableSetQuery:
    """Classifies states against the stable set S(t) = {x : -DE(t, x) in region}."""

    energy: EnergyPotential
    region: ElasticRegion
    tol: float = BOUNDARY_TOL

    def margin(self, t, x):
        return self.region.boundary_distance(-self.energy.gradient(t, x))

    def classify(self, t, x):
        """Return ``(status, margin)`` with status in {'interior', 'boundary', 'unstable'}."""
        m = float(self.margin(t, x))
        if abs(m) <= self.tol:
            return "boundary", m
        return ("interior" if m > 0 else "unstable"), m

    is_stable = classify
