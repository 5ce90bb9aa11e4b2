"""The thermalized gradient descent: a Markov chain with Gibbsian transition densities.

Given x_i, the next state has density proportional to

    exp(-(E(t_{i+1}, x_{i+1}) - E(t_{i+1}, x_i) + Psi(x_{i+1} - x_i)) / eps_i),

eps_i = theta * dt_i.  Everything is done in increment coordinates
z = (x_{i+1} - x_i) / eps, where the exponent reads
<w, z> + T_eps(z) + Psi(z) with w = DE(t_{i+1}, x_i) and T_eps the
higher-order Taylor terms of the energy.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _gaussexp
from .dissipation import BOUNDARY_TOL, DissipationPotential, ElasticRegion
from .effective import EffectiveDualPotential, EpsilonDualPotential
from .energy import EnergyPotential, QuadraticEnergy
from .errors import DomainError, NearBoundaryError, SamplerError
from .solvers import CadlagTrajectory, Partition, _cadlag_sup

SAMPLERS = ("auto", "inverse_cdf", "metropolis")


@dataclass
class ChainConfig:
    energy: EnergyPotential
    dissipation: DissipationPotential
    partition: Partition
    theta: float
    x0: np.ndarray
    seed: int = 0
    replicates: int = 1
    sampler: str = "auto"
    burn_in: int = 200
    thinning: int = 10
    dual: Optional[EffectiveDualPotential] = None

    def __post_init__(self):
        if isinstance(self.dissipation, ElasticRegion):
            self.dissipation = DissipationPotential(self.dissipation)
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        if self.replicates < 1:
            raise ValueError("need at least one replicate")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}")
        self.x0 = np.asarray(self.x0, dtype=float).reshape(self.dim)
        if self.energy.dim != self.dim:
            raise ValueError("energy and dissipation dimensions differ")
        if self.dual is None:
            self.dual = EffectiveDualPotential(self.dissipation)
        margin = float(self.dissipation.region.boundary_distance(-self.energy.gradient(0.0, self.x0)))
        if margin <= BOUNDARY_TOL:
            raise DomainError(f"x0 is not interior-stable (margin {margin:.3g})")

    @property
    def dim(self):
        return self.dissipation.dim

    @property
    def eps(self):
        """Per-step temperatures eps_i = theta * dt_i."""
        return self.theta * self.partition.dt

    @property
    def resolved_sampler(self):
        if self.sampler != "auto":
            return self.sampler
        return "inverse_cdf" if self.dim == 1 else "metropolis"


@dataclass
class ChainRun:
    """R sample paths on a shared partition plus diagnostics.

    ``paths`` has shape ``(R, N + 1, n)``; a truncated path holds NaN from
    the first step whose transition density was not integrable.
    """

    partition: Partition
    paths: np.ndarray
    truncated_at: np.ndarray
    acceptance: Optional[np.ndarray] = None
    seed: int = 0
    sampler: str = ""
    notes: dict = field(default_factory=dict)

    @property
    def replicates(self):
        return self.paths.shape[0]

    @property
    def n_truncated(self):
        return int(np.sum(self.truncated_at >= 0))

    def trajectory(self, r):
        t = int(self.truncated_at[r])
        return CadlagTrajectory(self.partition, self.paths[r], truncated_at=None if t < 0 else t)

    @property
    def trajectories(self):
        return [self.trajectory(r) for r in range(self.replicates)]

    def _complete(self):
        return self.paths[self.truncated_at < 0]

    def mean_path(self):
        return self._complete().mean(axis=0)

    def quantile_band(self, q=(0.05, 0.5, 0.95)):
        return np.quantile(self._complete(), q, axis=0)

    def step_moments(self):
        """Per-step ensemble mean and variance of the increments (complete paths only)."""
        inc = np.diff(self._complete(), axis=1)
        return inc.mean(axis=0), inc.var(axis=0, ddof=1) if inc.shape[0] > 1 else np.zeros(inc.shape[1:])

    def sup_deviation(self, reference, extra_points=1):
        """sup_t |X_r(t) - reference(t)| per replicate (NaN for truncated ones)."""
        out = np.full(self.replicates, np.nan)
        ok = self.truncated_at < 0
        if np.any(ok):
            out[ok] = _cadlag_sup(self.partition.knots, self.paths[ok], reference, extra_points)
        return out


# -- transition density ---------------------------------------------------------------


def _exponent_z(cfg, t_next, x_prev, z, eps):
    """<w, z> + T_eps(z) + Psi(z) for z of shape (..., n); x_prev broadcastable."""
    w = cfg.energy.gradient(t_next, x_prev)
    tail = cfg.energy.taylor_tail(t_next, x_prev, z, eps)
    return np.sum(w * z, axis=-1) + tail + cfg.dissipation.region.support(z)


def _quadratic_1d(cfg):
    return (
        cfg.dim == 1
        and isinstance(cfg.energy, QuadraticEnergy)
        and cfg.dissipation.region.kind in ("box", "ball")
    )


def _sides_1d(cfg, w, eps):
    """Half-line parameters (a, b_plus, b_minus) of the z-density in 1-D."""
    reg = cfg.dissipation.region
    a = 0.5 * eps * float(cfg.energy.A[0, 0])
    b_plus = float(reg.support(np.array([1.0]))) + w
    b_minus = float(reg.support(np.array([-1.0]))) - w
    return a, b_plus, b_minus


def log_normalizer_z(cfg, t_next, x_prev, eps):
    """log int exp(-(<w,z> + T_eps(z) + Psi(z))) dz at w = DE(t_next, x_prev)."""
    x_prev = np.asarray(x_prev, dtype=float).reshape(cfg.dim)
    w = cfg.energy.gradient(t_next, x_prev)
    if _quadratic_1d(cfg):
        a, bp, bm = _sides_1d(cfg, float(w[0]), eps)
        lm = _gaussexp.log_mass(a, np.array([bp, bm]))
        if not np.all(np.isfinite(lm)):
            raise NearBoundaryError("transition density is not integrable", float(min(bp, bm)))
        return float(np.logaddexp(lm[0], lm[1]))
    val = float(EpsilonDualPotential(cfg.dual, cfg.energy, t_next, x_prev, eps).value(w))
    if not np.isfinite(val):
        raise NearBoundaryError("normalizer needs -DE(t_next, x_prev) inside the elastic region",
                                float(cfg.dual.margin(w)))
    return val - cfg.dual._shift()


def transition_log_density(cfg, t_prev, t_next, x_prev, x_next, normalized=True):
    """log density of x_next given x_prev over one step.

    The unnormalized version is -W/eps with
    W = E(t_next, x_next) - E(t_next, x_prev) + Psi(x_next - x_prev).
    ``x_next`` may carry leading batch axes.
    """
    if not t_prev < t_next:
        raise DomainError("need t_prev < t_next")
    eps = cfg.theta * (t_next - t_prev)
    x_prev = np.asarray(x_prev, dtype=float).reshape(cfg.dim)
    x_next = np.asarray(x_next, dtype=float)
    work = (cfg.energy.evaluate(t_next, x_next) - cfg.energy.evaluate(t_next, x_prev)
            + cfg.dissipation.region.support(x_next - x_prev))
    out = -work / eps
    if normalized:
        out = out - cfg.dim * np.log(eps) - log_normalizer_z(cfg, t_next, x_prev, eps)
    return out


# -- samplers ------------------------------------------------------------------------------


def _inverse_cdf_quadratic(a, bp, bm, u):
    """Exact inverse CDF of the 1-D z-density (vectorized in bp, bm, u)."""
    lp = _gaussexp.log_mass(a, bp)
    ln = _gaussexp.log_mass(a, bm)
    log_z = np.logaddexp(lp, ln)
    log_pneg = ln - log_z
    log_ppos = lp - log_z
    neg = np.log(u) < log_pneg
    z = np.empty_like(u)
    if np.any(neg):
        z[neg] = -_gaussexp.inverse_survival(a, bm[neg], np.log(u[neg]) - log_pneg[neg])
    if np.any(~neg):
        z[~neg] = _gaussexp.inverse_survival(a, bp[~neg], np.log1p(-u[~neg]) - log_ppos[~neg])
    return z


class _TabulatedSampler:
    """Inverse-CDF sampling for a general 1-D log-density with a kink at 0.

    The CDF is tabulated on Gauss-Legendre panels and inverted by bisection
    to ``ptol`` in probability.
    """

    ORDER = 16

    def __init__(self, logf, n_panels=200, ptol=1e-10):
        self.logf = logf
        self.ptol = ptol
        self.xg, self.wg = np.polynomial.legendre.leggauss(self.ORDER)
        lo = -self._extent(lambda s: logf(-s))
        hi = self._extent(logf)
        edges = np.concatenate([np.linspace(lo, 0.0, n_panels + 1), np.linspace(0.0, hi, n_panels + 1)[1:]])
        self.edges = edges
        self.shift = float(np.max(logf(edges)))
        masses = self._panel_mass(edges[:-1], edges[1:])
        self.cdf = np.concatenate([[0.0], np.cumsum(masses)])
        self.total = self.cdf[-1]
        if not np.isfinite(self.total) or self.total <= 0:
            raise NearBoundaryError("transition density not integrable", 0.0)

    def _extent(self, logf_side):
        # grow until the density has dropped e^-45 below its running maximum
        z = 1.0
        best = float(logf_side(np.array(0.0)))
        for _ in range(60):
            val = float(logf_side(np.array(z)))
            best = max(best, val)
            if val < best - 45 and float(logf_side(np.array(2 * z))) < val:
                return z
            z *= 2
        raise NearBoundaryError("transition density is not integrable (no decay)", 0.0)

    def _panel_mass(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        mid = 0.5 * (a + b)
        half = 0.5 * (b - a)
        nodes = mid[..., None] + half[..., None] * self.xg
        vals = np.exp(self.logf(nodes) - self.shift)
        return half * (vals @ self.wg)

    def sample(self, u):
        u = np.asarray(u, dtype=float)
        target = u * self.total
        k = np.clip(np.searchsorted(self.cdf, target, side="right") - 1, 0, self.edges.size - 2)
        lo = self.edges[k].copy()
        hi = self.edges[k + 1].copy()
        base = self.cdf[k]
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            f = base + self._panel_mass(self.edges[k], mid) - target
            lo = np.where(f < 0, mid, lo)
            hi = np.where(f >= 0, mid, hi)
            if np.all(np.abs(f) <= self.ptol * self.total) and np.all(hi - lo <= 1e-13 * np.maximum(1, np.abs(mid))):
                break
            if np.all(hi - lo <= 1e-15 * np.maximum(1, np.abs(mid))):
                break
        return 0.5 * (lo + hi)


def _sample_inverse_cdf(cfg, t_next, x_prev, eps, u):
    """z draws for states ``x_prev`` (R, 1) and uniforms ``u`` (R,); NaN where not integrable."""
    w = cfg.energy.gradient(t_next, x_prev)[:, 0]
    if _quadratic_1d(cfg):
        a, bp, bm = _sides_1d(cfg, w, eps)
        z = np.full(u.shape, np.nan)
        if a > 0:
            ok = np.ones(u.shape, dtype=bool)
        else:
            ok = (bp > BOUNDARY_TOL) & (bm > BOUNDARY_TOL)
        if np.any(ok):
            z[ok] = _inverse_cdf_quadratic(a, np.broadcast_to(bp, u.shape)[ok], np.broadcast_to(bm, u.shape)[ok], u[ok])
        return z
    z = np.full(u.shape, np.nan)
    for r in range(u.size):
        xr = x_prev[r]

        def logf(zz, xr=xr):
            zz = np.asarray(zz, dtype=float)
            return -_exponent_z(cfg, t_next, xr, zz[..., None], eps)

        try:
            z[r] = _TabulatedSampler(logf).sample(u[r])
        except NearBoundaryError:
            pass
    return z


def _initial_scale(cfg, t_next, x_prev, eps):
    """Random-walk scale in z for each replicate, from the decay rates of the z-density."""
    d = cfg.dissipation
    w = cfg.energy.gradient(t_next, x_prev)
    m = np.atleast_1d(d.region.boundary_distance(-w))
    try:
        lam = float(np.min(np.linalg.eigvalsh(np.atleast_2d(cfg.energy.hessian(t_next, x_prev[0])))))
    except Exception:
        lam = 0.0
    rate = np.maximum.reduce([m, np.full_like(m, np.sqrt(max(eps * lam, 0.0))), np.full_like(m, 1e-3)])
    return 2.4 / np.sqrt(cfg.dim) / rate


def _metropolis(cfg, t_next, x_prev, eps, normals, uniforms, burn_in, thinning):
    """Vectorized random-walk Metropolis in z over replicates.

    ``normals``: (R, K, n), ``uniforms``: (R, K) with K = burn_in + thinning.
    Returns (z, post-burn-in acceptance counts).
    """
    R, K, n = normals.shape

    def log_target(z):
        return -_exponent_z(cfg, t_next, x_prev, z, eps)

    z = np.zeros((R, n))
    lt = log_target(z)
    scale = _initial_scale(cfg, t_next, x_prev, eps)
    window = 20
    acc_win = np.zeros(R)
    acc_post = np.zeros(R)
    for k in range(K):
        prop = z + scale[:, None] * normals[:, k]
        lp = log_target(prop)
        accept = np.log(uniforms[:, k]) < lp - lt
        accept &= np.isfinite(lp)
        z = np.where(accept[:, None], prop, z)
        lt = np.where(accept, lp, lt)
        if k < burn_in:
            acc_win += accept
            if (k + 1) % window == 0:
                # adapt during burn-in only
                scale *= np.exp(2.0 * (acc_win / window - 0.3))
                acc_win[:] = 0
        else:
            acc_post += accept
    return z, acc_post


def _check_acceptance(acc, n_prop):
    rate = acc / n_prop
    se = np.sqrt(max(rate * (1 - rate), 1e-12) / n_prop)
    if rate < 0.2 - 3 * se or rate > 0.5 + 3 * se:
        raise SamplerError(f"Metropolis acceptance {rate:.3f} outside [0.2, 0.5] after tuning")
    return rate


def _mcmc_draws(seed, i, R_index, burn_in, thinning, n):
    K = burn_in + thinning
    normals = np.empty((len(R_index), K, n))
    uniforms = np.empty((len(R_index), K))
    for j, r in enumerate(R_index):
        g = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(r), int(i))))
        normals[j] = g.standard_normal((K, n))
        uniforms[j] = g.random(K)
    return normals, uniforms


def sample_step(cfg, t_prev, t_next, x_prev, rng=None, size=None):
    """Draw x_next from the transition density.

    ``x_prev`` is a single state; ``size`` draws are returned (shape
    ``(size, n)``, or ``(n,)`` when ``size`` is None).  ``rng`` is a numpy
    Generator or seed.
    """
    if not t_prev < t_next:
        raise DomainError("need t_prev < t_next")
    rng = np.random.default_rng(rng)
    eps = cfg.theta * (t_next - t_prev)
    x_prev = np.asarray(x_prev, dtype=float).reshape(cfg.dim)
    count = 1 if size is None else int(size)
    xs = np.broadcast_to(x_prev, (count, cfg.dim))
    if cfg.resolved_sampler == "inverse_cdf":
        if cfg.dim != 1:
            raise ValueError("the inverse-CDF sampler is one-dimensional")
        u = rng.random(count)
        if _quadratic_1d(cfg):
            z = _sample_inverse_cdf(cfg, t_next, xs, eps, u)
        else:
            def logf(zz):
                zz = np.asarray(zz, dtype=float)
                return -_exponent_z(cfg, t_next, x_prev, zz[..., None], eps)

            z = _TabulatedSampler(logf).sample(u)
        if np.any(np.isnan(z)):
            raise NearBoundaryError("transition density is not integrable", float("nan"))
        z = z[:, None]
    else:
        K = cfg.burn_in + cfg.thinning
        normals = rng.standard_normal((count, K, cfg.dim))
        uniforms = rng.random((count, K))
        z, acc = _metropolis(cfg, t_next, xs, eps, normals, uniforms, cfg.burn_in, cfg.thinning)
        _check_acceptance(acc.sum(), count * cfg.thinning)
    out = x_prev + eps * z
    return out[0] if size is None else out


def simulate_chain(cfg, threads=None):
    """Simulate ``cfg.replicates`` independent paths; replicate r uses substreams keyed by (seed, r[, step])."""
    P = cfg.partition
    N = P.n_steps
    R = cfg.replicates
    n = cfg.dim
    paths = np.full((R, N + 1, n), np.nan)
    paths[:, 0] = cfg.x0
    truncated = np.full(R, -1)
    eps = cfg.eps
    knots = P.knots
    sampler = cfg.resolved_sampler
    acceptance = None

    if sampler == "inverse_cdf":
        if n != 1:
            raise ValueError("the inverse-CDF sampler is one-dimensional")
        u = np.empty((R, N))
        for r in range(R):
            u[r] = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(r,))).random(N)
        if _quadratic_1d(cfg):
            for i in range(N):
                alive = truncated < 0
                if not np.any(alive):
                    break
                z = _sample_inverse_cdf(cfg, knots[i + 1], paths[alive, i], eps[i], u[alive, i])
                idx = np.flatnonzero(alive)
                bad = np.isnan(z)
                truncated[idx[bad]] = i
                paths[idx[~bad], i + 1, 0] = paths[idx[~bad], i, 0] + eps[i] * z[~bad]
        else:
            def run(r):
                x = paths[r, 0].copy()
                out = np.full((N + 1, 1), np.nan)
                out[0] = x
                for i in range(N):
                    z = _sample_inverse_cdf(cfg, knots[i + 1], x[None, :], eps[i], u[r, i : i + 1])[0]
                    if np.isnan(z):
                        return out, i
                    x = x + eps[i] * z
                    out[i + 1] = x
                return out, -1

            results = _map(run, range(R), threads)
            for r, (out, t) in enumerate(results):
                paths[r] = out
                truncated[r] = t
    else:
        acceptance = np.full(N, np.nan)
        for i in range(N):
            alive = np.flatnonzero(truncated < 0)
            if alive.size == 0:
                break
            normals, uniforms = _mcmc_draws(cfg.seed, i, alive, cfg.burn_in, cfg.thinning, n)
            xs = paths[alive, i]
            z, acc = _metropolis(cfg, knots[i + 1], xs, eps[i], normals, uniforms, cfg.burn_in, cfg.thinning)
            acceptance[i] = _check_acceptance(acc.sum(), alive.size * cfg.thinning)
            bad = ~np.all(np.isfinite(z), axis=1)
            truncated[alive[bad]] = i
            paths[alive[~bad], i + 1] = xs[~bad] + eps[i] * z[~bad]
    return ChainRun(P, paths, truncated, acceptance, cfg.seed, sampler)


def _map(fn, items, threads):
    items = list(items)
    if threads is None or threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def conditional_moment(cfg, t_prev, t_next, x_prev, p):
    """Quadrature moments of one increment.

    p = 1: the mean vector -eps * DF_eps(w), w = DE(t_next, x_prev).
    p = 2, 4: eps^p E|z|^p, which bounds E|dX|^p from above (here with equality).
    """
    if p not in (1, 2, 4):
        raise ValueError("p must be 1, 2 or 4")
    eps = cfg.theta * (t_next - t_prev)
    x_prev = np.asarray(x_prev, dtype=float).reshape(cfg.dim)
    w = cfg.energy.gradient(t_next, x_prev)
    pot = EpsilonDualPotential(cfg.dual, cfg.energy, t_next, x_prev, eps)
    if p == 1:
        return -eps * pot.gradient(w)
    return eps**p * pot.abs_moment(w, p)


def conditional_covariance(cfg, t_prev, t_next, x_prev):
    """Covariance of one increment: eps^2 * D^2 F_eps(w)."""
    eps = cfg.theta * (t_next - t_prev)
    x_prev = np.asarray(x_prev, dtype=float).reshape(cfg.dim)
    w = cfg.energy.gradient(t_next, x_prev)
    return eps**2 * EpsilonDualPotential(cfg.dual, cfg.energy, t_next, x_prev, eps).hessian(w)
