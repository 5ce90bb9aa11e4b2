"""Deterministic evolutions: the incremental rate-independent scheme and the limit ODE."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .dissipation import DissipationPotential, ElasticRegion
from .effective import EpsilonDualPotential
from .energy import StableSetQuery
from .errors import ConvergenceError, DomainError, FiniteEnergyViolation, NearBoundaryError

TOL_PROX = 1e-10


class Partition:
    """Strictly increasing knots 0 = t_0 < ... < t_N = T."""

    def __init__(self, knots):
        knots = np.asarray(knots, dtype=float)
        if knots.ndim != 1 or knots.size < 2:
            raise ValueError("a partition needs at least two knots")
        if not np.all(np.isfinite(knots)) or np.any(np.diff(knots) <= 0):
            raise ValueError("partition knots must be finite and strictly increasing")
        knots.setflags(write=False)
        self.knots = knots

    @classmethod
    def uniform(cls, T, n_steps=None, h=None, t0=0.0):
        if n_steps is None:
            if h is None:
                raise ValueError("give n_steps or h")
            n_steps = int(round((T - t0) / h))
            if n_steps < 1 or abs(n_steps * h - (T - t0)) > 1e-9 * (T - t0):
                raise ValueError(f"h={h} does not divide [{t0}, {T}]")
        return cls(np.linspace(t0, T, n_steps + 1))

    @property
    def dt(self):
        return np.diff(self.knots)

    @property
    def mesh(self):
        return float(self.dt.max())

    @property
    def n_steps(self):
        return self.knots.size - 1

    @property
    def T(self):
        return float(self.knots[-1])

    def __len__(self):
        return self.knots.size

    def __repr__(self):
        return f"Partition(n_steps={self.n_steps}, T={self.T:g}, mesh={self.mesh:.3g})"


@dataclass
class CadlagTrajectory:
    """Right-continuous piecewise-constant path through ``values[i]`` at ``partition.knots[i]``."""

    partition: Partition
    values: np.ndarray
    margins: Optional[np.ndarray] = None
    truncated_at: Optional[int] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.shape[0] != len(self.partition):
            raise ValueError("one value per knot is required")

    @property
    def dim(self):
        return self.values.shape[1]

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.partition.knots, t, side="right") - 1
        k = np.clip(k, 0, len(self.partition) - 1)
        return self.values[k]

    def left_limit(self, t):
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.partition.knots, t, side="left") - 1
        return self.values[np.clip(k, 0, len(self.partition) - 1)]

    def sup_distance(self, other, extra_points=1):
        """sup_t |self(t) - other(t)| over [0, T].

        ``other`` maps an array of times to states.  On each interval the
        constant value is compared at both ends (using the left limit at the
        right end) and at ``extra_points`` interior points.
        """
        return float(_cadlag_sup(self.partition.knots, self.values[None], other, extra_points)[0])


def _cadlag_sup(knots, values, other, extra_points=1):
    """Vectorized sup-distance for paths ``values`` of shape (R, N + 1, n) against a callable."""
    R, _, n = values.shape
    frac = np.linspace(0.0, 1.0, extra_points + 2)
    times = knots[:-1, None] + frac[None, :] * np.diff(knots)[:, None]
    ref = np.asarray(other(times.ravel())).reshape(times.shape + (n,))
    held = values[:, :-1, None, :]
    dev = np.linalg.norm(held - ref[None], axis=-1).max(axis=(1, 2))
    last = np.linalg.norm(values[:, -1] - np.asarray(other(knots[-1:])).reshape(1, n), axis=-1)
    return np.maximum(dev, last)


def _as_dissipation(d):
    return DissipationPotential(d) if isinstance(d, ElasticRegion) else d


def _step_size(energy):
    L = getattr(energy, "grad_lipschitz", None)
    if L is None:
        raise ValueError("energy must declare grad_lipschitz for the proximal step size")
    return 1.0 / (float(L) + 1.0)


def moreau_yosida_step(energy, dissipation, t_prev, t_next, x_prev, tol=TOL_PROX, max_iter=200000, return_info=False):
    """Minimize E(t_next, x) + Psi(x - x_prev) by proximal-gradient iteration from x_prev."""
    if not t_prev < t_next:
        raise DomainError("need t_prev < t_next")
    d = _as_dissipation(dissipation)
    x_prev = np.asarray(x_prev, dtype=float).reshape(d.dim)
    lam = _step_size(energy)
    x = x_prev.copy()
    res = np.inf
    for it in range(1, max_iter + 1):
        y = x - lam * energy.gradient(t_next, x) - x_prev
        x_new = x_prev + d.prox(y, lam)
        res = float(np.linalg.norm(x_new - x))
        x = x_new
        if not np.all(np.isfinite(x)):
            break
        if res <= tol:
            return (x, {"iterations": it, "residual": res}) if return_info else x
    raise ConvergenceError(
        f"incremental problem did not converge (residual {res:.3g} after {max_iter} iterations)",
        best=x,
        residual=res,
    )


def solve_rate_independent(energy, dissipation, partition, x0, tol=TOL_PROX):
    """Chain :func:`moreau_yosida_step` over ``partition``; margins of -DE against the region are recorded."""
    d = _as_dissipation(dissipation)
    x0 = np.asarray(x0, dtype=float).reshape(d.dim)
    if not np.all(np.isfinite(x0)):
        raise DomainError("non-finite initial state")
    knots = partition.knots
    query = StableSetQuery(energy, d.region)
    values = np.empty((knots.size, d.dim))
    margins = np.empty(knots.size)
    values[0] = x0
    margins[0] = query.margin(knots[0], x0)
    for i in range(partition.n_steps):
        try:
            values[i + 1] = moreau_yosida_step(energy, d, knots[i], knots[i + 1], values[i], tol=tol)
        except ConvergenceError as exc:
            raise ConvergenceError(f"step {i}: {exc}", best=exc.best, residual=exc.residual, step=i) from exc
        margins[i + 1] = query.margin(knots[i + 1], values[i + 1])
    return CadlagTrajectory(partition, values, margins)


@dataclass
class OdeSolution:
    """Limit-ODE solution with dense output and finite-energy diagnostics.

    ``trace`` holds F(DE(t, y(t))) at the accepted nodes and ``margins`` the
    boundary distances of -DE.  When the integration hit the yield surface,
    ``violated`` is set and the arrays stop at ``violation_time``.
    """

    t: np.ndarray
    y: np.ndarray
    dydt: np.ndarray
    trace: np.ndarray
    margins: np.ndarray
    method: str
    violated: bool = False
    violation_time: Optional[float] = None
    message: str = ""
    _interp: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.t.size >= 2:
            if self.method == "rk4":
                self._interp = CubicHermiteSpline(self.t, self.y, self.dydt, axis=0)
            else:
                self._interp = None

    @property
    def dim(self):
        return self.y.shape[1]

    @property
    def max_trace(self):
        return float(np.max(self.trace)) if self.trace.size else np.nan

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self._interp is not None:
            return self._interp(t)
        cols = [np.interp(t, self.t, self.y[:, j]) for j in range(self.dim)]
        return np.stack(cols, axis=-1)


def _rhs(energy, dual, theta):
    def f(t, y):
        return -theta * dual.gradient(energy.gradient(t, y))

    return f


def integrate_limit_ode(energy, dual, theta, x0, T=None, method="rk4", partition=None, atol=1e-8,
                        h0=None, h_min=1e-13, thermal_correction=False, max_steps=10**6):
    """Integrate y' = -theta * DF(DE(t, y)) with F the effective dual potential ``dual``.

    ``method="rk4"`` is classical RK4 with step-doubling error control;
    ``method="euler"`` runs y_{i+1} = y_i - dt_i theta DF(DE(t_{i+1}, y_i))
    on ``partition``.  With ``thermal_correction`` the Euler step uses the
    eps-perturbed potential at eps = theta dt_i, i.e. the exact mean increment
    of the thermalized chain.
    """
    x0 = np.asarray(x0, dtype=float).reshape(dual.dim)
    T = energy.horizon if T is None else float(T)
    m0 = float(dual.margin(energy.gradient(0.0, x0)))
    if m0 <= dual.guard:
        raise NearBoundaryError(f"initial state is not interior-stable (margin {m0:.3g})", m0)
    if method == "euler":
        if partition is None:
            raise ValueError("Euler integration needs a partition")
        return _euler(energy, dual, theta, x0, partition, thermal_correction)
    if method != "rk4":
        raise ValueError(f"unknown method {method!r}")
    return _rk4_adaptive(energy, dual, theta, x0, T, atol, h0, h_min, max_steps)


def _diagnostics(energy, dual, t, y):
    w = energy.gradient(t, y)
    return float(dual.value(w)), float(dual.margin(w))


def _euler(energy, dual, theta, x0, partition, thermal_correction):
    knots = partition.knots
    n = knots.size
    y = np.empty((n, dual.dim))
    dydt = np.zeros((n, dual.dim))
    trace = np.empty(n)
    margins = np.empty(n)
    y[0] = x0
    trace[0], margins[0] = _diagnostics(energy, dual, knots[0], x0)
    for i in range(n - 1):
        dt = knots[i + 1] - knots[i]
        w = energy.gradient(knots[i + 1], y[i])
        try:
            if thermal_correction:
                g = EpsilonDualPotential(dual, energy, knots[i + 1], y[i], theta * dt).gradient(w)
            else:
                g = dual.gradient(w)
        except NearBoundaryError as exc:
            return OdeSolution(knots[: i + 1], y[: i + 1], dydt[: i + 1], trace[: i + 1], margins[: i + 1], "euler",
                               True, float(knots[i]), f"finite-energy criterion violated: {exc}")
        dydt[i] = -theta * g
        y[i + 1] = y[i] + dt * dydt[i]
        trace[i + 1], margins[i + 1] = _diagnostics(energy, dual, knots[i + 1], y[i + 1])
    dydt[-1] = dydt[-2]
    return OdeSolution(knots.copy(), y, dydt, trace, margins, "euler")


def _rk4_step(f, t, y, h, k1):
    k2 = f(t + h / 2, y + h / 2 * k1)
    k3 = f(t + h / 2, y + h / 2 * k2)
    k4 = f(t + h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _rk4_adaptive(energy, dual, theta, x0, T, atol, h0, h_min, max_steps):
    f = _rhs(energy, dual, theta)
    t = 0.0
    y = x0.copy()
    k = f(t, y)
    ts, ys, ks = [t], [y.copy()], [k.copy()]
    tr0, mg0 = _diagnostics(energy, dual, t, y)
    trace, margins = [tr0], [mg0]
    h = min(h0 if h0 is not None else 1e-3 * T, T)
    for _ in range(max_steps):
        if t >= T:
            break
        h = min(h, T - t)
        try:
            y_big = _rk4_step(f, t, y, h, k)
            y_half = _rk4_step(f, t, y, h / 2, k)
            y_two = _rk4_step(f, t + h / 2, y_half, h / 2, f(t + h / 2, y_half))
            k_new = f(t + h, y_two + (y_two - y_big) / 15)
        except NearBoundaryError:
            h /= 2
            if h < h_min:
                return _violation(ts, ys, ks, trace, margins, t)
            continue
        err = float(np.max(np.abs(y_two - y_big))) / 15
        if err <= atol:
            t_new = T if T - (t + h) <= 1e-14 * T else t + h
            y = y_two + (y_two - y_big) / 15
            t = t_new
            k = k_new
            tr, mg = _diagnostics(energy, dual, t, y)
            ts.append(t)
            ys.append(y.copy())
            ks.append(k.copy())
            trace.append(tr)
            margins.append(mg)
        fac = 4.0 if err == 0 else min(4.0, max(0.1, 0.9 * (atol / err) ** 0.2))
        h *= fac
        if h < h_min:
            return _violation(ts, ys, ks, trace, margins, t)
    else:
        raise ConvergenceError("RK4 exceeded the step budget", best=y, residual=T - t)
    return OdeSolution(np.array(ts), np.array(ys), np.array(ks), np.array(trace), np.array(margins), "rk4")


def _violation(ts, ys, ks, trace, margins, t):
    return OdeSolution(np.array(ts), np.array(ys), np.array(ks), np.array(trace), np.array(margins), "rk4",
                       True, float(t), f"finite-energy criterion violated near t={t:.6g}")


def raise_if_violated(sol):
    if sol.violated:
        raise FiniteEnergyViolation(sol.message, time=sol.violation_time,
                                    distance=float(sol.margins[-1]) if sol.margins.size else None)
    return sol


def energy_balance_report(traj, energy, dissipation, tol=1e-9):
    """Per-step ledger of the incremental scheme.

    Columns: energy change, dissipated amount Psi(dx), load work
    E(t_{i+1}, x_i) - E(t_i, x_i), and the incremental optimality check
    W(x_i, x_{i+1}) <= W(x_i, x_i) with W(x, y) = E(t_{i+1}, y) + Psi(y - x).
    """
    d = _as_dissipation(dissipation)
    knots = traj.partition.knots
    x = traj.values
    rows = []
    for i in range(knots.size - 1):
        e_old = float(energy.evaluate(knots[i], x[i]))
        e_frozen = float(energy.evaluate(knots[i + 1], x[i]))
        e_new = float(energy.evaluate(knots[i + 1], x[i + 1]))
        diss = float(d(x[i + 1] - x[i]))
        w_new = e_new + diss
        rows.append({
            "step": i,
            "t": float(knots[i + 1]),
            "delta_energy": e_new - e_old,
            "dissipation": diss,
            "work": e_frozen - e_old,
            "w_new": w_new,
            "w_stay": e_frozen,
            "ok": bool(w_new <= e_frozen + tol * max(1.0, abs(e_frozen))),
        })
    return rows
