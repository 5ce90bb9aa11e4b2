"""Experiment driver: convergence studies, assumption checkers and figure data."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import platform
import sys
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import scipy
from scipy import stats

from . import __version__
from .dissipation import ElasticRegion
from .effective import EffectiveDualPotential, EffectivePotential, EpsilonDualPotential
from .energy import ConstantLoad, QuadraticEnergy, SinusoidLoad, nonconvex_eddp_example
from .errors import FiniteEnergyViolation, NearBoundaryError
from .solvers import Partition, integrate_limit_ode, solve_rate_independent
from .thermal import ChainConfig, simulate_chain

KINDS = ("figure", "convergence", "assumption-check", "eps-rate")


@dataclass
class ExperimentSpec:
    """A named scenario plus study parameters.

    ``meshes`` lists the step sizes h of the uniform partitions; for the
    convergence kind they must be strictly decreasing.
    """

    name: str
    kind: str
    energy: object
    region: ElasticRegion
    x0: np.ndarray
    theta: float = 1.0
    meshes: tuple = (2e-2, 1e-2, 5e-3, 2.5e-3)
    replicates: int = 200
    seed: int = 0
    eta: float = 0.05
    out_dir: Optional[str] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        self.meshes = tuple(float(h) for h in self.meshes)
        if self.kind == "convergence" and any(b >= a for a, b in zip(self.meshes, self.meshes[1:])):
            raise ValueError("meshes must be strictly decreasing (refining)")

    @property
    def T(self):
        return self.energy.horizon

    def partitions(self):
        return [Partition.uniform(self.T, h=h) for h in self.meshes]


def ri_relaxed_scenario(theta=1.0, **kw):
    """Psi = 2|.|, E = 4x^2 - 3 sin(2 pi t) x on [0, 1], x0 = 0.15."""
    energy = QuadraticEnergy([[8.0]], SinusoidLoad([3.0], 1.0), horizon=1.0)
    kw.setdefault("kind", "convergence")
    return ExperimentSpec(name="ri-relaxed", energy=energy, region=ElasticRegion.box([2.0]), x0=[0.15],
                          theta=theta, **kw)


# -- fitting ------------------------------------------------------------------------------


def fit_loglog(x, y, level=0.95):
    """Least-squares slope of log y against log x with a ``level`` confidence interval."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3:
        raise ValueError("a slope needs at least three levels")
    if np.any(y <= 0):
        return np.nan, (np.nan, np.nan)
    res = stats.linregress(np.log(x), np.log(y))
    q = stats.t.ppf(0.5 + level / 2, x.size - 2)
    return float(res.slope), (float(res.slope - q * res.stderr), float(res.slope + q * res.stderr))


def decreasing_with_tolerance(values, rel=0.10, allowed=1):
    """Strictly decreasing sequence, except at most ``allowed`` increases of relative size <= ``rel``."""
    bad = 0
    for a, b in zip(values, values[1:]):
        if b < a:
            continue
        if b <= a * (1 + rel):
            bad += 1
        else:
            return False
    return bad <= allowed


# -- chain convergence study ---------------------------------------------------------------------


@dataclass
class ConvergenceReport:
    meshes: list
    prob_exceed: list
    prob_se: list
    mean_sup: list
    mean_se: list
    n_complete: list
    n_truncated: list
    eta: float
    slope: Optional[float] = None
    slope_ci: Optional[tuple] = None
    prob_slope: Optional[float] = None
    threshold: float = 0.45

    @property
    def probabilities_nonincreasing(self):
        p = np.asarray(self.prob_exceed)
        se = np.asarray(self.prob_se)
        return bool(np.all(np.diff(p) <= 3 * np.sqrt(se[1:] ** 2 + se[:-1] ** 2) + 1e-15))

    @property
    def mean_decreasing(self):
        return decreasing_with_tolerance(self.mean_sup)

    @property
    def passed(self):
        return bool(self.mean_decreasing and self.slope is not None and self.slope >= self.threshold)

    def table(self):
        return [
            {"h": h, "prob_exceed": p, "prob_se": ps, "mean_sup": m, "mean_se": ms, "complete": c, "truncated": t}
            for h, p, ps, m, ms, c, t in zip(self.meshes, self.prob_exceed, self.prob_se, self.mean_sup,
                                             self.mean_se, self.n_complete, self.n_truncated)
        ]

    def to_dict(self):
        d = asdict(self)
        d.update(passed=self.passed, mean_decreasing=self.mean_decreasing,
                 probabilities_nonincreasing=self.probabilities_nonincreasing)
        return d


def level_seed(seed, level):
    return int(np.random.SeedSequence([int(seed), int(level)]).generate_state(1)[0])


def reference_solution(spec, theta=None, dual=None):
    dual = EffectiveDualPotential(spec.region) if dual is None else dual
    sol = integrate_limit_ode(spec.energy, dual, spec.theta if theta is None else theta, spec.x0, spec.T)
    if sol.violated:
        raise FiniteEnergyViolation(f"reference ODE aborted: {sol.message}", time=sol.violation_time,
                                    distance=float(sol.margins[-1]))
    return sol


def run_convergence_study(spec, threads=None):
    """Chain-vs-limit-ODE sup-deviation statistics across the meshes of ``spec``."""
    dual = EffectiveDualPotential(spec.region)
    ref = reference_solution(spec, dual=dual)
    rows = {k: [] for k in ("prob", "prob_se", "mean", "mean_se", "complete", "trunc")}
    for level, P in enumerate(spec.partitions()):
        cfg = ChainConfig(spec.energy, spec.region, P, spec.theta, spec.x0, seed=level_seed(spec.seed, level),
                          replicates=spec.replicates, dual=dual)
        run = simulate_chain(cfg, threads=threads)
        dev = run.sup_deviation(ref)
        dev = dev[np.isfinite(dev)]
        k = dev.size
        p = float(np.mean(dev >= spec.eta)) if k else np.nan
        rows["prob"].append(p)
        rows["prob_se"].append(float(np.sqrt(p * (1 - p) / k)) if k else np.nan)
        rows["mean"].append(float(dev.mean()) if k else np.nan)
        rows["mean_se"].append(float(dev.std(ddof=1) / np.sqrt(k)) if k > 1 else np.nan)
        rows["complete"].append(int(k))
        rows["trunc"].append(run.n_truncated)
    rep = ConvergenceReport(list(spec.meshes), rows["prob"], rows["prob_se"], rows["mean"], rows["mean_se"],
                            rows["complete"], rows["trunc"], spec.eta)
    if len(spec.meshes) >= 3:
        rep.slope, rep.slope_ci = fit_loglog(spec.meshes, rep.mean_sup)
        if all(p > 0 for p in rep.prob_exceed):
            rep.prob_slope = fit_loglog(spec.meshes, rep.prob_exceed)[0]
    return rep


def chain_vs_rate_independent(spec, thetas=(1.0, 0.03), h=None, replicates=None):
    """Mean sup-distance of chain paths from the rate-independent solution for each theta."""
    h = spec.meshes[-1] if h is None else h
    P = Partition.uniform(spec.T, h=h)
    ri = solve_rate_independent(spec.energy, spec.region, P, spec.x0)
    out = {}
    for k, th in enumerate(thetas):
        cfg = ChainConfig(spec.energy, spec.region, P, th, spec.x0, seed=level_seed(spec.seed, 1000 + k),
                          replicates=replicates or spec.replicates)
        run = simulate_chain(cfg)
        dev = run.sup_deviation(ri)
        out[float(th)] = float(np.nanmean(dev))
    return out


def theta_recovery(spec, thetas=(1.0, 0.3, 0.1, 0.03), h_ri=1e-4):
    """sup-distance between the limit ODE at each theta and a fine rate-independent solution."""
    P = Partition.uniform(spec.T, h=h_ri)
    ri = solve_rate_independent(spec.energy, spec.region, P, spec.x0)
    dual = EffectiveDualPotential(spec.region)
    dist = []
    for th in thetas:
        sol = reference_solution(spec, theta=th, dual=dual)
        dist.append(ri.sup_distance(sol, extra_points=1))
    return list(map(float, thetas)), dist


# -- eps-rate study ------------------------------------------------------------------------


@dataclass
class EpsRateReport:
    eps: list
    grad_error: list
    flow_error: list
    grad_slope: Optional[float]
    flow_slope: Optional[float]
    grad_ci: Optional[tuple] = None
    flow_ci: Optional[tuple] = None
    threshold: float = 0.45

    @property
    def identically_zero(self):
        return bool(np.all(np.asarray(self.grad_error) == 0) and np.all(np.asarray(self.flow_error) == 0))

    @property
    def passed(self):
        if self.identically_zero:
            return True
        return bool(self.grad_slope is not None and self.flow_slope is not None
                    and self.grad_slope >= self.threshold and self.flow_slope >= self.threshold)

    def to_dict(self):
        d = asdict(self)
        d.update(passed=self.passed, identically_zero=self.identically_zero)
        return d


def eps_rate_scenario(A=1.0, sigma=1.0, ell=0.5, y0=0.0, T=1.0, K=(-0.8, 0.8),
                      eps=(1e-1, 3e-2, 1e-2, 3e-3, 1e-3), n_grid=33, theta=1.0):
    energy = QuadraticEnergy([[A]], ConstantLoad([ell]), horizon=T)
    return ExperimentSpec(name="eps-rate", kind="eps-rate", energy=energy, region=ElasticRegion.box([sigma]),
                          x0=[y0], theta=theta, meshes=(), params={"K": K, "eps": eps, "n_grid": n_grid})


def run_eps_rate_study(spec):
    """(a) sup_K |DF_eps - DF| and (b) sup_t |y_eps - y_0| of the two limit flows, versus eps."""
    base = EffectiveDualPotential(spec.region)
    K = spec.params.get("K", (-0.8, 0.8))
    eps_list = [float(e) for e in spec.params.get("eps", (1e-1, 3e-2, 1e-2, 3e-3, 1e-3))]
    n_grid = int(spec.params.get("n_grid", 33))
    lo, hi = np.atleast_1d(K[0]).astype(float), np.atleast_1d(K[1]).astype(float)
    axes = [np.linspace(a, b, n_grid) for a, b in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, base.dim)
    margins = np.atleast_1d(base.margin(grid))
    if np.min(margins) < 0.1 - 1e-12:
        raise ValueError("K must keep a boundary margin of at least 0.1")
    g0 = np.array([base.gradient(w) for w in grid])
    y0 = reference_solution(spec, dual=base)
    times = np.linspace(0.0, spec.T, 401)
    grad_err, flow_err = [], []
    for eps in eps_list:
        pot = EpsilonDualPotential(base, spec.energy, 0.0, spec.x0, eps)
        ge = np.array([pot.gradient(w) for w in grid])
        grad_err.append(float(np.max(np.abs(ge - g0))))
        ye = integrate_limit_ode(spec.energy, pot, spec.theta, spec.x0, spec.T)
        if ye.violated:
            raise FiniteEnergyViolation(ye.message, time=ye.violation_time)
        flow_err.append(float(np.max(np.abs(ye(times) - y0(times)))))
    rep = EpsRateReport(eps_list, grad_err, flow_err, None, None)
    if len(eps_list) >= 3 and not rep.identically_zero:
        rep.grad_slope, rep.grad_ci = fit_loglog(eps_list, grad_err)
        rep.flow_slope, rep.flow_ci = fit_loglog(eps_list, flow_err)
    return rep


# -- assumption checkers ----------------------------------------------------------------------


@dataclass
class CheckResult:
    passed: bool
    witness: Optional[dict] = None
    details: dict = field(default_factory=dict)


def check_nasty_convexity(energy, dual, t_grid, x_grid, rtol=1e-10):
    """Midpoint convexity of x -> F(DE(t, x)) over all grid pairs, for each t.

    Pairs whose midpoint or endpoints sit within the guard of the yield
    surface are skipped and counted.
    """
    x_grid = np.asarray(x_grid, dtype=float)
    if x_grid.ndim == 1:
        x_grid = x_grid[:, None]
    M = x_grid.shape[0]
    i, j = np.triu_indices(M, k=1)
    skipped = 0
    checked = 0
    worst = None
    for t in np.atleast_1d(t_grid):
        t = float(t)
        f = np.asarray(dual.value(energy.gradient(t, x_grid)), dtype=float).reshape(M)
        mid = 0.5 * (x_grid[i] + x_grid[j])
        fm = np.asarray(dual.value(energy.gradient(t, mid)), dtype=float).reshape(-1)
        avg = 0.5 * (f[i] + f[j])
        ok = np.isfinite(fm) & np.isfinite(avg)
        skipped += int(np.sum(~ok))
        checked += int(np.sum(ok))
        with np.errstate(invalid="ignore"):
            excess = np.where(ok, fm - avg - rtol * (1 + np.abs(avg)), -np.inf)
        k = int(np.argmax(excess))
        if excess[k] > 0 and (worst is None or excess[k] > worst["excess"]):
            worst = {"t": t, "x1": x_grid[i[k]].tolist(), "x2": x_grid[j[k]].tolist(),
                     "f_mid": float(fm[k]), "f_avg": float(avg[k]), "excess": float(excess[k])}
    return CheckResult(worst is None, worst, {"pairs_checked": checked, "pairs_skipped": skipped})


def check_finite_energy(energy, dual, theta, x0, T=None, n_load_samples=2001):
    """Integrate the limit ODE and report sup_t F(DE(t, y)) with a bounded / blow-up verdict.

    Also reports the two sufficient conditions: uniform convexity (gamma_E > 0
    with a finite declared bound on the load rate) and, for any energy, the
    small-load condition inf_t dist(l(t), yield surface) > 0 when D^2E = 0.
    """
    T = energy.horizon if T is None else T
    try:
        sol = integrate_limit_ode(energy, dual, theta, x0, T)
    except NearBoundaryError as exc:
        return CheckResult(False, {"time": 0.0, "distance": exc.distance}, {"verdict": "blow-up-detected",
                                                                            "reason": str(exc)})
    gamma = energy.convexity_modulus
    rate = getattr(energy, "load_rate_bound", None)
    if rate is None:
        rate = getattr(energy, "dt_grad_bound", None)
    uniform = bool(gamma is not None and gamma > 0 and rate is not None and np.isfinite(rate))
    small_load = None
    if isinstance(energy, QuadraticEnergy) and not np.any(energy.A):
        ts = np.linspace(0.0, T, n_load_samples)
        d = [float(dual.region.boundary_distance(energy.load.value(t))) for t in ts]
        small_load = bool(min(d) > 0)
    details = {
        "verdict": "blow-up-detected" if sol.violated else "bounded",
        "sup_trace": sol.max_trace,
        "min_margin": float(np.min(sol.margins)),
        "violation_time": sol.violation_time,
        "gamma_E": gamma,
        "load_rate_bound": rate,
        "uniform_convexity_condition": uniform,
        "small_load_condition": small_load,
    }
    witness = None if not sol.violated else {"time": sol.violation_time, "distance": float(sol.margins[-1])}
    return CheckResult(not sol.violated, witness, details)


# -- figures -----------------------------------------------------------------------------------


def _write_csv(path, header, columns):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in zip(*columns):
            wr.writerow([f"{float(v):.17g}" for v in row])


def ri_frontier(t, A=8.0, amp=3.0, sigma=2.0):
    """Boundary of the stable set A^{-1}(l(t) -/+ sigma) for the 1-D sinusoidal scenario."""
    ell = amp * np.sin(2 * np.pi * np.asarray(t))
    return (ell - sigma) / A, (ell + sigma) / A


def reproduce_figures(out_dir=None, n_w=399, n_x=241, n_v=401, n_t=401):
    """Compute the figure data; write CSVs when ``out_dir`` is given.  Returns a dict of arrays."""
    data = {}
    # effective potentials for Psi = |.|
    reg = ElasticRegion.box([1.0])
    dual = EffectiveDualPotential(reg, normalization="reduced")
    w = np.linspace(-1, 1, n_w + 2)[1:-1]
    data["edp_w"] = w
    data["edp_dual"] = np.asarray(dual.value(w[:, None]))
    data["edp_dual_grad"] = np.array([dual.gradient([v])[0] for v in w])
    cramer = EffectivePotential(dual)
    x = np.linspace(-6, 6, n_x)
    data["edp_x"] = x
    data["edp_psi"] = np.abs(x)
    data["edp_cramer"] = np.array([cramer.value([v]) for v in x])
    xs = np.array([1e-1, 1e-2, 1e-3])
    data["edp_small_x"] = xs
    data["edp_small_ratio"] = np.array([cramer.value([v]) / v**2 for v in xs])

    # non-convex composition
    V = nonconvex_eddp_example()
    xv = np.linspace(-1, 1, n_v)[:, None]
    dv = V.gradient(0.0, xv)
    data["nc_x"] = xv[:, 0]
    data["nc_V"] = V.evaluate(0.0, xv)
    data["nc_DV"] = dv[:, 0]
    data["nc_dual_of_DV"] = np.asarray(dual.value(dv))

    # rate-independent vs limit ODE
    spec = ri_relaxed_scenario()
    t = np.linspace(0, 1, n_t)
    ri = solve_rate_independent(spec.energy, spec.region, Partition.uniform(1.0, n_t - 1), spec.x0)
    d2 = EffectiveDualPotential(spec.region)
    data["ri_t"] = t
    data["ri_x"] = ri.values[:, 0]
    for th in (1.0, 0.1):
        data[f"ri_ode_theta_{th:g}"] = reference_solution(spec, theta=th, dual=d2)(t)[:, 0]
    data["ri_frontier_lo"], data["ri_frontier_hi"] = ri_frontier(t)

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write_csv(os.path.join(out_dir, "edp_dual.csv"), ["w", "dual", "dual_grad"],
                   [data["edp_w"], data["edp_dual"], data["edp_dual_grad"]])
        _write_csv(os.path.join(out_dir, "edp_primal.csv"), ["x", "psi", "cramer"],
                   [data["edp_x"], data["edp_psi"], data["edp_cramer"]])
        _write_csv(os.path.join(out_dir, "nonconvex.csv"), ["x", "V", "DV", "dual_of_DV"],
                   [data["nc_x"], data["nc_V"], data["nc_DV"], data["nc_dual_of_DV"]])
        _write_csv(os.path.join(out_dir, "ri_relaxed.csv"),
                   ["t", "x_ri", "y_theta_1", "y_theta_0.1", "frontier_lo", "frontier_hi"],
                   [data["ri_t"], data["ri_x"], data["ri_ode_theta_1"], data["ri_ode_theta_0.1"],
                    data["ri_frontier_lo"], data["ri_frontier_hi"]])
    return data


# -- manifests -------------------------------------------------------------------------------


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def manifest(config, seed, command=None, extra=None):
    m = {
        "config_hash": config_hash(config),
        "config": config,
        "seed": int(seed),
        "command": command,
        "versions": {
            "thermo_ri": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "platform": platform.platform(),
        },
    }
    if extra:
        m.update(extra)
    return m


def write_manifest(out_dir, config, seed, command=None, extra=None):
    os.makedirs(out_dir, exist_ok=True)
    m = manifest(config, seed, command, extra)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(m, fh, indent=2, default=str)
    return m
