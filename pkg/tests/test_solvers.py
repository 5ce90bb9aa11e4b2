import math

import numpy as np
import pytest

from thermo_ri import (
    CallbackLoad,
    ConstantLoad,
    ConvergenceError,
    DissipationPotential,
    EffectiveDualPotential,
    ElasticRegion,
    FiniteEnergyViolation,
    NearBoundaryError,
    Partition,
    QuadraticEnergy,
    SinusoidLoad,
    energy_balance_report,
    integrate_limit_ode,
    moreau_yosida_step,
    solve_rate_independent,
)
from thermo_ri.harness import fit_loglog, ri_relaxed_scenario, theta_recovery
from thermo_ri.solvers import raise_if_violated

# first time |8 * 0.15 - 3 sin(2 pi t)| reaches 2
STICK_END = 0.5 + math.asin(0.8 / 3) / (2 * math.pi)


def unit_interval():
    return ElasticRegion.box([1.0])


def test_partition():
    P = Partition.uniform(1.0, h=0.25)
    np.testing.assert_allclose(P.knots, [0, 0.25, 0.5, 0.75, 1.0])
    assert P.n_steps == 4 and P.mesh == pytest.approx(0.25)
    with pytest.raises(ValueError):
        Partition([0.0, 0.5, 0.5, 1.0])


def test_my_step_jump():
    E = QuadraticEnergy([[1.0]], ConstantLoad([0.0]))
    # oracle: grid search on [-5, 5] with step 1e-4 puts the minimizer at 1
    x = moreau_yosida_step(E, unit_interval(), 0.0, 0.1, [3.0])
    assert x[0] == pytest.approx(1.0, abs=1e-9)


def test_my_step_stable_point_unchanged():
    E = QuadraticEnergy([[1.0]], ConstantLoad([0.0]))
    x, info = moreau_yosida_step(E, unit_interval(), 0.0, 0.1, [0.4], return_info=True)
    assert x[0] == 0.4
    assert info["residual"] <= 1e-10


def test_my_step_objective_decreases():
    rng = np.random.default_rng(0)
    for _ in range(20):
        M = rng.standard_normal((2, 2))
        E = QuadraticEnergy(M @ M.T + 0.1 * np.eye(2), ConstantLoad(rng.standard_normal(2)))
        d = DissipationPotential(ElasticRegion.ball(0.7, 2))
        xp = rng.standard_normal(2) * 2
        x = moreau_yosida_step(E, d, 0.0, 0.5, xp)
        f = lambda z: E.evaluate(0.5, z) + d(z - xp)
        assert f(x) <= f(xp) + 1e-12
        # no random perturbation does better
        for dz in rng.standard_normal((50, 2)) * 1e-3:
            assert f(x) <= f(x + dz) + 1e-12


def test_my_step_nonconvergence_reported():
    E = QuadraticEnergy([[1.0]], ConstantLoad([0.0]))
    with pytest.raises(ConvergenceError):
        moreau_yosida_step(E, unit_interval(), 0.0, 0.1, [30.0], max_iter=3)


def test_relaxed_scenario_sticks_then_tracks():
    s = ri_relaxed_scenario()
    P = Partition.uniform(1.0, h=1e-3)
    tr = solve_rate_independent(s.energy, s.region, P, s.x0)
    stuck = P.knots < STICK_END
    np.testing.assert_allclose(tr.values[stuck, 0], 0.15, atol=1e-10)
    assert abs(tr.values[~stuck][0, 0] - 0.15) > 0
    # after release the state follows the yield surface 8x - 3 sin(2 pi t) = 2
    moving = np.flatnonzero(~stuck)[:50]
    np.testing.assert_allclose(8 * tr.values[moving, 0] - 3 * np.sin(2 * np.pi * P.knots[moving]), 2.0, atol=1e-9)
    # stability after every step
    assert np.all(tr.margins >= -1e-9)


def test_relaxed_scenario_against_fine_mesh():
    s = ri_relaxed_scenario()
    fine = solve_rate_independent(s.energy, s.region, Partition.uniform(1.0, h=1e-4), s.x0)
    for h in (1e-2, 5e-3):
        tr = solve_rate_independent(s.energy, s.region, Partition.uniform(1.0, h=h), s.x0)
        assert tr.sup_distance(fine) < 5 * h


def test_mesh_halving_halves_distance():
    s = ri_relaxed_scenario()
    fine = solve_rate_independent(s.energy, s.region, Partition.uniform(1.0, h=1e-4), s.x0)
    d = [solve_rate_independent(s.energy, s.region, Partition.uniform(1.0, h=h), s.x0).sup_distance(fine)
         for h in (2e-2, 1e-2, 5e-3)]
    for a, b in zip(d, d[1:]):
        assert b <= 0.5 * a * 1.2


def test_small_load_is_static():
    E = QuadraticEnergy([[1.0, 0.0], [0.0, 2.0]], SinusoidLoad([0.3, 0.2]))
    reg = ElasticRegion.ball(1.0, 2)
    tr = solve_rate_independent(E, reg, Partition.uniform(1.0, n_steps=50), [0.1, -0.1])
    np.testing.assert_array_equal(tr.values, np.tile([0.1, -0.1], (51, 1)))


def test_energy_ledger():
    E = QuadraticEnergy([[1.0]], ConstantLoad([0.0]))
    d = DissipationPotential(unit_interval())
    tr = solve_rate_independent(E, d, Partition([0.0, 0.1, 0.2]), [3.0])
    led = energy_balance_report(tr, E, d)
    assert led[0]["dissipation"] == pytest.approx(2.0, abs=1e-9)
    assert led[1]["dissipation"] == pytest.approx(0.0, abs=1e-9)
    s = ri_relaxed_scenario()
    tr = solve_rate_independent(s.energy, s.region, Partition.uniform(1.0, h=1e-2), s.x0)
    led = energy_balance_report(tr, s.energy, DissipationPotential(s.region))
    assert all(r["ok"] for r in led)
    assert all(r["dissipation"] == 0.0 for r in led if r["t"] < STICK_END - 1e-2)


def test_cadlag_evaluation():
    P = Partition([0.0, 0.5, 1.0])
    s = ri_relaxed_scenario()
    tr = solve_rate_independent(s.energy, s.region, P, s.x0)
    assert tr(0.49)[0] == tr.values[0, 0]
    assert tr(0.5)[0] == tr.values[1, 0]
    assert tr.left_limit(0.5)[0] == tr.values[0, 0]


def test_cadlag_sup_distance_sees_interior_of_steps():
    P = Partition([0.0, 1.0])
    s = ri_relaxed_scenario()
    tr = solve_rate_independent(s.energy, s.region, P, s.x0)
    # reference line through the knot values, the deviation lies inside the step
    ref = lambda t: (tr.values[0] + np.multiply.outer(np.asarray(t), tr.values[1] - tr.values[0]))
    dist = tr.sup_distance(ref, extra_points=1)
    assert dist == pytest.approx(abs(tr.values[1, 0] - tr.values[0, 0]), abs=1e-15)


def random_scenario(rng):
    n = int(rng.integers(1, 4))
    M = rng.standard_normal((n, n))
    A = M @ M.T + 0.2 * np.eye(n)
    load = SinusoidLoad(rng.uniform(0.5, 4.0, n), rng.uniform(0.5, 2.0), rng.uniform(0, 1, n))
    reg = ElasticRegion.box(rng.uniform(0.3, 1.5, n)) if rng.random() < 0.5 else ElasticRegion.ball(rng.uniform(0.3, 1.5), n)
    x0 = rng.uniform(-0.3, 0.3, n)
    knots = np.concatenate([[0.0], np.sort(rng.uniform(0, 1, 38)), [1.0]])
    return A, load, reg, x0, knots


@pytest.mark.parametrize("seed", range(5))
def test_reparametrization_invariance(seed):
    rng = np.random.default_rng(100 + seed)
    A, load, reg, x0, knots = random_scenario(rng)
    # phi(s) = s^2 maps the knots sqrt(t_i) of P' onto those of P
    phi = lambda s: s**2
    E = QuadraticEnergy(A, load)
    E2 = QuadraticEnergy(A, CallbackLoad(lambda s: load.value(phi(s)), dim=A.shape[0]))
    a = solve_rate_independent(E, reg, Partition(knots), x0)
    b = solve_rate_independent(E2, reg, Partition(np.sqrt(knots)), x0)
    np.testing.assert_allclose(a.values, b.values, atol=1e-10, rtol=0)


@pytest.mark.parametrize("seed", range(5))
def test_concatenation_and_restriction(seed):
    rng = np.random.default_rng(200 + seed)
    A, load, reg, x0, knots = random_scenario(rng)
    knots = np.sort(np.append(knots, 0.5))
    E = QuadraticEnergy(A, load)
    full = solve_rate_independent(E, reg, Partition(knots), x0)
    k = int(np.flatnonzero(knots == 0.5)[0])
    first = solve_rate_independent(E, reg, Partition(knots[: k + 1]), x0)
    second = solve_rate_independent(E, reg, Partition(knots[k:]), first.values[-1])
    np.testing.assert_allclose(first.values, full.values[: k + 1], atol=1e-10, rtol=0)
    np.testing.assert_allclose(second.values, full.values[k:], atol=1e-10, rtol=0)


# -- limit ODE -------------------------------------------------------------------------------


def test_ode_constant_rhs():
    E = QuadraticEnergy([[0.0]], ConstantLoad([0.5]))
    dual = EffectiveDualPotential(unit_interval())
    sol = integrate_limit_ode(E, dual, 1.0, [0.0])
    # DE = -0.5, so y' = 2 * 0.5 / (1 - 0.25) = 4/3
    np.testing.assert_allclose(sol.y[:, 0], 4 / 3 * sol.t, atol=1e-9)
    assert sol(0.37)[0] == pytest.approx(4 / 3 * 0.37, abs=1e-9)
    assert sol.y[0, 0] == 0.0
    e = integrate_limit_ode(E, dual, 1.0, [0.0], method="euler", partition=Partition.uniform(1.0, h=0.1))
    np.testing.assert_allclose(e.y[:, 0], 4 / 3 * e.t, atol=1e-12)


def test_ode_zero_load_stays_put():
    E = QuadraticEnergy([[2.0, 0.3], [0.3, 1.0]], ConstantLoad([0.0, 0.0]))
    sol = integrate_limit_ode(E, EffectiveDualPotential(ElasticRegion.ball(1.0, 2)), 1.0, [0.0, 0.0])
    assert np.all(sol.y == 0.0)


def test_ode_flags_blow_up():
    E = QuadraticEnergy([[0.0]], SinusoidLoad([1.5]))
    sol = integrate_limit_ode(E, EffectiveDualPotential(unit_interval()), 1.0, [0.0])
    assert sol.violated
    assert sol.violation_time == pytest.approx(math.asin(2 / 3) / (2 * math.pi), abs=1e-4)
    with pytest.raises(FiniteEnergyViolation):
        raise_if_violated(sol)


def test_ode_rejects_unstable_start():
    E = QuadraticEnergy([[8.0]], SinusoidLoad([3.0]))
    with pytest.raises(NearBoundaryError):
        integrate_limit_ode(E, EffectiveDualPotential(ElasticRegion.box([2.0])), 1.0, [0.5])


def test_euler_first_order():
    s = ri_relaxed_scenario()
    dual = EffectiveDualPotential(s.region)
    ref = integrate_limit_ode(s.energy, dual, 1.0, s.x0)
    hs = (1e-2, 5e-3, 2.5e-3)
    errs = []
    for h in hs:
        e = integrate_limit_ode(s.energy, dual, 1.0, s.x0, method="euler", partition=Partition.uniform(1.0, h=h))
        errs.append(np.abs(e.y - ref(e.t)).max())
    slope, _ = fit_loglog(hs, errs)
    assert slope >= 0.9


def test_thermal_correction_converges_to_plain_euler():
    s = ri_relaxed_scenario()
    dual = EffectiveDualPotential(s.region)
    P = Partition.uniform(1.0, h=1e-3)
    a = integrate_limit_ode(s.energy, dual, 1.0, s.x0, method="euler", partition=P)
    b = integrate_limit_ode(s.energy, dual, 1.0, s.x0, method="euler", partition=P, thermal_correction=True)
    assert 0 < np.abs(a.y - b.y).max() < 1e-2


def test_theta_recovery_monotone():
    thetas, dist = theta_recovery(ri_relaxed_scenario())
    assert all(b < a for a, b in zip(dist, dist[1:]))
