import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from thermo_ri import (
    ConstantLoad,
    EffectiveDualPotential,
    EffectivePotential,
    ElasticRegion,
    EpsilonDualPotential,
    NearBoundaryError,
    QuadraticEnergy,
    SmoothEnergy,
)
from thermo_ri import _gaussexp
from thermo_ri.sphere import sphere_area, sphere_rule


def interval():
    return EffectiveDualPotential(ElasticRegion.box([1.0]))


# -- sphere rules ----------------------------------------------------------------


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_sphere_rule_moments(n):
    u, w = sphere_rule(n, 8)
    assert w.sum() == pytest.approx(sphere_area(n), rel=1e-13)
    assert np.allclose(np.linalg.norm(u, axis=1), 1.0)
    second = (u * w[:, None]).T @ u
    np.testing.assert_allclose(second, np.eye(n) * sphere_area(n) / n, atol=1e-12)


def test_sphere_area_values():
    assert sphere_area(2) == pytest.approx(2 * np.pi)
    assert sphere_area(3) == pytest.approx(4 * np.pi)


# -- half-line primitives ----------------------------------------------------------


@pytest.mark.parametrize("a,b", [(0.5, 1.0), (0.01, -0.5), (2.0, 30.0), (1e-4, 1.5), (0.0, 0.7), (3.0, -4.0)])
def test_gaussexp_against_quad(a, b):
    f = lambda z, k: z**k * math.exp(-a * z * z - b * z)
    m0 = quad(f, 0, np.inf, args=(0,), epsabs=0, epsrel=1e-13, limit=200)[0]
    m1 = quad(f, 0, np.inf, args=(1,), epsabs=0, epsrel=1e-13, limit=200)[0] / m0
    m2 = quad(f, 0, np.inf, args=(2,), epsabs=0, epsrel=1e-13, limit=200)[0] / m0
    assert _gaussexp.log_mass(a, b) == pytest.approx(math.log(m0), abs=1e-11)
    e1, e2 = _gaussexp.moments(a, b)
    assert e1 == pytest.approx(m1, rel=1e-10)
    assert e2 == pytest.approx(m2, rel=1e-10)


@given(st.floats(1e-4, 10), st.floats(-3, 40), st.floats(-30, -1e-6))
@settings(max_examples=60)
def test_inverse_survival_roundtrip(a, b, log_p):
    z = _gaussexp.inverse_survival(a, b, log_p)
    assert z >= 0
    assert _gaussexp.log_survival(a, b, z) == pytest.approx(log_p, abs=1e-9 * max(1, abs(log_p)))


# -- dual potential -------------------------------------------------------------------


def test_value_examples():
    p = EffectiveDualPotential(ElasticRegion.box([1.0]), normalization="reduced")
    assert p.value([0.0]) == 0.0
    # oracle: adaptive quadrature of int exp(-|z|) dz = 2
    assert interval().value([0.0]) == pytest.approx(0.6931471805599455, abs=1e-14)
    assert interval().value([1.0]) == np.inf
    assert interval().value([-1.0]) == np.inf


def test_gradient_examples():
    assert interval().gradient([0.0])[0] == 0.0
    assert interval().gradient([0.5])[0] == pytest.approx(4 / 3, abs=1e-14)
    q = EffectiveDualPotential(ElasticRegion.box([1.0]), backend="quadrature")
    assert q.gradient([0.5])[0] == pytest.approx(4 / 3, abs=1e-8)
    ball = EffectiveDualPotential(ElasticRegion.ball(1.0, 2))
    np.testing.assert_allclose(ball.gradient([0.3, 0.0]), [0.9 / 0.91, 0.0], atol=1e-14)
    qb = EffectiveDualPotential(ElasticRegion.ball(1.0, 2), backend="quadrature")
    np.testing.assert_allclose(qb.gradient([0.3, 0.0]), [0.9 / 0.91, 0.0], atol=1e-8)


def test_hessian_examples():
    h = interval().hessian([0.0])
    assert h[0, 0] == pytest.approx(2.0)
    g = lambda w: interval().gradient([w])[0]
    d = 1e-5
    assert h[0, 0] == pytest.approx((g(d) - g(-d)) / (2 * d), rel=1e-8)


@pytest.mark.parametrize("reg", [ElasticRegion.box([1.0, 2.0]), ElasticRegion.ball(1.5, 2), ElasticRegion.ball(1.0, 3)])
def test_hessian_symmetric_psd(reg):
    rng = np.random.default_rng(5)
    for backend in ("auto", "quadrature"):
        p = EffectiveDualPotential(reg, backend=backend)
        count = 0
        while count < (100 if backend == "auto" else 10):
            w = rng.uniform(-1, 1, reg.dim) * reg.inner_radius
            if p.margin(w) < 0.05:
                continue
            count += 1
            H = p.hessian(w)
            np.testing.assert_allclose(H, H.T, atol=1e-10)
            assert np.linalg.eigvalsh(H).min() >= -1e-10


def test_near_boundary_policy():
    p = interval()
    with pytest.raises(NearBoundaryError) as exc:
        p.gradient([1.0 - 1e-12])
    assert exc.value.distance == pytest.approx(1e-12, abs=1e-15)
    with pytest.raises(NearBoundaryError):
        p.hessian([-2.0])
    assert p.value([1.0 - 1e-12]) == np.inf


def test_normalizations_differ_by_constant():
    for reg in (ElasticRegion.box([1.0, 2.0]), ElasticRegion.ball(1.3, 3)):
        ex = EffectiveDualPotential(reg)
        pa = EffectiveDualPotential(reg, normalization="reduced")
        q = EffectiveDualPotential(reg, backend="quadrature")
        rng = np.random.default_rng(6)
        for _ in range(5):
            w = rng.uniform(-0.5, 0.5, reg.dim)
            assert ex.value(w) - pa.value(w) == pytest.approx(ex.exact_offset, abs=1e-12)
            # the exact normalization is the literal integral, so it equals the quadrature value
            assert ex.value(w) == pytest.approx(q.value(w), abs=1e-8)
            np.testing.assert_allclose(ex.gradient(w), pa.gradient(w), atol=1e-14)


def test_ball_offset_matches_direct_integral():
    # int_{R^2} exp(-s|z|) dz = 2 pi / s^2 ; the reduced form gives s^{-3}
    s = 1.7
    p = EffectiveDualPotential(ElasticRegion.ball(s, 2))
    assert p.value([0.0, 0.0]) == pytest.approx(math.log(2 * math.pi / s**2), abs=1e-13)
    p3 = EffectiveDualPotential(ElasticRegion.ball(s, 3))
    assert p3.value(np.zeros(3)) == pytest.approx(math.log(8 * math.pi / s**3), abs=1e-13)


def test_reduced_normalization_rejected_for_general():
    reg = ElasticRegion.general(lambda u: np.linalg.norm(u, axis=-1), 2, 1.0, 1.0)
    with pytest.raises(ValueError):
        EffectiveDualPotential(reg, normalization="reduced")
    p = EffectiveDualPotential(reg)
    np.testing.assert_allclose(p.gradient([0.3, 0.0]), [0.9 / 0.91, 0.0], atol=1e-7)


def test_midpoint_convexity():
    p = EffectiveDualPotential(ElasticRegion.box([1.0, 2.0]))
    rng = np.random.default_rng(7)
    a = rng.uniform(-1, 1, (10_000, 2)) * [1.0, 2.0] * 0.999
    b = rng.uniform(-1, 1, (10_000, 2)) * [1.0, 2.0] * 0.999
    fa, fb, fm = p.value(a), p.value(b), p.value(0.5 * (a + b))
    ok = np.isfinite(fa) & np.isfinite(fb)
    assert np.all(fm[ok] <= 0.5 * (fa[ok] + fb[ok]) + 1e-10 * (1 + np.abs(fa[ok] + fb[ok])))


def test_gradient_matches_finite_differences():
    for reg in (ElasticRegion.box([1.0, 2.0]), ElasticRegion.ball(1.5, 2)):
        for backend in ("auto", "quadrature"):
            p = EffectiveDualPotential(reg, backend=backend)
            for w in ([0.2, -0.3], [-0.5, 0.4], [0.0, 0.9]):
                w = np.array(w)
                h = 1e-5
                fd = [(p.value(w + h * e) - p.value(w - h * e)) / (2 * h) for e in np.eye(2)]
                g = p.gradient(w)
                assert np.linalg.norm(fd - g) <= 1e-5 * max(1.0, np.linalg.norm(g))


# -- eps-perturbed potential --------------------------------------------------------------


def quadratic_1d(A=1.0):
    return QuadraticEnergy([[A]], ConstantLoad([0.0]))


def test_eps_zero_reduces_exactly():
    base = interval()
    q = EpsilonDualPotential(base, quadratic_1d(), 0.0, [0.0], 0.0)
    for w in (0.0, 0.3, -0.7):
        assert q.value([w]) == base.value([w])
        assert q.gradient([w])[0] == base.gradient([w])[0]


def test_zero_hessian_reduces_exactly():
    base = interval()
    for eps in (0.5, 1e-3):
        q = EpsilonDualPotential(base, quadratic_1d(0.0), 0.0, [0.0], eps)
        assert q.value([0.4]) == base.value([0.4])
        assert q.gradient([0.4])[0] == base.gradient([0.4])[0]


def test_eps_value_against_quadrature():
    q = EpsilonDualPotential(interval(), quadratic_1d(), 0.0, [0.0], 0.01)
    f = lambda z: math.exp(-(0.5 * z + 0.005 * z * z + abs(z)))
    Z = quad(f, -np.inf, 0, epsabs=0, epsrel=1e-12)[0] + quad(f, 0, np.inf, epsabs=0, epsrel=1e-12)[0]
    assert q.value([0.5]) == pytest.approx(math.log(Z), abs=1e-10)
    # within O(eps) of the eps = 0 value log(2 / 0.75)
    assert abs(q.value([0.5]) - math.log(2 / 0.75)) < 5 * 0.01


def test_eps_general_path_matches_closed_form():
    # the same quadratic written as a generic smooth energy goes through the spherical radial quadrature
    E = quadratic_1d()
    S = SmoothEnergy(E.evaluate, E.gradient, E.hessian, dim=1)
    a = EpsilonDualPotential(interval(), E, 0.0, [0.0], 0.05)
    b = EpsilonDualPotential(interval(), S, 0.0, [0.0], 0.05)
    for w in (-0.6, 0.1, 0.8):
        va, ga, ha = a.evaluate_all(np.array([w]))
        vb, gb, hb = b.evaluate_all(np.array([w]))
        assert va == pytest.approx(vb, abs=1e-9)
        assert ga[0] == pytest.approx(gb[0], abs=1e-9)
        assert ha[0, 0] == pytest.approx(hb[0, 0], rel=1e-8)


def test_eps_two_dimensional_against_polar_quadrature():
    w = np.array([0.3, 0.1])
    eps = 0.01
    E = QuadraticEnergy(np.eye(2), ConstantLoad([0.0, 0.0]))
    q = EpsilonDualPotential(EffectiveDualPotential(ElasticRegion.ball(1.0, 2)), E, 0.0, [0.0, 0.0], eps)

    def radial(phi, k):
        u = np.array([math.cos(phi), math.sin(phi)])
        return quad(lambda r: r ** (1 + k) * math.exp(-(r * (u @ w) + eps / 2 * r * r + r)), 0, np.inf,
                    epsabs=0, epsrel=1e-12)[0]

    Z = quad(lambda p: radial(p, 0), 0, 2 * np.pi, epsabs=0, epsrel=1e-12)[0]
    mx = quad(lambda p: radial(p, 1) * math.cos(p), 0, 2 * np.pi, epsabs=0, epsrel=1e-12)[0] / Z
    my = quad(lambda p: radial(p, 1) * math.sin(p), 0, 2 * np.pi, epsabs=0, epsrel=1e-12)[0] / Z
    v, g, _ = q.evaluate_all(w)
    assert v == pytest.approx(math.log(Z), abs=1e-9)
    np.testing.assert_allclose(g, [-mx, -my], atol=1e-8)


def test_eps_gradient_converges():
    base = interval()
    errs = []
    for eps in (1e-1, 1e-2, 1e-3):
        q = EpsilonDualPotential(base, quadratic_1d(), 0.0, [0.0], eps)
        errs.append(abs(q.gradient([0.5])[0] - base.gradient([0.5])[0]))
    assert errs[0] > errs[1] > errs[2]


def test_abs_moment_closed_form():
    base = interval()
    q = EpsilonDualPotential(base, quadratic_1d(), 0.0, [0.0], 0.02)
    a, b = 0.01, np.array([1.5, 0.5])
    lm = _gaussexp.log_mass(a, b)
    p = np.exp(lm - np.logaddexp(*lm))
    _, m2 = _gaussexp.moments(a, b)
    assert q.abs_moment([0.5], 2) == pytest.approx(float(p @ m2), rel=1e-9)


# -- Cramer transform ------------------------------------------------------------------------


def test_cramer_examples():
    c = EffectivePotential(EffectiveDualPotential(ElasticRegion.box([1.0]), normalization="reduced"))
    assert c.value([0.0]) == 0.0
    # oracle: golden-section maximization of 0.5 w + log(1 - w^2)
    v, w, _, _ = c.solve([0.5])
    assert v == pytest.approx(0.06069287469097517, abs=1e-12)
    assert w[0] == pytest.approx(math.sqrt(5) - 2, abs=1e-9)
    ratio = c.value([1e3]) / 1e3
    assert 0.95 <= ratio <= 1.0


@given(st.floats(-20, 20), st.floats(-0.99, 0.99))
@settings(max_examples=50)
def test_fenchel_young_inequality(x, w):
    dual = EffectiveDualPotential(ElasticRegion.box([1.0]))
    c = EffectivePotential(dual)
    assert c.value([x]) + dual.value([w]) >= w * x - 1e-9 * (1 + abs(w * x))


def test_cramer_quadratic_near_origin():
    c = EffectivePotential(EffectiveDualPotential(ElasticRegion.box([1.0]), normalization="reduced"))
    ratios = [c.value([x]) / x**2 for x in (1e-1, 1e-2, 1e-3)]
    assert abs(ratios[-1] - ratios[-2]) <= 0.05 * abs(ratios[-1])
    assert ratios[-1] == pytest.approx(0.25, rel=1e-4)
