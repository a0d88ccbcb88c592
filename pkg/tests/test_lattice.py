import io
import itertools
import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evqmc.lattice import (
    LatticeRule,
    ProductWeights,
    cbc_construct,
    default_lambda_w,
    draw_shifts,
    euler_totient,
    is_prime,
    lattice_points,
    qmc_estimate,
    read_generating_vector,
    theoretical_error_bound,
    weights_from_rho,
    worst_case_error_sq,
    write_generating_vector,
    zeta,
    zeta_factor,
)


def _wce_exact(z, N, gamma):
    """Brute-force double loop in rational arithmetic (weights as Fractions)."""
    g = [Fraction(x) for x in gamma]
    total = Fraction(0)
    for k in range(N):
        prod = Fraction(1)
        for zj, gj in zip(z, g):
            x = Fraction(k * zj % N, N)
            prod *= 1 + gj * (x * x - x + Fraction(1, 6))
        total += prod
    return total / N - 1


def _rule(z, N, gamma=None):
    gamma = np.ones(len(z)) if gamma is None else np.asarray(gamma, float)
    return LatticeRule(len(z), N, np.asarray(z, dtype=np.int64), ProductWeights(gamma, 1.0), 0.0)


@pytest.mark.parametrize("x", [1.05, 1.5, 2.0, 2 / 0.95, 3.3])
def test_zeta_against_mpmath(x):
    assert zeta(x) == pytest.approx(float(mpmath.zeta(x)), rel=1e-13)


def test_zeta_rejects_divergent():
    with pytest.raises(ValueError):
        zeta(1.0)


def test_weights_closed_form():
    w = weights_from_rho([1.0], 1.0, 1.0)
    assert w.gamma[0] == pytest.approx(math.sqrt(6), rel=1e-14)
    assert zeta_factor(1.0) == pytest.approx(1 / 6, rel=1e-14)


@pytest.mark.parametrize("lam", [0.6, 0.75, 1.0])
def test_weights_homogeneity(lam):
    rho = np.array([1.0, 3.0, 7.5])
    g1 = weights_from_rho(rho, 0.3, lam).gamma
    g2 = weights_from_rho(2 * rho, 0.3, lam).gamma
    np.testing.assert_allclose(g2 / g1, 2.0 ** (-2.0 / (1 + lam)), rtol=1e-14)


def test_weights_high_precision_reference():
    with mpmath.workdps(40):
        lam = mpmath.mpf("0.75")
        c = 2 * mpmath.zeta(2 * lam) / (2 * mpmath.pi**2) ** lam
        ref = ((1 / mpmath.mpf(2) ** 2) / c) ** (1 / (1 + lam))
    w = weights_from_rho([2.0], 1.0, 0.75)
    assert w.gamma[0] == pytest.approx(float(ref), rel=1e-13)


def test_weights_rejections():
    with pytest.raises(ValueError):
        weights_from_rho([1.0], 1.0, 0.5)
    with pytest.raises(ValueError):
        weights_from_rho([1.0], 0.0, 0.8)
    with pytest.raises(ValueError):
        ProductWeights([-1.0], 0.8)


def test_default_lambda_w():
    assert default_lambda_w(0.6) == pytest.approx(1 / 1.9)
    assert default_lambda_w(2 / 3) == pytest.approx(1 / 1.9)
    lam = default_lambda_w(0.8)
    assert 2 * lam / (1 + lam) == pytest.approx(0.8)
    assert default_lambda_w(1.0) == 1.0


def test_wce_trivial_cases():
    assert worst_case_error_sq([1], 1, [1.0]) == pytest.approx(1 / 6, rel=1e-15)
    assert worst_case_error_sq([1, 5, 2], 13, [0.0, 0.0, 0.0]) == 0.0


def test_wce_double_loop_oracle():
    exact = _wce_exact((1, 3), 8, (1.0, 0.5))
    assert worst_case_error_sq([1, 3], 8, [1.0, 0.5]) == pytest.approx(float(exact), rel=1e-13)


@settings(max_examples=40, deadline=None)
@given(
    N=st.sampled_from([5, 7, 11, 13, 17]),
    z=st.lists(st.integers(1, 16), min_size=1, max_size=3),
    gamma=st.lists(st.floats(0.0, 3.0), min_size=3, max_size=3),
)
def test_wce_matches_rational_oracle(N, z, gamma):
    z = [zj % (N - 1) + 1 for zj in z]
    exact = _wce_exact(z, N, gamma[: len(z)])
    assert worst_case_error_sq(z, N, gamma) == pytest.approx(float(exact), rel=1e-12, abs=1e-16)


@settings(max_examples=30, deadline=None)
@given(za=st.integers(1, 12), zb=st.integers(1, 12), g=st.floats(0.01, 2.0))
def test_zero_weight_makes_component_irrelevant(za, zb, g):
    assert worst_case_error_sq([3, za], 13, [g, 0.0]) == worst_case_error_sq([3, zb], 13, [g, 0.0])


def test_cbc_one_dimension_picks_one():
    for N in (7, 13, 31, 101):
        assert cbc_construct(1, N, ProductWeights([0.7], 0.8)).z[0] == 1


def test_cbc_rejects_composite():
    with pytest.raises(ValueError, match="not prime"):
        cbc_construct(2, 8, ProductWeights([1.0, 1.0], 1.0))


def test_cbc_two_dimensions_equals_exhaustive():
    N, gamma = 7, [1.0, 1.0]
    rule = cbc_construct(2, N, ProductWeights(gamma, 1.0))
    errs = {z: _wce_exact(z, N, gamma) for z in itertools.product(range(1, N), repeat=2)}
    best = min(errs.values())
    first = min(z for z, e in errs.items() if e == best)
    assert tuple(rule.z) == first
    assert rule.wce == pytest.approx(float(best), rel=1e-13)


def test_cbc_zero_weight_dimension_keeps_error():
    g = [0.5, 0.25, 0.125]
    r3 = cbc_construct(3, 31, ProductWeights(g, 1.0))
    r4 = cbc_construct(4, 31, ProductWeights(g + [0.0], 1.0))
    assert np.array_equal(r4.z[:3], r3.z)
    assert r4.wce == pytest.approx(r3.wce, rel=1e-14)


def test_cbc_stored_error_is_recomputed_value():
    w = ProductWeights(np.arange(1, 9) ** -2.0, 0.7)
    rule = cbc_construct(8, 251, w)
    assert rule.wce == worst_case_error_sq(rule.z, 251, w)
    assert np.all(np.diff(rule.partial_wce) >= 0)
    assert rule.project(3).wce == pytest.approx(worst_case_error_sq(rule.z[:3], 251, w), rel=1e-13)


def test_points_examples():
    rule = _rule([1, 2], 5)
    np.testing.assert_allclose(lattice_points(rule, [0.1, 0.9], 3), [0.2, -0.4], atol=1e-15)
    np.testing.assert_array_equal(lattice_points(rule, [0.0, 0.0], 5), [-0.5, -0.5])
    with pytest.raises(ValueError):
        lattice_points(rule, [0.0, 0.0], 6)
    with pytest.raises(ValueError):
        lattice_points(rule, [0.0, 0.0], 0)
    pts = lattice_points(rule, [0.1, 0.9])
    assert pts.shape == (5, 2) and np.all(pts >= -0.5) and np.all(pts < 0.5)


def test_shift_periodicity():
    rule = cbc_construct(3, 31, ProductWeights([1.0, 0.5, 0.25], 1.0))
    # dyadic shifts keep delta + 1 exact, so the points agree bitwise
    d = np.array([0.375, 0.8125, 0.0625])
    np.testing.assert_array_equal(lattice_points(rule, d), lattice_points(rule, d + 1))
    np.testing.assert_array_equal(lattice_points(rule, d), lattice_points(rule, d - 2))
    d = np.random.default_rng(0).random(3)
    np.testing.assert_allclose(lattice_points(rule, d), lattice_points(rule, d + 1), atol=4e-16)


@settings(max_examples=25, deadline=None)
@given(
    N=st.sampled_from([7, 31, 127]),
    z=st.lists(st.integers(1, 126), min_size=1, max_size=4),
    seed=st.integers(0, 2**32),
    c=st.floats(-5, 5),
)
def test_constants_integrated_exactly(N, z, seed, c):
    rule = _rule([zj % (N - 1) + 1 for zj in z], N)
    est = qmc_estimate(lambda x: np.full(x.shape[0], c), rule, 4, seed)
    assert est.mean == c and est.stderr == 0.0


def test_linear_integrand_unbiased():
    rule = cbc_construct(1, 127, ProductWeights([1.0], 1.0))
    est = qmc_estimate(lambda x: x[:, 0], rule, 64, 7)
    assert abs(est.mean) <= 3 * est.stderr


def test_product_integrand_converges():
    errs = []
    for N in (127, 251, 503):
        rule = cbc_construct(2, N, ProductWeights([1.0, 1.0], 1.0))
        est = qmc_estimate(lambda x: np.prod(x + 0.5, axis=1), rule, 32, 3)
        assert abs(est.mean - 0.25) <= 3 * est.stderr
        errs.append(est.stderr)
    assert errs[0] > errs[1] > errs[2]
    # QMC beats the Monte Carlo rate -1/2
    slope = np.polyfit(np.log([127, 251, 503]), np.log(errs), 1)[0]
    assert slope < -0.5


def test_shifts_reproducible_and_stream_separated():
    a = draw_shifts(42, 5, 8)
    np.testing.assert_array_equal(a, draw_shifts(42, 5, 8))
    np.testing.assert_array_equal(a[:3], draw_shifts(42, 5, 3))
    assert not np.array_equal(a, draw_shifts(43, 5, 8))
    assert not np.array_equal(a, draw_shifts(42, 5, 8, purpose="reference"))


def test_totient_examples():
    assert euler_totient(7) == 6
    assert euler_totient(1) == 1
    assert euler_totient(12) == 4


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 3000))
def test_totient_counts_coprimes(n):
    assert euler_totient(n) == sum(1 for k in range(1, n + 1) if math.gcd(k, n) == 1)
    assert is_prime(n) == (n > 1 and euler_totient(n) == n - 1)


def test_bound_zero_weights():
    w = ProductWeights([0.0, 0.0, 0.0], 0.8)
    assert theoretical_error_bound(w, 3, 101, 2.0) == pytest.approx(100 ** (-1 / 1.6) * 2.0, rel=1e-14)


def test_bound_scaling_with_N():
    w = ProductWeights([1.0, 0.5], 1.0)
    b1 = theoretical_error_bound(w, 2, 251, 1.0)
    b2 = theoretical_error_bound(w, 2, 503, 1.0)
    assert b2 / b1 == pytest.approx((502 / 250) ** -0.5, rel=1e-14)
    assert theoretical_error_bound(w, 2, 503, 1.0, use_totient=False) < b2


def test_bound_subset_enumeration():
    g = math.sqrt(6)
    w = ProductWeights([g, g], 1.0)
    c = 2 * float(mpmath.zeta(2)) / (2 * math.pi**2)
    subsets = sum(math.prod(g * c for _ in u) for r in range(3) for u in itertools.combinations(range(2), r))
    ref = subsets ** 0.5 * 6 ** -0.5 * 3.0
    assert theoretical_error_bound(w, 2, 7, 3.0) == pytest.approx(ref, rel=1e-13)


def test_generating_vector_round_trip():
    w = weights_from_rho(np.arange(1, 6) ** 2.0, 0.2, default_lambda_w(0.6))
    rule = cbc_construct(5, 61, w)
    buf = io.StringIO()
    write_generating_vector(rule, buf)
    text = buf.getvalue()
    assert text.splitlines()[0].split()[:2] == ["5", "61"]
    back = read_generating_vector(text.splitlines())
    assert np.array_equal(back.z, rule.z)
    np.testing.assert_array_equal(back.weights.gamma, rule.weights.gamma)
    assert back.weights.lambda_w == rule.weights.lambda_w
    assert back.wce == rule.wce
    with pytest.raises(ValueError):
        read_generating_vector(text.splitlines()[:-1])
