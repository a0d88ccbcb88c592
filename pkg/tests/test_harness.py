import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evqmc.coefficients import custom_expansion, make_expansion, validate_assumption
from evqmc.eigen import pairs_at
from evqmc.fem import FemSpace, build_mesh
from evqmc.harness import (
    MultiIndex,
    constants_report,
    convergence_study,
    default_orders,
    derivative_check,
    derived_constants,
    discrete_laplace_pair,
    fit_rate,
    functional_study,
    functional_weights,
    gap_scan,
    lambda1_values,
    sample_parameters,
    truncation_study,
)


@pytest.fixture(scope="module")
def small():
    mesh = build_mesh("unit-interval", 1 / 16)
    exp = make_expansion("disjoint-indicator", 8, 2.0, 0.5)
    space = FemSpace.from_expansion(mesh, exp)
    return exp, space, constants_report(exp, space, 64, 0)


@pytest.fixture(scope="module")
def no_terms():
    mesh = build_mesh("unit-interval", 1 / 16)
    exp = custom_expansion(1.0, [0.0], rho=[1.0])
    space = FemSpace.from_expansion(mesh, exp)
    return exp, space, constants_report(exp, space, 4, 0)


def test_eta_arithmetic():
    d = derived_constants(1.0, 1.0, 0.25, 1.0, 10.0, 40.0, 3.0)
    assert d["eta"] == pytest.approx(0.28125, rel=1e-15)
    assert d["kappa"] == pytest.approx(0.375, rel=1e-15)
    assert d["gamma_max_bound"] == pytest.approx(1.25 * 40.0)
    assert d["K_lambda"] == pytest.approx(25.0 + 12.5)
    assert d["K_omega"] == pytest.approx(math.sqrt((50.0 + 25.0) / (2 * 0.625 * 0.75)))
    assert d["C1"] == pytest.approx(12.5**2 / math.sqrt(10.0) * 1.25 / 0.75**2)


def test_eta_infinite_without_terms():
    assert derived_constants(1.0, 1.0, 0.0, 0.0, 10.0, 40.0, 3.0)["eta"] == math.inf


def test_derived_constants_reject_inadmissible():
    with pytest.raises(ValueError):
        derived_constants(1.0, 1.0, 1.0, 1.0, 10.0, 40.0, 3.0)
    with pytest.raises(ValueError):
        derived_constants(1.0, 1.0, 0.2, 1.0, 10.0, 40.0, 0.0)


def test_constants_report_fields(small):
    exp, space, c = small
    assert c.Lambda0 == pytest.approx(0.25) and c.Lambda1 == pytest.approx(1.0)
    assert c.chi1_h >= c.chi1 and c.chi2_h >= c.chi2
    assert 0 < c.delta_min_emp <= c.delta_max_emp
    assert 0 < c.kappa < 0.5
    assert c.eta == pytest.approx(0.75 / (2 * (1 + 1 / c.delta_min_emp)))
    kinds = {k for _, _, k in c.items()}
    assert kinds == {"input", "derived", "empirical", "rigorous"}


def test_constants_report_deterministic(small):
    exp, space, c = small
    again = constants_report(exp, space, 64, 0)
    assert again == c
    other = constants_report(exp, space, 64, 1)
    assert other.eta == pytest.approx(c.eta, rel=2e-2)


def test_no_terms_constants(no_terms):
    _, _, c = no_terms
    assert c.eta == math.inf
    assert c.delta_min_emp == c.delta_max_emp


def test_gap_scan_nominal_spectrum():
    mesh = build_mesh("unit-interval", 1 / 64)
    exp = custom_expansion(1.0, [0.0], rho=[1.0])
    space = FemSpace.from_expansion(mesh, exp)
    t = gap_scan(exp, space, 5, seed=3)
    assert t.passed
    gap = t.column("gap")
    assert np.all(gap == gap[0])
    assert gap[0] == pytest.approx(3 * math.pi**2, rel=0.01)
    chi = discrete_laplace_pair(space)
    assert gap[0] == pytest.approx(chi[1] - chi[0], rel=1e-10)


def test_gap_scan_single_sample_and_bound(small):
    exp, space, c = small
    t = gap_scan(exp, space, 1)
    assert t.column("gap")[0] > 0
    t = gap_scan(exp, space, 50, seed=4)
    assert t.passed
    assert t.summary["gamma_max"] <= c.gamma_max_bound
    assert t.column("enclosed").sum() == 50
    with pytest.raises(ValueError):
        gap_scan(exp, space, 0)


def test_sample_parameters_reproducible():
    a = sample_parameters(5, "gap", 10, 3)
    np.testing.assert_array_equal(a, sample_parameters(5, "gap", 10, 3))
    assert np.all(a >= -0.5) and np.all(a < 0.5)
    assert not np.array_equal(a, sample_parameters(5, "truncation", 10, 3))


def test_multi_index():
    nu = MultiIndex.of(1, 1, 3)
    assert nu.order == 3 and nu.support == (1, 3) and nu.factorial == 2
    assert nu.power(np.array([2.0, 5.0, 3.0])) == 12.0
    assert nu.label() == "2e1+e3"
    assert MultiIndex(()).label() == "0" and MultiIndex(()).order == 0
    assert MultiIndex(((2, 0),)).support == ()
    with pytest.raises(ValueError):
        MultiIndex(((0, 1),))


def test_default_orders():
    orders = default_orders(8, 4)
    assert len(orders) == 8 + 10
    assert orders[0] == MultiIndex.of(1) and orders[-1] == MultiIndex.of(4, 4)


def test_derivative_of_proportional_term():
    mesh = build_mesh("unit-interval", 1 / 32)
    exp = custom_expansion(1.0, [1.0], rho=[1.0])
    space = FemSpace.from_expansion(mesh, exp)
    c = constants_report(exp, space, 8, 0)
    t = derivative_check(exp, space, [MultiIndex(()), MultiIndex.of(1), MultiIndex.of(1, 1)], 1e-3, c)
    lam0 = pairs_at(space, [0.0])[0].eigenvalue
    fd = t.column("fd")
    assert fd[0] == pytest.approx(lam0, rel=1e-10)
    assert fd[1] == pytest.approx(lam0, rel=1e-7)
    assert abs(fd[2]) <= 1e-3 * lam0
    assert t.column("ratio_local")[0] <= 1


def test_derivative_check_small_family(small):
    exp, space, c = small
    t = derivative_check(exp, space, default_orders(4, 2), 1e-3, c)
    assert t.passed
    assert np.all(t.column("fd_consistency")[:4] < 1e-3)


def test_derivative_step_underflow(small):
    exp, space, c = small
    with pytest.raises(ValueError, match="larger step"):
        derivative_check(exp, space, [MultiIndex.of(1, 2)], 1e-7, c)
    with pytest.raises(ValueError):
        derivative_check(exp, space, [MultiIndex.of(9)], 1e-3, c)


def test_fit_rate_examples():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    s, _, r2 = fit_rate(zip(x, x))
    assert s == pytest.approx(1.0) and r2 == pytest.approx(1.0)
    assert fit_rate(zip(x, 3 * x**-2))[0] == pytest.approx(-2.0)
    rng = np.random.default_rng(0)
    x = np.array([10.0, 20.0, 40.0, 80.0, 160.0])
    y = x**-1 * (1 + 0.01 * rng.standard_normal(5))
    assert -1.1 <= fit_rate(zip(x, y))[0] <= -0.9


def test_fit_rate_rejections():
    with pytest.raises(ValueError):
        fit_rate([(1, 1), (2, 2)])
    with pytest.raises(ValueError):
        fit_rate([(1, 1), (2, 0), (3, 1)])


def test_truncation_small(small):
    exp, space, c = small
    t = truncation_study(exp, space, [1, 2, 4], 31, 4, c, seed=0)
    assert t.passed
    err = t.column("error")
    assert err[-1] == 0.0 and t.column("s")[-1] == 8
    assert np.all(err[:-1] > 0)
    assert np.all(np.diff(t.column("bound")[:-1]) < 0)
    with pytest.raises(ValueError):
        truncation_study(exp, space, [1, 8], 31, 4, c)


def test_truncation_single_term():
    mesh = build_mesh("unit-interval", 1 / 16)
    exp = custom_expansion(1.0, [0.3, 0.0], rho=[1.0, 2.0], decay_p=0.9)
    space = FemSpace.from_expansion(mesh, exp)
    c = constants_report(exp, space, 8, 0)
    t = truncation_study(exp, space, [1], 13, 2, c)
    assert t.column("error")[0] == 0.0


def test_convergence_constant_integrand(no_terms):
    exp, space, c = no_terms
    t = convergence_study(exp, space, 1, [7, 13, 31], 8, c, baseline=True)
    assert np.all(t.column("qmc_rms") == 0.0)
    assert np.all(t.column("mc_rms") == 0.0)
    assert np.all(t.column("qmc_stderr") == 0.0)
    with pytest.raises(ValueError, match="not prime"):
        convergence_study(exp, space, 1, [7, 9], 8, c)
    with pytest.raises(ValueError):
        convergence_study(exp, space, 1, [7, 13], 4, c)


def test_convergence_small(small):
    exp, space, c = small
    t = convergence_study(exp, space, 4, [31, 61, 127], 8, c, baseline=False)
    assert t.checks["qmc_below_bound"]
    assert np.all(np.isnan(t.column("mc_rms")))
    assert abs(t.column("qmc_mean")[-1] - t.summary["reference"]) <= 4 * t.column("qmc_stderr")[-1] + 1e-12


def test_functional_zero_weights(small):
    exp, space, c = small
    g = np.zeros(space.mesh.n_interior)
    tr, cv = functional_study(exp, space, g, c, s_list=[1, 2], N_ref=13, s=2, N_list=[7, 13, 31], R=8,
                              baseline=False)
    assert np.all(tr.column("error") == 0.0)
    assert np.all(cv.column("qmc_rms") == 0.0)


def test_functional_constant_with_no_terms(no_terms):
    exp, space, c = no_terms
    g = functional_weights(space, "mean")
    (cv,) = functional_study(exp, space, g, c, s=1, N_list=[7, 13, 31], R=8, baseline=False)
    p1 = pairs_at(space, [0.0])[0]
    value = float(p1.eigenvector @ (space.mass @ g))
    np.testing.assert_allclose(cv.column("qmc_mean"), value, rtol=1e-12)
    assert np.all(cv.column("qmc_stderr") == 0.0)


def test_functional_weights_kinds(small):
    _, space, _ = small
    assert functional_weights(space, "none") is None
    half = functional_weights(space, "left-half-indicator")
    assert half.sum() == 8
    with pytest.raises(ValueError):
        functional_weights(space, "median")


def test_worker_count_invariance(small, monkeypatch):
    exp, space, _ = small
    Y = sample_parameters(2, "gap", 600, 8)
    monkeypatch.setenv("EVQMC_WORKERS", "1")
    a = lambda1_values(space, Y)
    monkeypatch.setenv("EVQMC_WORKERS", "3")
    b = lambda1_values(space, Y)
    assert np.array_equal(a, b)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_lambda1_lipschitz_in_coefficient(seed):
    mesh = build_mesh("unit-interval", 1 / 16)
    exp = make_expansion("global-trig", 6, 2.0, 0.5)
    space = FemSpace.from_expansion(mesh, exp)
    rep = validate_assumption(exp)
    rng = np.random.default_rng(seed)
    y, z = rng.uniform(-0.5, 0.5, (2, 6))
    c = derived_constants(rep.alpha_min, rep.alpha_max, rep.Lambda0, rep.Lambda1,
                          math.pi**2, 4 * math.pi**2, 3.0)
    x = np.linspace(0, 1, 2001)[:, None]
    diff = sum((y[j] - z[j]) * exp.terms[j](x) for j in range(6))
    ly, lz = (pairs_at(space, v)[0].eigenvalue for v in (y, z))
    assert abs(ly - lz) <= c["C1"] * np.max(np.abs(diff))
