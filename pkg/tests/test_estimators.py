import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadvar.design import build_design
from quadvar.divdiff import expected_qv
from quadvar.errors import InvalidInputError, NumericalError, OrderNotFoundError
from quadvar.estimators import (
    NOT_FOUND,
    EstimatorConfig,
    beta_from_qv,
    estimate_beta,
    estimate_H,
    estimate_r0,
    estimate_regularity,
    h_statistic,
    h_statistic_finite,
    kw_ols,
    theoretical_limit,
)
from quadvar.gp_sim import FBM, GaussianModel, IntegratedFBM, SamplePath, Wiener, simulate_exact, simulate_fbm_circulant


def test_beta_from_synthetic_traces():
    assert beta_from_qv(4.0, 1.0, 1, 1, 4) == pytest.approx(0.5, abs=1e-15)


def test_zero_variation_is_an_error():
    with pytest.raises(NumericalError):
        beta_from_qv(0.0, 1.0, 1, 1, 4)


@settings(max_examples=30, deadline=None)
@given(c=st.floats(1e-3, 1e3), seed=st.integers(0, 1000))
def test_beta_scale_invariance(c, seed):
    p = simulate_fbm_circulant(0.6, 300, 1.0, seed=seed)
    b0 = estimate_beta(p, 0)
    assert estimate_beta(p.scaled(c), 0) == pytest.approx(b0, abs=1e-12)


def test_cubic_path_gives_sentinel(uniform_design):
    for n in (10, 50, 400):
        d = uniform_design(n)
        path = SamplePath(d, d.points**3)
        for scale in ("finite", "divided"):
            r_hat, trace = estimate_r0(path, EstimatorConfig(m_n=6, step1_scale=scale))
            assert r_hat is NOT_FOUND
            lead = 36.0 if scale == "finite" else 1.0  # third divided difference of t^3 is 1
            assert trace[1].value == pytest.approx(lead, rel=1e-6)
    with pytest.raises(OrderNotFoundError) as info:
        estimate_H(path, EstimatorConfig(m_n=6))
    assert len(info.value.qv_by_order) == 5
    est = estimate_regularity(path, EstimatorConfig(m_n=6))
    assert est.to_dict()["r_hat"] == "l0" and est.H_hat is None


def test_small_n_for_scan(uniform_design):
    with pytest.raises(InvalidInputError):
        estimate_r0(SamplePath(uniform_design(5), np.arange(6.0)), EstimatorConfig(m_n=4))


def test_step1_scale_is_factorial_squared(uniform_design):
    p = simulate_fbm_circulant(0.7, 200, 1.0, seed=1)
    _, a = estimate_r0(p, EstimatorConfig(step1_scale="divided"))
    _, b = estimate_r0(p, EstimatorConfig(step1_scale="finite"))
    for qa, qb in zip(a, b):
        assert qb.value == pytest.approx(math.factorial(qa.r) ** 2 * qa.value, rel=1e-14)


def test_recovers_known_orders(uniform_design):
    w = simulate_exact(GaussianModel(Wiener()), uniform_design(25), seed=3)
    assert estimate_r0(w)[0] == 0
    i = simulate_exact(GaussianModel(IntegratedFBM(0.5)), uniform_design(1000), seed=3)
    r_hat, trace = estimate_r0(i)
    assert r_hat == 1
    assert not trace[0].crossed and trace[1].crossed


def test_trace_invariant(uniform_design):
    for seed in range(5):
        est = estimate_regularity(simulate_fbm_circulant(0.9, 300, 1.0, seed=seed))
        crossed = [q.crossed for q in est.qv_by_order]
        assert crossed.index(True) == est.r_hat
        assert est.H_hat == pytest.approx(2 * (est.r_hat + est.beta_hat))


def test_equidistant_identity(uniform_design):
    rng = np.random.default_rng(0)
    for kernel in (FBM(0.3), FBM(0.8), IntegratedFBM(0.4)):
        p = simulate_exact(GaussianModel(kernel), uniform_design(400), seed=rng)
        for pp in (1, 2):
            est = estimate_regularity(p, EstimatorConfig(p=pp))
            assert est.H_hat == pytest.approx(est.H_finite_diff, abs=1e-10)
            assert h_statistic(p, est.r_hat + pp) == pytest.approx(est.H_hat, abs=1e-10)


def test_h_finite_rejects_irregular_design(affine_density):
    p = simulate_exact(GaussianModel(Wiener()), build_design(affine_density, 50), seed=0)
    with pytest.raises(InvalidInputError):
        h_statistic_finite(p, 1)
    assert estimate_regularity(p).H_finite_diff is None


@pytest.mark.parametrize("seed", range(5))
def test_kw_ols_two_dilations_is_log_ratio(seed):
    p = simulate_fbm_circulant(0.35, 500, 1.0, seed=seed)
    alpha = kw_ols(p, p=1, m=2)
    assert alpha == pytest.approx(h_statistic_finite(p, 1, 1, 2), abs=1e-10)
    beta = estimate_beta(p, 0, EstimatorConfig(u=1, v=2))
    assert alpha == pytest.approx(2 * beta, abs=1e-10)


def test_kw_ols_errors(uniform_design, affine_density):
    with pytest.raises(NumericalError):
        kw_ols(SamplePath(uniform_design(20), np.ones(21)), 1, 2)
    with pytest.raises(InvalidInputError):
        kw_ols(simulate_exact(GaussianModel(Wiener()), build_design(affine_density, 20), seed=0), 1, 2)


# --- theoretical limits ------------------------------------------------------


@pytest.mark.parametrize("beta", [0.1, 0.3, 0.5, 0.77, 0.95])
def test_limit_first_order_is_one(beta):
    assert theoretical_limit(1, 0, beta) == pytest.approx(1.0, rel=1e-12)


def test_limit_second_order_wiener():
    assert theoretical_limit(2, 0, 0.5) == pytest.approx(0.5, rel=1e-12)


def test_limit_linear_in_d0():
    assert theoretical_limit(2, 0, 0.8, d0=2.0) == pytest.approx(2 * theoretical_limit(2, 0, 0.8), rel=1e-12)


@pytest.mark.parametrize("p,beta", [(1, 0.5), (2, 0.3), (1, 0.9)])
def test_limit_integrated_fbm(uniform_design, p, beta):
    n = 3000
    d = uniform_design(n)
    e = expected_qv(GaussianModel(IntegratedFBM(beta)), d, 1 + p)
    e *= d.delta_n ** (2 * (p - beta))
    assert e == pytest.approx(theoretical_limit(p, 1, beta), rel=0.01)


def test_limit_integrated_wiener_value():
    assert theoretical_limit(1, 1, 0.5) == pytest.approx(1 / 6, rel=1e-12)


@pytest.mark.parametrize("p,beta", [(1, 0.4), (2, 0.6)])
def test_limit_with_affine_density(affine_density, p, beta):
    d = build_design(affine_density, 4000)
    e = expected_qv(GaussianModel(FBM(beta)), d, p) * d.delta_n ** (2 * (p - beta))
    assert e == pytest.approx(theoretical_limit(p, 0, beta, psi=affine_density), rel=0.02)


@pytest.mark.parametrize("p,beta", [(1, 0.3), (1, 0.8), (2, 0.5), (2, 0.9)])
def test_property_P_dilation_ratio(uniform_design, p, beta):
    d = uniform_design(4000)
    m = GaussianModel(FBM(beta))
    ratio = expected_qv(m, d, p, 1) / expected_qv(m, d, p, 2)
    assert ratio == pytest.approx(2 ** (2 * (p - beta)), rel=0.03)


# --- invariances ------------------------------------------------------------


@pytest.mark.parametrize("c", [0.01, 3.0, 250.0])
def test_decision_scale_invariance(uniform_design, c):
    cfg = EstimatorConfig(bn_rule="const", bn_param=0.2)
    cfg_c = EstimatorConfig(bn_rule="const", bn_param=0.2 * c * c)
    for seed in range(4):
        p = simulate_exact(GaussianModel(IntegratedFBM(0.3)), uniform_design(150), seed=seed)
        assert estimate_r0(p.scaled(c), cfg_c)[0] == estimate_r0(p, cfg)[0]


def test_decision_polynomial_trend_invariance(uniform_design):
    for seed in range(4):
        p = simulate_exact(GaussianModel(IntegratedFBM(0.6)), uniform_design(300), seed=seed)
        r_hat = estimate_r0(p)[0]
        t = p.t
        trend = 5 - 3 * t + 40 * t**2  # degree r_hat + 1 = 2
        q = SamplePath(p.design, p.values + trend)
        assert estimate_r0(q)[0] == r_hat


# --- configuration ------------------------------------------------------------


def test_config_parsing():
    assert EstimatorConfig.parse_bn("const:1") == ("const", 1.0)
    assert EstimatorConfig.parse_bn("power_log:-1") == ("power_log", -1.0)
    cfg = EstimatorConfig.from_dict({"bn": "const:2", "m_n": 5, "p": 2})
    assert cfg.b_n(100) == 2.0 and cfg.m_n_for(10_000) == 5
    assert EstimatorConfig().b_n(math.e**2) == pytest.approx(0.5)
    assert EstimatorConfig().m_n_for(25) == 5 and EstimatorConfig().m_n_for(10**6) == 8
    assert EstimatorConfig(bn_rule="power_log", bn_param=-1).b_n(100) == pytest.approx(1 / math.log(100))


@pytest.mark.parametrize(
    "spec",
    [{"bn": "median"}, {"p": 3}, {"u": 4, "v": 4}, {"m_n": 1}, {"bn": "const:0"}, {"whatever": 1}, {"step1_scale": "x"}],
)
def test_config_errors(spec):
    with pytest.raises(InvalidInputError):
        EstimatorConfig.from_dict(spec)


def test_clamp_option():
    p = simulate_fbm_circulant(0.5, 50, 1.0, seed=0)
    b = estimate_beta(p, 1, clamp=True)  # deliberately wrong base order
    assert 0 < b < 1
