import io
import math

import numpy as np
import pytest
from scipy import integrate, stats

from quadvar.design import DensitySpec, build_design
from quadvar.errors import InvalidInputError
from quadvar.gp_sim import (
    FBM,
    CirculantFGN,
    CustomKernel,
    GaussianModel,
    GaussianSampler,
    IntegratedFBM,
    IntegratedWiener,
    Matern,
    OrnsteinUhlenbeck,
    PowerScale,
    Regularity,
    SamplePath,
    Wiener,
    gram_matrix,
    ingest_csv,
    kernel_eval,
    simulate_exact,
    simulate_fbm_circulant,
    substream,
    transform_path,
)


def fbm_cov(u, v, beta):
    h = 2 * beta
    return 0.5 * (abs(u) ** h + abs(v) ** h - abs(u - v) ** h)


# --- kernels -----------------------------------------------------------------


def test_wiener_kernel_value():
    assert kernel_eval(GaussianModel(Wiener()), 0.3, 0.7) == pytest.approx(0.3)


def test_ifbm_unit_variance_at_half():
    assert IntegratedFBM(0.5).cov(1.0, 1.0) == pytest.approx(1.0 / 3.0, abs=1e-14)


@pytest.mark.parametrize("beta", [0.2, 0.5, 0.8, 0.95])
@pytest.mark.parametrize("s,t", [(0.3, 0.7), (1.0, 1.0), (0.05, 0.9), (0.6, 0.2)])
def test_ifbm_closed_form_matches_2d_quadrature(beta, s, t):
    def inner(u):
        # the kernel has a kink on the diagonal v = u
        pts = [u] if 0 < u < t else None
        return integrate.quad(lambda v: fbm_cov(u, v, beta), 0, t, points=pts, epsabs=1e-14, limit=200)[0]

    oracle, _ = integrate.quad(inner, 0, s, epsabs=1e-13, limit=200)
    assert float(IntegratedFBM(beta).cov(s, t)) == pytest.approx(oracle, abs=1e-8)


def test_ifbm_quadrature_fallback_agrees():
    k = IntegratedFBM(0.7)
    assert k.cov_quadrature(0.4, 0.9) == pytest.approx(float(k.cov(0.4, 0.9)), abs=1e-8)


def test_integrated_wiener_equals_ifbm_half():
    s = np.linspace(0, 1, 7)
    np.testing.assert_allclose(IntegratedWiener().cov(s[:, None], s[None]), IntegratedFBM(0.5).cov(s[:, None], s[None]), atol=1e-14)


@pytest.mark.parametrize("kernel", [Wiener(), FBM(0.3), FBM(0.9), IntegratedFBM(0.4), OrnsteinUhlenbeck(2.0, 0.5), Matern(1.5, 3.0)])
def test_variogram_matches_covariance(kernel):
    s = np.linspace(0.0, 1.0, 9)
    S, T = s[:, None], s[None, :]
    expected = kernel.cov(S, S) + kernel.cov(T, T) - 2 * kernel.cov(S, T)
    np.testing.assert_allclose(kernel.variogram(S, T), expected, atol=1e-12)


def test_matern_half_equals_ou():
    alpha, phi = 1.7, 0.4
    m = Matern(0.5, alpha, phi)
    ou = OrnsteinUhlenbeck(theta=alpha, sigma=math.sqrt(2 * alpha * math.pi * phi))
    h = np.linspace(0, 3, 31)
    np.testing.assert_allclose(m.cov(0.0, h), ou.cov(0.0, h), rtol=1e-10, atol=1e-14)


def test_matern_scalar_shape():
    assert np.shape(Matern(1.2).cov(0.1, 0.4)) == ()


@pytest.mark.parametrize("nu", [0.2, 0.5, 0.8])
def test_matern_local_intensity(nu):
    m = Matern(nu, 2.0, 0.7)
    h = 1e-7
    d0_num = 2 * (m.variance - float(m.cov(0.0, h))) / h ** (2 * nu)
    assert m.truth().d0(0.5) == pytest.approx(d0_num, rel=2e-3)


@pytest.mark.parametrize(
    "model",
    [
        GaussianModel(Wiener()),
        GaussianModel(FBM(0.95)),
        GaussianModel(IntegratedFBM(0.5)),
        GaussianModel(OrnsteinUhlenbeck()),
        GaussianModel(Matern(2.5)),
        GaussianModel(FBM(0.5), scale=PowerScale(1.0, 1.0, 1.0)),
    ],
)
def test_gram_matrices_are_psd(model):
    d = build_design(DensitySpec.affine(2 / 3, 2 / 3, 1.0), 60)
    g = gram_matrix(model, d.points)
    np.testing.assert_allclose(g, g.T, atol=1e-15)
    w = np.linalg.eigvalsh(g)
    assert w.min() >= -1e-10 * w.max()


def test_custom_kernel_nan_rejected():
    k = CustomKernel(lambda s, t: np.where(s > 0.5, np.nan, s * t))
    with pytest.raises(InvalidInputError):
        gram_matrix(GaussianModel(k), np.linspace(0, 1, 5))


def test_model_from_dict_and_errors():
    m = GaussianModel.from_dict({"kernel": "fbm", "beta": 0.8})
    assert m.truth == Regularity(0, 0.8)
    assert GaussianModel.from_json(m.model_id).model_id == m.model_id
    with pytest.raises(InvalidInputError):
        GaussianModel.from_dict({"kernel": "carma"})
    with pytest.raises(InvalidInputError):
        GaussianModel.from_dict({"kernel": "fbm"})
    with pytest.raises(InvalidInputError):
        GaussianModel.from_dict({"kernel": "fbm", "beta": 1.2})


def test_scaled_model_variogram():
    a = PowerScale(1.0, 2.0, 1.0)
    m = GaussianModel(FBM(0.6), scale=a)
    s = np.linspace(0.1, 1, 6)
    S, T = s[:, None], s[None]
    expected = m.cov(S, S) + m.cov(T, T) - 2 * m.cov(S, T)
    np.testing.assert_allclose(m.variogram(S, T), expected, atol=1e-12)
    assert m.truth.d0(0.5) == pytest.approx(4.0)


# --- simulation ----------------------------------------------------------------


def test_exact_simulation_is_deterministic(uniform_design):
    d = uniform_design(50)
    m = GaussianModel(IntegratedFBM(0.5))
    a = simulate_exact(m, d, seed=3)
    b = simulate_exact(m, d, seed=3)
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, simulate_exact(m, d, seed=4).values)


def test_substreams_independent_of_order():
    x1 = substream(9, 100, 3).standard_normal(4)
    substream(9, 100, 2).standard_normal(10)
    np.testing.assert_array_equal(x1, substream(9, 100, 3).standard_normal(4))
    assert not np.array_equal(x1, substream(9, 100, 4).standard_normal(4))


@pytest.mark.parametrize("kernel", [Wiener(), IntegratedFBM(0.8), OrnsteinUhlenbeck(1.0, 1.0)])
def test_exact_sampler_moments_within_5se(kernel):
    d = build_design(DensitySpec.affine(2 / 3, 2 / 3, 1.0), 12)
    model = GaussianModel(kernel)
    sampler = GaussianSampler(model, d)
    rng = np.random.default_rng(11)
    x = np.array([sampler.draw(rng) for _ in range(6000)])
    g = gram_matrix(model, d.points)
    for i, j in [(12, 12), (4, 9), (1, 12), (7, 7)]:
        prod = x[:, i] * x[:, j]
        se = prod.std(ddof=1) / math.sqrt(prod.size)
        assert abs(prod.mean() - g[i, j]) <= 5 * se


def test_circulant_increments_are_white_for_half():
    p = simulate_fbm_circulant(0.5, 100_000, 1.0, seed=5)
    inc = np.diff(p.values)
    var = inc.var()
    se = var * math.sqrt(2.0 / inc.size)
    assert abs(var - p.design.delta_n) <= 5 * se


def test_circulant_lag_one_correlation():
    beta = 0.8
    gen = CirculantFGN(beta, 4096, 1.0)
    rng = np.random.default_rng(8)
    r = []
    for _ in range(60):
        z = gen.draw(rng)
        r.append(np.mean(z[1:] * z[:-1]) / np.mean(z * z))
    assert np.mean(r) == pytest.approx(2 ** (2 * beta - 1) - 1, abs=0.02)


def test_circulant_matches_exact_distribution(uniform_design):
    n = 64
    d = uniform_design(n)
    beta = 0.7
    sampler = GaussianSampler(GaussianModel(FBM(beta)), d)
    gen = CirculantFGN(beta, n, d.delta_n)
    exact = np.array([sampler.draw(substream(1, j))[40] for j in range(2000)])
    circ = np.array([np.cumsum(gen.draw(substream(2, j)))[39] for j in range(2000)])
    assert stats.ks_2samp(exact, circ).pvalue > 1e-3


def test_exact_size_guard():
    d = build_design(DensitySpec.uniform(1.0), 6000)
    with pytest.raises(InvalidInputError):
        GaussianSampler(GaussianModel(Wiener()), d)


# --- transforms and ingestion -------------------------------------------------


def test_transform_round_trip(uniform_design):
    p = simulate_exact(GaussianModel(FBM(0.4)), uniform_design(20), seed=1)
    a = lambda t: 2.0 + t
    m = lambda t: t**2
    q = transform_path(p, a, m)
    np.testing.assert_allclose((q.values - m(p.t)) / a(p.t), p.values, atol=1e-14)
    assert q.truth.d0(1.0) == pytest.approx(9.0)
    with pytest.raises(InvalidInputError):
        transform_path(p, lambda t: t - 0.5)


def test_ingest_formats(tmp_path):
    f = tmp_path / "a.csv"
    f.write_text("# comment\nt,x\n1.0,0.5\n1.5,0.1\n2.5,0.3\n")
    p = ingest_csv(f)
    np.testing.assert_allclose(p.t, [0, 0.5, 1.5])
    assert p.design.origin == 1.0
    f.write_text("0,1\n1,2\n2,5\n3,7\n")
    assert ingest_csv(f).n == 3
    f.write_text("x\n1\n2\n3\n4\n5\n")
    p = ingest_csv(f)
    assert p.n == 4 and p.design.is_equidistant
    assert ingest_csv(io.StringIO("x\n1\n2\n3\n")).n == 2


@pytest.mark.parametrize(
    "text",
    ["", "# only a comment\n", "t,x\n0,1\n1,abc\n2,3\n", "t,x\n0,1\n2,2\n1,3\n", "t,y\n0,1\n1,2\n2,3\n"],
)
def test_ingest_errors(tmp_path, text):
    f = tmp_path / "bad.csv"
    f.write_text(text)
    with pytest.raises(InvalidInputError):
        ingest_csv(f)


def test_path_csv_round_trip(tmp_path, uniform_design):
    p = simulate_exact(GaussianModel(Wiener()), uniform_design(30), seed=2)
    f = tmp_path / "p.csv"
    p.to_csv(f, header="model wiener")
    back = ingest_csv(f)
    np.testing.assert_array_equal(back.values, p.values)
    np.testing.assert_array_equal(back.t, p.t)


def test_sample_path_validation(uniform_design):
    d = uniform_design(5)
    with pytest.raises(InvalidInputError):
        SamplePath(d, np.zeros(5))
    with pytest.raises(InvalidInputError):
        SamplePath(d, np.array([0, 1, np.nan, 0, 0, 0.0]))
