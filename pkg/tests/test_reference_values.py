"""Literal reference values for the public operations, one small case each."""

import math

import numpy as np
import pytest
from scipy import stats

from spvmf import ar, vmf
from spvmf.errors import NonStationaryAr, SpvmfError
from spvmf.geometry import cayley_to_rotation, rotation_to_cayley, separation_angle, tangent_normal
from spvmf.inference import Contrast, angular_expectation, covariate_effect, effect_map, mode_draws
from spvmf.link import CLAMP_EPS, angles_to_cart, cart_to_angles, general_p_link, inverse_link, link
from spvmf.mcmc import PosteriorDraws, fit
from spvmf.model import (
    CovariateTable,
    Dataset,
    DirectionField,
    ModelConfig,
    ModelState,
    StreamlineAtlas,
    build_design,
    log_posterior_terms,
    validate,
)
from spvmf.synthetic import SyntheticConfig, simulate

LOG3 = math.log(3.0)
UNIFORM = -math.log(4 * math.pi)


# -- geometry ----------------------------------------------------------------


def test_separation_angle_values():
    e1, e2 = np.array([1.0, 0, 0]), np.array([0, 1.0, 0])
    assert separation_angle(e1, e1) == 0.0
    assert separation_angle(e1, e2) == pytest.approx(math.pi / 2)
    assert separation_angle(e1, -e1) == pytest.approx(math.pi)


def test_cayley_values():
    assert np.array_equal(cayley_to_rotation([0.0, 0.0, 0.0]), np.eye(3))
    # [DERIVED] A = [[0,1,0],[-1,0,0],[0,0,0]]: (I - A)(I + A)^{-1} by hand
    assert np.allclose(cayley_to_rotation([1.0, 0.0, 0.0]), [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)
    assert np.allclose(rotation_to_cayley(np.eye(3)), 0.0)
    assert np.allclose(rotation_to_cayley(cayley_to_rotation([0.3, -0.2, 0.7])), [0.3, -0.2, 0.7], atol=1e-12)
    with pytest.raises(SpvmfError):
        rotation_to_cayley(np.diag([-1.0, -1.0, 1.0]))  # half turn about z


def test_tangent_normal_values():
    z = np.array([0.0, 0, 1])
    r = tangent_normal(z, z)
    assert r.m == 0.0 and r.degenerate and np.all(np.isnan(r.R))
    r = tangent_normal(z, np.array([1.0, 0, 0]))
    assert r.m == pytest.approx(1.0) and r.t == pytest.approx(0.0) and np.allclose(r.R, [1, 0, 0])
    r = tangent_normal(z, np.array([1.0, 0, 1.0]) / math.sqrt(2))
    assert r.m == pytest.approx(1 / math.sqrt(2)) and r.t == pytest.approx(1 / math.sqrt(2))
    assert np.allclose(r.R, [1, 0, 0])


# -- link ----------------------------------------------------------------------


def test_cart_to_angles_values():
    assert np.allclose(cart_to_angles([1.0, 0, 0]), [0, 0])
    assert np.allclose(cart_to_angles([0, 1.0, 0]), [math.pi / 2, 0])
    assert np.allclose(cart_to_angles([0, 0, 1.0]), [0, math.pi / 2])


def test_angles_to_cart_values():
    assert np.allclose(angles_to_cart(0.0, 0.0), [1, 0, 0])
    assert np.allclose(angles_to_cart(math.pi / 2, 0.0), [0, 1, 0], atol=1e-15)
    for theta in (-2.0, 0.0, 1.3):
        assert np.allclose(angles_to_cart(theta, math.pi / 2), [0, 0, 1], atol=1e-15)


def test_link_values():
    assert np.allclose(link([1.0, 0, 0]), [0, 0])
    assert np.allclose(link([0, 1.0, 0]), [LOG3, 0])  # logit(0.75)
    pole = link([0, 0, 1.0])
    assert np.all(np.isfinite(pole)) and pole[0] == pytest.approx(0.0)
    assert pole[1] == pytest.approx(math.log((1 - CLAMP_EPS) / CLAMP_EPS), rel=1e-6)


def test_inverse_link_values():
    assert np.allclose(inverse_link([0.0, 0.0]), [1, 0, 0])
    assert np.allclose(inverse_link([LOG3, 0.0]), [0, 1, 0], atol=1e-8)
    # [DERIVED] saturated azimuth: theta -> +/- pi, both land on -e1
    for s in (1, -1):
        v = inverse_link([50.0 * s, 0.0])
        assert np.allclose(v, [-1, 0, 0], atol=1e-12)
        assert math.copysign(1, v[1]) == s or abs(v[1]) < 1e-15


def test_general_link_values():
    assert np.allclose(general_p_link(0.0, [0.0]), [0, 0])
    assert np.allclose(general_p_link(math.pi / 2, [0.0, 0.0]), [LOG3, 0, 0])
    assert np.allclose(general_p_link(0.0, [math.pi / 4, -math.pi / 4]), [0, LOG3, -LOG3])


# -- vMF -------------------------------------------------------------------------


def test_log_normalizer_values():
    # [DERIVED] C3(1) = 1 / (2 pi (e - 1/e)) = 0.0677...
    assert vmf.log_normalizer_3(1.0) == pytest.approx(math.log(1 / (2 * math.pi * (math.e - 1 / math.e))))
    assert math.exp(vmf.log_normalizer_3(1.0)) == pytest.approx(0.06771, abs=1e-5)
    assert vmf.log_normalizer_3(1e-12) == pytest.approx(UNIFORM, abs=1e-9)
    assert vmf.log_normalizer_3(0.0) == pytest.approx(UNIFORM)
    # [DERIVED] large kappa: log kappa - kappa - log 2 pi, with e^{-2 kappa} negligible
    assert vmf.log_normalizer_3(40.0) == pytest.approx(math.log(40) - 40 - math.log(2 * math.pi), rel=1e-14)


def test_log_density_values():
    mu = np.array([0.0, 0.6, 0.8])
    assert vmf.log_density(mu, mu, 1.0) == pytest.approx(-math.log(2 * math.pi * (1 - math.exp(-2))))
    assert vmf.log_density(mu, mu, 1.0) == pytest.approx(-1.6924, abs=1e-4)
    assert vmf.log_density(-mu, mu, 1.0) == pytest.approx(vmf.log_density(mu, mu, 1.0) - 2.0)
    assert vmf.log_density(np.array([1.0, 0, 0]), mu, 0.0) == pytest.approx(UNIFORM)


def test_sampler_values():
    mu = np.array([0.0, 0.0, 1.0])
    x = vmf.sample(mu, 0.0, n=100_000, rng=1)
    assert np.linalg.norm(x.mean(0)) < 0.01
    y = vmf.sample(mu, 20.0, n=100_000, rng=2)
    assert abs((y @ mu).mean() - (1 / math.tanh(20) - 1 / 20)) < 0.002
    assert np.array_equal(vmf.sample(mu, 20.0, n=10, rng=3), vmf.sample(mu, 20.0, n=10, rng=3))


# -- AR ------------------------------------------------------------------------


def test_pacf_ar_values():
    assert np.allclose(ar.pacf_to_ar([0.5]), [0.5])
    assert np.allclose(ar.pacf_to_ar([0.5, 0.3]), [0.35, 0.3])  # [DERIVED] phi1 = r1 (1 - r2)
    assert np.allclose(ar.pacf_to_ar([0.5, 0.0]), [0.5, 0.0])
    assert np.allclose(ar.ar_to_pacf([0.5]), [0.5])
    assert np.allclose(ar.ar_to_pacf([0.35, 0.3]), [0.5, 0.3])
    with pytest.raises(NonStationaryAr):
        ar.ar_to_pacf([1.1])


def test_stationary_covariance_values():
    # [DERIVED] gamma0 = 1 / (1 - 0.25) = 4/3, gamma1 = 0.5 gamma0
    assert np.allclose(ar.stationary_covariance([0.5], 1.0, 2), [[4 / 3, 2 / 3], [2 / 3, 4 / 3]])
    assert np.allclose(ar.stationary_covariance([0.0, 0.0], 2.0, 3), 2 * np.eye(3))
    for rho in ([0.9, -0.8, 0.7], [-0.95], [0.3, 0.3, 0.3, 0.3]):
        assert np.linalg.eigvalsh(ar.stationary_covariance(ar.pacf_to_ar(rho), 1.0, 30)).min() > 0


def test_ar_log_density_values():
    assert ar.log_density(np.zeros(2), [0.0], 1.0) == pytest.approx(-math.log(2 * math.pi))
    x = np.array([1.0, 1.0])
    dense = stats.multivariate_normal(np.zeros(2), [[4 / 3, 2 / 3], [2 / 3, 4 / 3]]).logpdf(x)
    assert ar.log_density(x, [0.5], 1.0) == pytest.approx(dense, abs=1e-10)
    assert ar.log_density(np.array([0.7]), [0.5], 1.0) == pytest.approx(stats.norm(0, math.sqrt(4 / 3)).logpdf(0.7))


def test_ar_sample_values():
    x = ar.sample([0.0], 1.0, 100_000, rng=1)
    assert abs(x.var() - 1) < 0.02
    y = ar.sample([0.8], 1.0, 100_000, rng=2)
    assert abs(np.corrcoef(y[:-1], y[1:])[0, 1] - 0.8) < 0.01
    assert np.array_equal(ar.sample([0.3, 0.2], 1.0, 50, rng=3), ar.sample([0.3, 0.2], 1.0, 50, rng=3))


# -- model ---------------------------------------------------------------------


def test_design_values():
    t = CovariateTable(("a", "b"), ("x", "y"), [[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(build_design(t), [[1, 1, 2], [1, 3, 4]])
    g = CovariateTable(("a", "b"), ("x",), [[5.0], [6.0]], groups=("g1", "g2"))
    X = build_design(g, group_specific=True)
    assert X.shape == (2, 4)
    assert np.array_equal(X[0], [1, 5, 0, 0]) and np.array_equal(X[1], [0, 0, 1, 6])
    with pytest.raises(SpvmfError):
        build_design(CovariateTable(("a",), ("x",), [[1.0]], groups=("g3",), levels=("g1", "g2")), True)


def single_voxel_problem(kappa):
    atlas = StreamlineAtlas.chains([2])
    table = CovariateTable(("a",), (), np.zeros((1, 0)))
    E = np.array([[[0.0, 0.6, 0.8], [1.0, 0.0, 0.0]]])
    data = Dataset(atlas, table, DirectionField(E))
    state = ModelState(
        alpha=np.zeros((2, 1)), beta=np.zeros((2, 1)), eta=np.array([[[0.3, -0.2], [0.1, 0.4]]]),
        cayley=np.zeros(3), kappa=kappa,
        variances={"tau2_eps": 0.5, "tau2_xi": 0.8, "sigma2_alpha": 1.0, "sigma2_beta": 1.0},
        pacf={p: np.array([0.4]) for p in ("eps", "xi", "alpha", "beta")},
    )
    return data, state


def test_log_posterior_components():
    data, state = single_voxel_problem(kappa=3.0)
    terms = log_posterior_terms(state, data)
    mu = inverse_link(state.eta[0])
    lik = sum(vmf.log_density(data.directions.E[0, v], mu[v], 3.0) for v in range(2))
    re = ar.log_density(state.eta[0, :, 0], [0.4], 0.5) + ar.log_density(state.eta[0, :, 1], [0.4], 0.8)
    assert terms["likelihood"] == pytest.approx(lik, rel=1e-12)
    assert terms["random_effects"] == pytest.approx(re, rel=1e-12)
    data0, state0 = single_voxel_problem(kappa=0.0)
    assert log_posterior_terms(state0, data0)["likelihood"] == pytest.approx(2 * UNIFORM)


def test_log_posterior_locality():
    data, state = single_voxel_problem(kappa=3.0)
    before = log_posterior_terms(state, data)
    bumped = state.copy()
    bumped.eta[0, 1, 0] += 0.25
    after = log_posterior_terms(bumped, data)
    mu_old, mu_new = inverse_link(state.eta[0, 1]), inverse_link(bumped.eta[0, 1])
    d_lik = vmf.log_density(data.directions.E[0, 1], mu_new, 3.0) - vmf.log_density(data.directions.E[0, 1], mu_old, 3.0)
    d_prior = ar.log_density(bumped.eta[0, :, 0], [0.4], 0.5) - ar.log_density(state.eta[0, :, 0], [0.4], 0.5)
    total = sum(after.values()) - sum(before.values())
    assert total == pytest.approx(d_lik + d_prior, abs=1e-12)


def test_validate_values():
    sim = simulate(SyntheticConfig(n_fibers=2, voxels_per_fiber=3, n_train=3, n_test=0, n_covariates=1))
    d = sim.train
    assert validate(d.atlas, d.table, d.directions).violations == []
    overlap = StreamlineAtlas([np.array([0, 1, 2]), np.array([2, 3, 4, 5])])
    assert "disjointness" in {v["kind"] for v in validate(overlap).violations}
    E = d.directions.E.copy()
    E[1, 4] *= 2
    bad = [v for v in validate(d.atlas, d.table, DirectionField(E, d.directions.mask)).violations
           if v["kind"] == "norm"]
    assert len(bad) == 1 and tuple(bad[0]["where"]) == (1, 4)


# -- sampler ---------------------------------------------------------------------


def test_sanity_fit_on_noiseless_data():
    # [DERIVED] directions equal to their modes pin the posterior modes
    sim = simulate(SyntheticConfig(n_fibers=1, voxels_per_fiber=8, n_train=10, n_test=0, n_covariates=1,
                                   kappa=400.0, tau2_eps=1e-4, tau2_xi=1e-4, sigma2_alpha=0.3, sigma2_beta=0.3,
                                   pacf=(0.5,), lag=1, seed=5))
    d = sim.train
    truth = inverse_link(sim.truth["eta"])
    clean = Dataset(d.atlas, d.table, DirectionField(truth))
    draws, _ = fit(clean, ModelConfig(lag=1, n_iter=1500, burn=750, seed=1, store_eta=False))
    est = angular_expectation(mode_draws(draws, d.X), axis=0)
    assert np.degrees(separation_angle(est, sim.true_modes(d.X))).max() < 2.0


# -- inference -------------------------------------------------------------------


def one_draw(alpha, beta, T=1):
    return PosteriorDraws(
        alpha=np.repeat(np.asarray(alpha, float)[None], T, 0), beta=np.repeat(np.asarray(beta, float)[None], T, 0),
        cayley=np.zeros((T, 3)), kappa=np.ones(T), variances={}, pacf={}, iterations=np.arange(T),
        log_post=np.zeros(T),
    )


def test_angular_expectation_values():
    v = np.array([[0.0, 0.6, 0.8]])
    assert np.allclose(angular_expectation(v), v[0])
    assert np.allclose(angular_expectation(np.array([[1.0, 0, 0], [0, 1.0, 0]])), [2**-0.5, 2**-0.5, 0])


def test_mode_draw_values():
    d = one_draw(np.zeros((1, 2)), np.zeros((1, 2)))
    assert np.allclose(mode_draws(d, [1.0, 0.7])[:, 0, 0], [[1, 0, 0]])
    same = one_draw([[0.2, -0.1]], [[0.3, 0.5]], T=5)
    M = mode_draws(same, [1.0, 0.4])[:, 0, 0]
    assert np.allclose(M, M[0]) and np.allclose(angular_expectation(M), M[0])


def test_null_contrast_values():
    d = one_draw([[0.2, -0.1], [0.4, 0.3]], [[0.3, 0.5], [0.0, 0.1]], T=4)
    x = np.array([1.0, 0.5])
    row = covariate_effect(d, x, x, voxel=1, on_degenerate="report")
    assert row.m_mean == 0.0 and row.prob_large == 0.0 and row.all_degenerate
    rep = effect_map(d, Contrast("null", x, x.copy()))
    assert rep.n_flagged == 0 and np.all(rep.column("m_mean") == 0.0)
