"""Comparators: two conjugate Gaussian regressions and a non-spatial vMF regression.

* ``fit_gauss1`` regresses the Cartesian directions E_iv on X_i, voxel by
  voxel, with a shared 3x3 error covariance.
* ``fit_gauss2`` does the same on the linked coordinates link(E_iv) with a
  shared 2x2 covariance.
* ``fit_vmf_nonspatial`` keeps the vMF likelihood but drops the random
  effects and the AR priors; coefficients get independent N(0, sigma2)
  priors.

The Gaussian coefficient priors are N(0, 1000 I); the error covariances get
inverse-Wishart(5, I) priors.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import invwishart

from .errors import NonFiniteLogPosterior, RankDeficientDesign
from .geometry import cayley_to_rotation
from .inference import angular_expectation
from .link import inverse_link, link
from .mcmc import (
    AcceptanceLedger,
    GlobalBlocks,
    draw_inverse_gamma,
    robbins_monro,
    run_chain,
)
from .model import (
    CAYLEY_PRIOR_VAR,
    IG_RATE,
    IG_SHAPE,
    ModelConfig,
    ModelState,
    align_seam,
    inverse_gamma_logpdf,
    vmf_loglik,
)

GAUSS_PRIOR_VAR = 1000.0
WISHART_DF = 5.0


def _check_rank(X, mask):
    D = X.shape[1]
    for v in range(mask.shape[1]):
        if np.linalg.matrix_rank(X[mask[:, v]]) < D:
            raise RankDeficientDesign(f"design restricted to the subjects observed at voxel {v} is rank deficient")


@dataclass
class GaussianDraws:
    """Coefficient draws ``coef`` (T, V, D, q) and covariance draws ``cov`` (T, q, q)."""

    coef: np.ndarray
    cov: np.ndarray
    response: str
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.coef.shape[0]

    def linear_predictor(self, X):
        return np.einsum("nd,tvdq->tnvq", np.atleast_2d(X), self.coef)

    def predict_modes(self, X):
        """Unit-length predicted modes (N, V, 3).

        Cartesian fits normalise the posterior mean prediction; linked fits
        map every draw back to the sphere and take the angular expectation.
        """
        lin = self.linear_predictor(X)
        if self.response == "cartesian":
            m = lin.mean(axis=0)
            return m / np.linalg.norm(m, axis=-1, keepdims=True)
        return angular_expectation(inverse_link(lin), axis=0)


class GaussianSampler:
    """Two-block Gibbs sampler for Y_iv ~ N(U_v' X_i, Sigma) with a shared Sigma."""

    def __init__(self, X, Y, mask, rng, prior_var=GAUSS_PRIOR_VAR, df=WISHART_DF, scale=None):
        self.X = np.asarray(X, dtype=float)
        self.Y = np.asarray(Y, dtype=float)
        self.mask = np.asarray(mask, dtype=bool)
        self.rng = rng
        self.q = self.Y.shape[-1]
        self.D = self.X.shape[1]
        self.prior_var = prior_var
        self.df = df
        self.scale = np.eye(self.q) if scale is None else np.asarray(scale, dtype=float)
        m = self.mask.astype(float)
        self.XtX = np.einsum("nv,nd,ne->vde", m, self.X, self.X)
        Ym = np.where(self.mask[..., None], self.Y, 0.0)
        self.XtY = np.einsum("nd,nvq->vdq", self.X, Ym)
        self.n_obs = int(self.mask.sum())
        self.cov = np.eye(self.q)
        self.coef = np.zeros((self.mask.shape[1], self.D, self.q))

    def coef_conditional(self, cov=None):
        """Mean (V, D*q) and covariance (V, D*q, D*q) of vec(U_v) given Sigma.

        ``vec`` stacks the columns of U_v (D x q), so entry ``p * D + d`` is
        covariate ``d`` of response component ``p``.
        """
        cov = self.cov if cov is None else cov
        Sinv = np.linalg.inv(cov)
        Dq = self.D * self.q
        prec = np.einsum("pr,vde->vpdre", Sinv, self.XtX).reshape(-1, Dq, Dq) + np.eye(Dq) / self.prior_var
        lin = np.einsum("vdq,qp->vpd", self.XtY, Sinv).reshape(-1, Dq)
        post_cov = np.linalg.inv(prec)
        post_cov = 0.5 * (post_cov + np.swapaxes(post_cov, 1, 2))
        mean = np.einsum("vij,vj->vi", post_cov, lin)
        return mean, post_cov

    def cov_conditional(self, coef=None):
        """Degrees of freedom and scale of the inverse-Wishart conditional of Sigma."""
        coef = self.coef if coef is None else coef
        resid = self.Y - np.einsum("nd,vdq->nvq", self.X, coef)
        resid = np.where(self.mask[..., None], resid, 0.0)
        S = np.einsum("nvp,nvr->pr", resid, resid)
        return self.df + self.n_obs, self.scale + S

    def sweep(self):
        mean, cov = self.coef_conditional()
        L = np.linalg.cholesky(cov)
        z = self.rng.standard_normal(mean.shape)
        vec = mean + np.einsum("vij,vj->vi", L, z)
        self.coef = vec.reshape(-1, self.q, self.D).transpose(0, 2, 1)
        df, scale = self.cov_conditional()
        self.cov = np.atleast_2d(invwishart.rvs(df=df, scale=scale, random_state=self.rng))


def _fit_gaussian(X, Y, mask, config, seed, response):
    _check_rank(X, mask)
    rng = np.random.default_rng(config.seed if seed is None else seed)
    g = GaussianSampler(X, Y, mask, rng)
    coefs, covs = [], []
    for t in range(config.n_iter):
        g.sweep()
        if t >= config.burn and (t - config.burn) % config.thin == 0:
            coefs.append(g.coef.copy())
            covs.append(g.cov.copy())
    return GaussianDraws(np.stack(coefs), np.stack(covs), response, {"seed": config.seed if seed is None else seed})


def fit_gauss1(data, config=None, seed=None):
    """Gaussian regression of the Cartesian directions."""
    config = config or ModelConfig()
    E = np.where(data.directions.mask[..., None], data.directions.E, 0.0)
    return _fit_gaussian(data.X, E, data.directions.mask, config, seed, "cartesian")


def fit_gauss2(data, config=None, seed=None):
    """Gaussian regression of the linked coordinates."""
    config = config or ModelConfig()
    mask = data.directions.mask
    E = np.where(mask[..., None], data.directions.E, [1.0, 0.0, 0.0])
    Y = np.where(mask[..., None], link(E, config.clamp_eps), 0.0)
    return _fit_gaussian(data.X, Y, mask, config, seed, "linked")


class NonSpatialSampler(GlobalBlocks):
    """Random-walk MH on per-voxel coefficients; Gibbs on their prior variances."""

    def __init__(self, data, config=None, rng=None):
        self.data = data
        self.config = config or ModelConfig()
        cfg = self.config
        self.rng = np.random.default_rng(cfg.seed if rng is None else rng)
        self.X = data.X
        self.E = data.directions.E
        self.mask = data.directions.mask
        self.n_obs = int(self.mask.sum())
        D = self.X.shape[1]
        V = self.mask.shape[1]
        ridge = 1e-3 * np.eye(D)
        eta = np.where(self.mask[..., None], link(np.where(self.mask[..., None], self.E, [1.0, 0.0, 0.0]), cfg.clamp_eps), 0.0)
        eta = np.clip(eta, -8.0, 8.0)
        eta[..., 0] = align_seam(eta[..., 0], self.X, self.mask, ridge)
        coef = np.zeros((2, V, D))
        for v in range(V):
            rows = self.mask[:, v]
            if rows.any():
                Xv = self.X[rows]
                coef[:, v] = np.linalg.solve(Xv.T @ Xv + ridge, Xv.T @ eta[rows, v]).T
        self.state = ModelState(
            alpha=coef[0], beta=coef[1], eta=None, cayley=np.zeros(3), kappa=10.0,
            variances={"sigma2_alpha": 1.0, "sigma2_beta": 1.0}, pacf={},
        )
        # proposals shaped like the least-squares covariance
        self.shape = np.linalg.cholesky(np.linalg.inv(self.X.T @ self.X + ridge))
        self.steps = {
            "coef": np.full((2, V), math.log(cfg.coef_step)),
            "log_kappa": math.log(cfg.log_kappa_step),
            "cayley": math.log(cfg.cayley_step),
        }
        self.ledger = AcceptanceLedger()
        self.iteration = 0
        self._set_rotation(self.state.cayley)
        self.mu = inverse_link(self._eta())

    def _eta(self, alpha=None, beta=None):
        s = self.state
        a = s.alpha if alpha is None else alpha
        b = s.beta if beta is None else beta
        return np.stack([self.X @ a.T, self.X @ b.T], axis=-1)

    def _voxel_lik_delta(self, mu_new):
        return self.state.kappa * np.sum(self.QtE * (mu_new - self.mu), axis=(0, 2))

    def update_coefficients(self):
        s = self.state
        cfg = self.config
        for ch, name in ((0, "sigma2_alpha"), (1, "sigma2_beta")):
            coef = s.coef(ch)
            log_step = self.steps["coef"][ch]
            z = self.rng.standard_normal(coef.shape) @ self.shape.T
            prop = coef + np.exp(log_step)[:, None] * z
            mu_prop = inverse_link(self._eta(**{("alpha" if ch == 0 else "beta"): prop}))
            d = self._voxel_lik_delta(mu_prop) - 0.5 * (np.sum(prop**2, 1) - np.sum(coef**2, 1)) / s.variances[name]
            acc = np.log(self.rng.random(d.shape)) < d
            coef[acc] = prop[acc]
            self.mu[:, acc] = mu_prop[:, acc]
            if self._adapting():
                self.steps["coef"][ch] = robbins_monro(log_step, acc, self.iteration, cfg.adapt_target)
            self._record("alpha" if ch == 0 else "beta", acc.sum(), acc.size)
        # azimuth mirror per voxel: alpha_v -> -alpha_v
        prop = -s.alpha
        mu_prop = inverse_link(self._eta(alpha=prop))
        acc = np.log(self.rng.random(prop.shape[0])) < self._voxel_lik_delta(mu_prop)
        s.alpha[acc] = prop[acc]
        self.mu[:, acc] = mu_prop[:, acc]
        if not (np.all(np.isfinite(s.alpha)) and np.all(np.isfinite(s.beta))):
            raise NonFiniteLogPosterior("coefficients")

    def update_variances(self):
        s = self.state
        for name, coef in (("sigma2_alpha", s.alpha), ("sigma2_beta", s.beta)):
            s.variances[name] = draw_inverse_gamma(IG_SHAPE + 0.5 * coef.size, IG_RATE + 0.5 * float(np.sum(coef**2)), self.rng)

    def sweep(self):
        self.update_coefficients()
        self.update_variances()
        self.update_kappa()
        self.update_cayley()
        self.iteration += 1


def nonspatial_log_posterior(state, data):
    mu = inverse_link(np.stack([data.X @ state.alpha.T, data.X @ state.beta.T], axis=-1))
    d = data.directions
    lp = vmf_loglik(mu, d.E, d.mask, cayley_to_rotation(state.cayley), state.kappa)
    for name, coef in (("sigma2_alpha", state.alpha), ("sigma2_beta", state.beta)):
        v = state.variances[name]
        lp += -0.5 * float(np.sum(coef**2)) / v - 0.5 * coef.size * math.log(2 * math.pi * v)
        lp += float(inverse_gamma_logpdf(v))
    a = np.asarray(state.cayley)
    lp += float(-0.5 * (a @ a) / CAYLEY_PRIOR_VAR - 1.5 * np.log(2 * np.pi * CAYLEY_PRIOR_VAR))
    return lp


def fit_vmf_nonspatial(data, config=None, seed=None):
    """vMF regression without random effects or spatial priors."""
    config = config or ModelConfig()
    if seed is not None:
        config = ModelConfig.from_dict({**config.to_dict(), "seed": int(seed)})
    sampler = NonSpatialSampler(data, config)
    draws = run_chain(sampler, config, log_post_fn=lambda s: nonspatial_log_posterior(s, data), keep_eta=False)
    draws.meta.update({"model": "vmf_nonspatial", "config": config.to_dict()})
    return draws

