"""Metropolis-Hastings-within-Gibbs sampler for the spatial vMF regression.

One sweep updates, in order:

1. ``eta`` voxel by voxel with bivariate Gaussian random-walk MH. Voxels
   whose streamline positions agree modulo ``P + 1`` are conditionally
   independent (the AR precision is banded), so each such colour class is
   updated in one vectorised step.
2. The coefficients of each streamline and channel, jointly over covariate
   columns, by an exact Gaussian draw.
3. The four variances by exact inverse-gamma draws.
4. Each partial autocorrelation by random-walk MH reflected at +/-1.
5. ``log kappa`` by random-walk MH.
6. The Cayley parameters by a joint trivariate random walk.

Random-walk scales adapt by Robbins-Monro during burn-in and are frozen
afterwards.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from . import ar
from .errors import NonFiniteLogPosterior
from .geometry import cayley_to_rotation
from .link import inverse_link
from .model import (
    CAYLEY_PRIOR_VAR,
    IG_RATE,
    IG_SHAPE,
    PROCESSES,
    VARIANCE_NAMES,
    ModelConfig,
    ModelState,
    initial_state,
    log_posterior,
)
from .vmf import log_normalizer_3

log = logging.getLogger(__name__)

ADAPT_EXPONENT = 0.6


def robbins_monro(log_step, accepted, t, target):
    """Nudge log step sizes toward the target acceptance rate."""
    gain = min(1.0, (t + 1.0) ** -ADAPT_EXPONENT)
    return log_step + gain * (np.asarray(accepted, dtype=float) - target)


def reflect(x, lo=-1.0, hi=1.0):
    """Fold ``x`` back into ``[lo, hi]`` by reflection at the bounds."""
    width = hi - lo
    y = np.mod(x - lo, 2.0 * width)
    return lo + np.where(y > width, 2.0 * width - y, y)


def kappa_log_target(log_kappa, lin, n_obs, kappa_max):
    """Log target for log kappa under a flat prior on kappa (includes the Jacobian)."""
    kappa = math.exp(log_kappa)
    if kappa > kappa_max:
        return -np.inf
    return n_obs * float(log_normalizer_3(kappa)) + kappa * lin + log_kappa


def mh_log_kappa(kappa, lin, n_obs, log_step, rng, kappa_max):
    """One random-walk MH step on log kappa; ``lin`` = sum of mu'Q'E over observations."""
    cur = math.log(kappa)
    prop = cur + math.exp(log_step) * rng.standard_normal()
    log_u = math.log(rng.random())
    if log_u < kappa_log_target(prop, lin, n_obs, kappa_max) - kappa_log_target(cur, lin, n_obs, kappa_max):
        return math.exp(prop), True
    return kappa, False


def cayley_log_target(a, kappa, M):
    """kappa * sum_iv E'Q(a)mu + log N(a | 0, 100 I), with M = sum_iv E mu'."""
    Q = cayley_to_rotation(a)
    return kappa * float(np.sum(Q * M)) - 0.5 * float(a @ a) / CAYLEY_PRIOR_VAR


def mh_cayley(a, kappa, M, log_step, rng):
    prop = a + math.exp(log_step) * rng.standard_normal(3)
    log_u = math.log(rng.random())
    if log_u < cayley_log_target(prop, kappa, M) - cayley_log_target(a, kappa, M):
        return prop, True
    return a, False


def draw_inverse_gamma(shape, rate, rng):
    return 1.0 / rng.gamma(shape, 1.0 / rate)


@dataclass
class AcceptanceLedger:
    """Accepted / proposed counts per block, post burn-in only."""

    counts: dict = field(default_factory=dict)

    def record(self, block, accepted, proposed):
        a, p = self.counts.get(block, (0, 0))
        self.counts[block] = (a + int(accepted), p + int(proposed))

    def rates(self):
        return {b: (a / p if p else float("nan")) for b, (a, p) in self.counts.items()}

    def to_dict(self):
        return {b: list(v) for b, v in self.counts.items()}

    @classmethod
    def from_dict(cls, d):
        return cls({b: tuple(v) for b, v in d.items()})


@dataclass
class PosteriorDraws:
    """Stacked post-burn, thinned draws.

    Arrays carry the draw index on axis 0. ``variances`` and ``pacf`` map
    parameter names to arrays so the same container serves reduced models.
    """

    alpha: np.ndarray
    beta: np.ndarray
    cayley: np.ndarray
    kappa: np.ndarray
    variances: dict
    pacf: dict
    iterations: np.ndarray
    log_post: np.ndarray
    eta: np.ndarray = None
    acceptance: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.kappa.shape[0]

    @property
    def rotations(self):
        return np.stack([cayley_to_rotation(a) for a in self.cayley]) if len(self) else np.zeros((0, 3, 3))

    def state(self, t):
        return ModelState(
            alpha=self.alpha[t].copy(),
            beta=self.beta[t].copy(),
            eta=None if self.eta is None else self.eta[t].copy(),
            cayley=self.cayley[t].copy(),
            kappa=float(self.kappa[t]),
            variances={k: float(v[t]) for k, v in self.variances.items()},
            pacf={k: v[t].copy() for k, v in self.pacf.items()},
        )

    def traces(self):
        """Scalar traces monitored by the convergence diagnostics.

        Every regression coefficient is monitored alongside the concentration,
        variances, PACFs, rotation and log posterior. The latent linked angles
        are not.
        """
        out = {"log_kappa": np.log(self.kappa)}
        for name, coef in (("alpha", self.alpha), ("beta", self.beta)):
            for v in range(coef.shape[1]):
                for c in range(coef.shape[2]):
                    out[f"{name}_{v}_{c}"] = coef[:, v, c]
        for k, v in self.variances.items():
            out[f"log_{k}"] = np.log(v)
        for k, v in self.pacf.items():
            for j in range(v.shape[1]):
                out[f"pacf_{k}_{j + 1}"] = v[:, j]
        for j in range(3):
            out[f"cayley_{j + 1}"] = self.cayley[:, j]
        out["log_posterior"] = self.log_post
        return out

    @classmethod
    def from_states(cls, states, iterations, log_post, keep_eta=True, acceptance=None, meta=None):
        if not states:
            raise ValueError("no draws to stack")
        s0 = states[0]
        return cls(
            alpha=np.stack([s.alpha for s in states]),
            beta=np.stack([s.beta for s in states]),
            cayley=np.stack([np.asarray(s.cayley, dtype=float) for s in states]),
            kappa=np.array([s.kappa for s in states]),
            variances={k: np.array([s.variances[k] for s in states]) for k in s0.variances},
            pacf={k: np.stack([s.pacf[k] for s in states]) for k in s0.pacf},
            iterations=np.asarray(iterations, dtype=int),
            log_post=np.asarray(log_post, dtype=float),
            eta=np.stack([s.eta for s in states]) if keep_eta and s0.eta is not None else None,
            acceptance=dict(acceptance or {}),
            meta=dict(meta or {}),
        )

    def concat(self, other):
        eta = None
        if self.eta is not None and other.eta is not None:
            eta = np.concatenate([self.eta, other.eta])
        return PosteriorDraws(
            alpha=np.concatenate([self.alpha, other.alpha]),
            beta=np.concatenate([self.beta, other.beta]),
            cayley=np.concatenate([self.cayley, other.cayley]),
            kappa=np.concatenate([self.kappa, other.kappa]),
            variances={k: np.concatenate([v, other.variances[k]]) for k, v in self.variances.items()},
            pacf={k: np.concatenate([v, other.pacf[k]]) for k, v in self.pacf.items()},
            iterations=np.concatenate([self.iterations, other.iterations]),
            log_post=np.concatenate([self.log_post, other.log_post]),
            eta=eta,
            acceptance=other.acceptance or self.acceptance,
            meta=other.meta or self.meta,
        )

    def record(self, t, include_eta=True):
        """One draw as a JSON-ready dict."""
        s = self.state(t)
        d = {"iteration": int(self.iterations[t]), "log_post": float(self.log_post[t])}
        d.update(s.to_dict(include_eta=include_eta and s.eta is not None))
        return d

    @classmethod
    def from_records(cls, records, acceptance=None, meta=None):
        states, its, lps = [], [], []
        keep_eta = all("eta" in r for r in records)
        for r in records:
            r = dict(r)
            if not keep_eta:
                r["eta"] = None
            s = ModelState(
                alpha=np.array(r["alpha"], dtype=float),
                beta=np.array(r["beta"], dtype=float),
                eta=None if r["eta"] is None else np.array(r["eta"], dtype=float),
                cayley=np.array(r["cayley"], dtype=float),
                kappa=float(r["kappa"]),
                variances={k: float(v) for k, v in r["variances"].items()},
                pacf={k: np.array(v, dtype=float).reshape(-1) for k, v in r["pacf"].items()},
            )
            states.append(s)
            its.append(r["iteration"])
            lps.append(r["log_post"])
        return cls.from_states(states, its, lps, keep_eta=keep_eta, acceptance=acceptance, meta=meta)


@dataclass
class Checkpoint:
    """Everything needed to continue a chain bit-for-bit."""

    iteration: int
    state: dict
    steps: dict
    rng_state: dict
    acceptance: dict

    def to_dict(self):
        return {
            "iteration": self.iteration,
            "state": self.state,
            "steps": self.steps,
            "rng_state": self.rng_state,
            "acceptance": self.acceptance,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class GlobalBlocks:
    """Updates shared by every vMF sampler: adaptation bookkeeping, kappa and Q.

    Subclasses provide ``state``, ``config``, ``rng``, ``steps``, ``ledger``,
    ``iteration``, ``mask``, ``E``, ``n_obs``, ``mu`` and ``QtE``.
    """

    def _adapting(self):
        return self.iteration < self.config.burn

    def _record(self, block, accepted, proposed):
        if not self._adapting():
            self.ledger.record(block, accepted, proposed)

    def _set_rotation(self, a):
        self.state.cayley = np.asarray(a, dtype=float)
        self.Q = cayley_to_rotation(self.state.cayley)
        self.QtE = np.where(self.mask[..., None], self.E @ self.Q, 0.0)

    def vmf_linear_term(self):
        """sum over observations of (Q mu)'E."""
        return float(np.sum(self.mu * self.QtE))

    def moment_matrix(self):
        """M = sum over observations of E mu'."""
        Em = np.where(self.mask[..., None], self.E, 0.0)
        return np.einsum("nvi,nvj->ij", Em, self.mu)

    def update_kappa(self):
        s = self.state
        kappa, acc = mh_log_kappa(
            s.kappa, self.vmf_linear_term(), self.n_obs, self.steps["log_kappa"], self.rng, self.config.kappa_max
        )
        if not np.isfinite(kappa):
            raise NonFiniteLogPosterior("kappa")
        s.kappa = kappa
        if self._adapting():
            self.steps["log_kappa"] = float(
                robbins_monro(self.steps["log_kappa"], acc, self.iteration, self.config.adapt_target)
            )
        self._record("log_kappa", acc, 1)

    def update_cayley(self):
        s = self.state
        a, acc = mh_cayley(np.asarray(s.cayley, dtype=float), s.kappa, self.moment_matrix(), self.steps["cayley"], self.rng)
        if not np.all(np.isfinite(a)):
            raise NonFiniteLogPosterior("cayley")
        if acc:
            self._set_rotation(a)
        if self._adapting():
            self.steps["cayley"] = float(robbins_monro(self.steps["cayley"], acc, self.iteration, self.config.adapt_target))
        self._record("cayley", acc, 1)


class SpatialSampler(GlobalBlocks):
    """Holds the chain state, proposal scales and cached AR factors for one chain."""

    def __init__(self, data, config=None, state=None, rng=None):
        self.data = data
        self.config = config or ModelConfig()
        cfg = self.config
        self.rng = np.random.default_rng(cfg.seed if rng is None else rng)
        self.X = data.X
        self.XtX = self.X.T @ self.X
        self.E = data.directions.E
        self.mask = data.directions.mask
        self.n_obs = int(self.mask.sum())
        self.fibers = data.atlas.fibers
        self.max_len = data.atlas.max_length
        P = cfg.lag
        self.colors = [
            [np.flatnonzero(np.arange(f.size) % (P + 1) == c) for c in range(min(P + 1, f.size))]
            for f in self.fibers
        ]
        self.state = (state or initial_state(data, cfg)).copy()
        if any(np.size(self.state.pacf[p]) != P for p in PROCESSES):
            raise ValueError(f"state PACFs must all have length lag={P}")
        N, V = self.mask.shape
        self.steps = {
            "eta": np.full((N, V), math.log(cfg.eta_step)),
            "pacf": {p: np.full(P, math.log(cfg.pacf_step)) for p in PROCESSES},
            "log_kappa": math.log(cfg.log_kappa_step),
            "cayley": math.log(cfg.cayley_step),
        }
        self.ledger = AcceptanceLedger()
        self.iteration = 0
        self._refresh()

    # -- cached quantities -------------------------------------------------

    def _refresh(self):
        s = self.state
        self.Q = cayley_to_rotation(s.cayley)
        self.QtE = np.where(self.mask[..., None], self.E @ self.Q, 0.0)
        self.mu = inverse_link(s.eta)
        self.factors = {p: ar.ArFactor(s.pacf[p], self.max_len) for p in PROCESSES}

    # -- blocks ------------------------------------------------------------

    def update_eta(self, active=None):
        """Per-voxel random-walk MH on the latent linked coordinates."""
        s = self.state
        cfg = self.config
        eta = s.eta
        var_e = s.variances["tau2_eps"]
        var_x = s.variances["tau2_xi"]
        n_acc = 0
        n_prop = 0
        for fiber, colors in zip(self.fibers, self.colors):
            n = fiber.size
            lam_e = self.factors["eps"].precision(n) / var_e
            lam_x = self.factors["xi"].precision(n) / var_x
            coef_a = s.alpha[fiber]
            coef_b = s.beta[fiber]
            resid = np.stack([eta[:, fiber, 0] - self.X @ coef_a.T, eta[:, fiber, 1] - self.X @ coef_b.T], -1)
            for pos in colors:
                vox = fiber[pos]
                log_step = self.steps["eta"][:, vox]
                z = self.rng.standard_normal((eta.shape[0], pos.size, 2))
                d = np.exp(log_step)[..., None] * z
                g_e = resid[:, :, 0] @ lam_e[:, pos]
                g_x = resid[:, :, 1] @ lam_x[:, pos]
                d_prior = -(d[..., 0] * g_e + 0.5 * lam_e[pos, pos] * d[..., 0] ** 2)
                d_prior -= d[..., 1] * g_x + 0.5 * lam_x[pos, pos] * d[..., 1] ** 2
                prop = eta[:, vox] + d
                mu_prop = inverse_link(prop)
                d_lik = s.kappa * np.sum(self.QtE[:, vox] * (mu_prop - self.mu[:, vox]), axis=-1)
                log_u = np.log(self.rng.random(d_lik.shape))
                acc = log_u < d_prior + d_lik
                if active is not None:
                    acc &= active[:, vox]
                    live = active[:, vox]
                else:
                    live = np.ones_like(acc)
                eta[:, vox] = np.where(acc[..., None], prop, eta[:, vox])
                self.mu[:, vox] = np.where(acc[..., None], mu_prop, self.mu[:, vox])
                resid[:, pos] = np.where(acc[..., None], resid[:, pos] + d, resid[:, pos])
                if self._adapting():
                    self.steps["eta"][:, vox] = np.where(
                        live, robbins_monro(log_step, acc, self.iteration, cfg.adapt_target), log_step
                    )
                n_acc += int(acc.sum())
                n_prop += int(live.sum())

                # Flipping the sign of the azimuth coordinate mirrors theta -> -theta,
                # which carries a point across the +/-pi seam in one step. It is an
                # involution with unit Jacobian, so the plain target ratio applies.
                d0 = -2.0 * eta[:, vox, 0]
                g_e = resid[:, :, 0] @ lam_e[:, pos]
                d_prior = -(d0 * g_e + 0.5 * lam_e[pos, pos] * d0**2)
                prop = np.stack([-eta[:, vox, 0], eta[:, vox, 1]], axis=-1)
                mu_prop = inverse_link(prop)
                d_lik = s.kappa * np.sum(self.QtE[:, vox] * (mu_prop - self.mu[:, vox]), axis=-1)
                flip = np.log(self.rng.random(d_lik.shape)) < d_prior + d_lik
                if active is not None:
                    flip &= active[:, vox]
                eta[:, vox] = np.where(flip[..., None], prop, eta[:, vox])
                self.mu[:, vox] = np.where(flip[..., None], mu_prop, self.mu[:, vox])
                resid[:, pos, 0] = np.where(flip, resid[:, pos, 0] + d0, resid[:, pos, 0])
        if not np.all(np.isfinite(eta)):
            raise NonFiniteLogPosterior("eta")
        self._record("eta", n_acc, n_prop)

    def _theta_block_logpost(self, k, eta_f, alpha_f, mu_f):
        """Terms of the log posterior touched by the azimuth channel of fiber ``k``."""
        s = self.state
        fiber = self.fibers[k]
        resid = eta_f[..., 0] - self.X @ alpha_f.T
        lp = self.factors["eps"].log_density(resid, s.variances["tau2_eps"])
        lp += self.factors["alpha"].log_density(alpha_f.T, s.variances["sigma2_alpha"])
        lp += s.kappa * float(np.sum(self.QtE[:, fiber] * mu_f))
        return lp

    def update_reflection(self, proposals_per_fiber=4):
        """Mirror the azimuth (theta -> -theta) over a random run of one streamline.

        The linked azimuth of every subject and the azimuth coefficients on the
        run change sign together. Regions sitting just across the +/-pi seam
        can only reach the other side this way, because a random walk on the
        linked scale would have to pass through the antipodal direction. The
        move is an involution with unit Jacobian.
        """
        s = self.state
        n_acc = 0
        n_prop = 0
        for k, fiber in enumerate(self.fibers):
            n = fiber.size
            for _ in range(proposals_per_fiber):
                a, b = np.sort(self.rng.choice(n + 1, size=2, replace=False))
                log_u = math.log(self.rng.random())
                eta_f = s.eta[:, fiber]
                alpha_f = s.alpha[fiber]
                mu_f = self.mu[:, fiber]
                cur = self._theta_block_logpost(k, eta_f, alpha_f, mu_f)
                eta_p = eta_f.copy()
                eta_p[:, a:b, 0] *= -1.0
                alpha_p = alpha_f.copy()
                alpha_p[a:b] *= -1.0
                mu_p = mu_f.copy()
                mu_p[:, a:b] = inverse_link(eta_p[:, a:b])
                new = self._theta_block_logpost(k, eta_p, alpha_p, mu_p)
                n_prop += 1
                if log_u < new - cur:
                    s.eta[:, fiber] = eta_p
                    s.alpha[fiber] = alpha_p
                    self.mu[:, fiber] = mu_p
                    n_acc += 1
        self._record("reflection", n_acc, n_prop)

    def coefficient_conditional(self, fiber_index, channel):
        """Mean and precision of the Gaussian full conditional of one streamline's coefficients.

        The coefficient vector is ordered column-major: entry ``c * n + j`` is
        covariate column ``c`` at streamline position ``j``.
        """
        s = self.state
        fiber = self.fibers[fiber_index]
        n = fiber.size
        D = self.X.shape[1]
        re, cp = ("eps", "alpha") if channel == 0 else ("xi", "beta")
        lam_r = self.factors[re].precision(n) / s.variances[VARIANCE_NAMES[re]]
        lam_c = self.factors[cp].precision(n) / s.variances[VARIANCE_NAMES[cp]]
        prec = np.kron(self.XtX, lam_r) + np.kron(np.eye(D), lam_c)
        Y = s.eta[:, fiber, channel]
        lin = (lam_r @ Y.T @ self.X).T.ravel()
        chol = cholesky(prec, lower=True)
        mean = cho_solve((chol, True), lin)
        return mean, prec, chol

    def update_coefficients(self):
        s = self.state
        D = self.X.shape[1]
        for k, fiber in enumerate(self.fibers):
            n = fiber.size
            for ch in (0, 1):
                mean, _, chol = self.coefficient_conditional(k, ch)
                z = self.rng.standard_normal(mean.size)
                draw = mean + solve_triangular(chol.T, z, lower=False)
                s.coef(ch)[fiber] = draw.reshape(D, n).T
        if not (np.all(np.isfinite(s.alpha)) and np.all(np.isfinite(s.beta))):
            raise NonFiniteLogPosterior("coefficients")

    def _series(self, process):
        """Per-fiber arrays whose rows are AR series for ``process``."""
        s = self.state
        if process in ("eps", "xi"):
            ch = 0 if process == "eps" else 1
            coef = s.coef(ch)
            return [s.eta[:, f, ch] - self.X @ coef[f].T for f in self.fibers]
        coef = s.alpha if process == "alpha" else s.beta
        return [coef[f].T for f in self.fibers]

    def variance_conditional(self, process):
        """Shape and rate of the inverse-gamma full conditional of a variance."""
        series = self._series(process)
        fac = self.factors[process]
        q = sum(float(fac.quad(x).sum()) for x in series)
        n = sum(x.size for x in series)
        return IG_SHAPE + 0.5 * n, IG_RATE + 0.5 * q

    def update_variances(self):
        s = self.state
        for p in PROCESSES:
            shape, rate = self.variance_conditional(p)
            v = draw_inverse_gamma(shape, rate, self.rng)
            if not (np.isfinite(v) and v > 0):
                raise NonFiniteLogPosterior(VARIANCE_NAMES[p], f"drew {v}")
            s.variances[VARIANCE_NAMES[p]] = v

    def ar_loglik(self, process, rho=None):
        """Log density of all series of ``process`` under PACFs ``rho`` (default: current)."""
        fac = self.factors[process] if rho is None else ar.ArFactor(rho, self.max_len)
        var = self.state.variances[VARIANCE_NAMES[process]]
        return sum(fac.log_density(x, var) for x in self._series(process))

    def update_pacf(self, processes=PROCESSES):
        s = self.state
        cfg = self.config
        for p in processes:
            series = self._series(p)
            var = s.variances[VARIANCE_NAMES[p]]
            cur_ll = sum(self.factors[p].log_density(x, var) for x in series)
            steps = self.steps["pacf"][p]
            accepted = np.zeros(cfg.lag, dtype=bool)
            for j in range(cfg.lag):
                rho = s.pacf[p].copy()
                rho[j] = float(reflect(rho[j] + math.exp(steps[j]) * self.rng.standard_normal()))
                log_u = math.log(self.rng.random())
                if abs(rho[j]) >= 1.0:
                    continue
                fac = ar.ArFactor(rho, self.max_len)
                new_ll = sum(fac.log_density(x, var) for x in series)
                if log_u < new_ll - cur_ll:
                    s.pacf[p] = rho
                    self.factors[p] = fac
                    cur_ll = new_ll
                    accepted[j] = True
            if self._adapting():
                self.steps["pacf"][p] = np.minimum(
                    robbins_monro(steps, accepted, self.iteration, cfg.adapt_target), math.log(2.0)
                )
            self._record(f"pacf_{p}", accepted.sum(), cfg.lag)

    def sweep(self):
        self.update_eta()
        self.update_reflection()
        self.update_coefficients()
        self.update_variances()
        self.update_pacf()
        self.update_kappa()
        self.update_cayley()
        self.iteration += 1

    # -- checkpointing -----------------------------------------------------

    def checkpoint(self):
        return Checkpoint(
            iteration=self.iteration,
            state=self.state.to_dict(include_eta=True),
            steps={
                "eta": self.steps["eta"].tolist(),
                "pacf": {p: v.tolist() for p, v in self.steps["pacf"].items()},
                "log_kappa": self.steps["log_kappa"],
                "cayley": self.steps["cayley"],
            },
            rng_state=self.rng.bit_generator.state,
            acceptance=self.ledger.to_dict(),
        )

    @classmethod
    def from_checkpoint(cls, data, config, ckpt):
        sampler = cls(data, config, state=ModelState.from_dict(ckpt.state))
        sampler.iteration = ckpt.iteration
        sampler.steps = {
            "eta": np.array(ckpt.steps["eta"], dtype=float),
            "pacf": {p: np.array(v, dtype=float) for p, v in ckpt.steps["pacf"].items()},
            "log_kappa": float(ckpt.steps["log_kappa"]),
            "cayley": float(ckpt.steps["cayley"]),
        }
        sampler.rng.bit_generator.state = ckpt.rng_state
        sampler.ledger = AcceptanceLedger.from_dict(ckpt.acceptance)
        return sampler


def run_chain(sampler, config, stop_after=None, callback=None, log_post_fn=None, keep_eta=True):
    """Drive ``sampler`` until ``config.n_iter`` (or ``stop_after``) iterations.

    Returns the stacked draws stored during this call (``None`` when nothing
    was stored).
    """
    end = config.n_iter if stop_after is None else min(config.n_iter, stop_after)
    states, its, lps = [], [], []
    while sampler.iteration < end:
        t = sampler.iteration
        sampler.sweep()
        if t >= config.burn and (t - config.burn) % config.thin == 0:
            snap = sampler.state.copy()
            lp = log_post_fn(snap) if log_post_fn is not None else float("nan")
            if not np.isfinite(lp):
                raise NonFiniteLogPosterior("sweep", f"log posterior {lp} at iteration {t}")
            states.append(snap)
            its.append(t)
            lps.append(lp)
            if callback is not None:
                callback(t, snap, lp)
        if t % 500 == 0:
            log.debug("iteration %d", t)
    if not states:
        return None
    return PosteriorDraws.from_states(
        states, its, lps, keep_eta=keep_eta, acceptance=sampler.ledger.rates(), meta={"seed": config.seed}
    )


def fit(data, config=None, seed=None, *, init=None, stop_after=None, resume=None, callback=None):
    """Run one MH-within-Gibbs chain.

    Parameters
    ----------
    data : Dataset
    config : ModelConfig
    seed : int, optional
        Overrides ``config.seed``.
    init : ModelState, optional
        Starting state (default: :func:`initial_state`).
    stop_after : int, optional
        Stop once this many iterations have run; pair with
        ``sampler.checkpoint()`` via the returned sampler to resume later.
    resume : Checkpoint, optional
        Continue a previously stopped chain exactly.

    Returns
    -------
    draws : PosteriorDraws or None
    sampler : SpatialSampler
    """
    config = config or ModelConfig()
    if seed is not None:
        config = ModelConfig.from_dict({**config.to_dict(), "seed": int(seed)})
    if resume is not None:
        sampler = SpatialSampler.from_checkpoint(data, config, resume)
    else:
        sampler = SpatialSampler(data, config, state=init)

    def lp(state):
        return log_posterior(state, data, config)

    draws = run_chain(sampler, config, stop_after, callback, lp, keep_eta=config.store_eta)
    if draws is not None:
        draws.meta.update(
            {
                "model": "spatial_vmf",
                "config": config.to_dict(),
                "design_names": list(data.design_names),
                "n_subjects": data.n_subjects,
                "n_voxels": data.n_voxels,
            }
        )
    return draws, sampler
