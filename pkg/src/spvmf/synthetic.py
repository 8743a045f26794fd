"""Synthetic streamline data drawn from the spatial vMF regression itself."""

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import ar, vmf
from .geometry import cayley_to_rotation
from .link import inverse_link
from .model import CovariateTable, Dataset, DirectionField, StreamlineAtlas


@dataclass
class SyntheticConfig:
    """Generator settings.

    ``n_covariates`` counts covariate columns besides the intercept; the last
    one is Bernoulli(0.5), the others standard normal. ``pacf=None`` draws
    every partial autocorrelation from U(-1, 1). ``effect_fiber`` plants a
    binary-covariate effect of ``effect_size`` on one streamline and zeroes
    that column's coefficients elsewhere.
    """

    n_fibers: int = 3
    voxels_per_fiber: int = 20
    n_train: int = 10
    n_test: int = 10
    n_covariates: int = 2
    lag: int = 3
    kappa: float = 20.0
    tau2_eps: float = 1.0
    tau2_xi: float = 1.0
    sigma2_alpha: float = 1.0
    sigma2_beta: float = 1.0
    pacf: tuple = None
    cayley: tuple = (0.0, 0.0, 0.0)
    missing_fraction: float = 0.0
    effect_fiber: int = None
    effect_size: float = 2.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_fibers", "n_train", "n_covariates", "lag"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_test < 0:
            raise ValueError("n_test must be >= 0")
        if self.voxels_per_fiber < 2:
            raise ValueError("voxels_per_fiber must be >= 2")
        if not (np.isfinite(self.kappa) and self.kappa >= 0):
            raise ValueError(f"kappa must be finite and >= 0, got {self.kappa}")
        for name in ("tau2_eps", "tau2_xi", "sigma2_alpha", "sigma2_beta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.missing_fraction < 1.0:
            raise ValueError("missing_fraction must be in [0, 1)")
        if self.effect_fiber is not None and not 0 <= self.effect_fiber < self.n_fibers:
            raise ValueError("effect_fiber out of range")

    @property
    def n_voxels(self):
        return self.n_fibers * self.voxels_per_fiber

    def to_dict(self):
        d = asdict(self)
        d["cayley"] = [float(a) for a in self.cayley]
        if self.pacf is not None:
            d["pacf"] = np.asarray(self.pacf, dtype=float).tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synthetic config fields: {sorted(unknown)}")
        d = dict(d)
        if d.get("cayley") is not None:
            d["cayley"] = tuple(d["cayley"])
        return cls(**d)


@dataclass
class Simulation:
    train: Dataset
    test: Dataset
    truth: dict

    def true_modes(self, X):
        """Mean-level direct mode directions (N, V, 3) for design rows ``X``."""
        return mean_modes(self.truth["alpha"], self.truth["beta"], self.truth["cayley"], X)


def mean_modes(alpha, beta, cayley, X):
    X = np.atleast_2d(X)
    eta = np.stack([X @ np.asarray(alpha).T, X @ np.asarray(beta).T], axis=-1)
    return inverse_link(eta) @ cayley_to_rotation(np.asarray(cayley, dtype=float)).T


def _pacfs(cfg, rng):
    """Four PACF vectors (eps, xi, alpha, beta)."""
    if cfg.pacf is None:
        return {p: rng.uniform(-1.0, 1.0, cfg.lag) for p in ("eps", "xi", "alpha", "beta")}
    rows = np.atleast_2d(np.asarray(cfg.pacf, dtype=float))
    if rows.shape[0] == 1:
        rows = np.repeat(rows, 4, axis=0)
    if rows.shape != (4, cfg.lag):
        raise ValueError(f"pacf must have shape ({cfg.lag},) or (4, {cfg.lag})")
    return dict(zip(("eps", "xi", "alpha", "beta"), rows))


def simulate(cfg, rng=None):
    """Draw a training and a held-out test set from the generative model."""
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    K, L = cfg.n_fibers, cfg.voxels_per_fiber
    atlas = StreamlineAtlas.chains([L] * K)
    V = atlas.n_voxels
    N = cfg.n_train + cfg.n_test
    C = cfg.n_covariates
    D = C + 1

    pacf = _pacfs(cfg, rng)
    factors = {p: ar.ArFactor(r, L) for p, r in pacf.items()}

    alpha = np.empty((V, D))
    beta = np.empty((V, D))
    for f in atlas.fibers:
        alpha[f] = factors["alpha"].sample(L, cfg.sigma2_alpha, D, rng).T
        beta[f] = factors["beta"].sample(L, cfg.sigma2_beta, D, rng).T
    if cfg.effect_fiber is not None:
        alpha[:, -1] = 0.0
        beta[:, -1] = 0.0
        f = atlas.fibers[cfg.effect_fiber]
        alpha[f, -1] = cfg.effect_size
        beta[f, -1] = cfg.effect_size

    cont = rng.standard_normal((N, C - 1))
    binary = (rng.random((N, 1)) < 0.5).astype(float)
    values = np.hstack([cont, binary])
    names = tuple(f"x{j + 1}" for j in range(C - 1)) + ("b1",)
    X = np.column_stack([np.ones(N), values])

    eps = np.empty((N, V))
    xi = np.empty((N, V))
    for f in atlas.fibers:
        eps[:, f] = factors["eps"].sample(L, cfg.tau2_eps, N, rng)
        xi[:, f] = factors["xi"].sample(L, cfg.tau2_xi, N, rng)
    eta = np.stack([X @ alpha.T + eps, X @ beta.T + xi], axis=-1)

    cayley = np.asarray(cfg.cayley, dtype=float)
    Q = cayley_to_rotation(cayley)
    mu = inverse_link(eta)
    E = vmf.sample(mu.reshape(-1, 3), cfg.kappa, rng=rng).reshape(N, V, 3) @ Q.T
    mask = rng.random((N, V)) >= cfg.missing_fraction

    subjects = tuple(f"s{i + 1:03d}" for i in range(N))
    table = CovariateTable(subjects, names, values)
    train_idx = np.arange(cfg.n_train)
    test_idx = np.arange(cfg.n_train, N)
    full = Dataset(atlas, table, DirectionField(E, mask))
    truth = {
        "alpha": alpha,
        "beta": beta,
        "eta": eta,
        "cayley": cayley,
        "kappa": float(cfg.kappa),
        "variances": {
            "tau2_eps": cfg.tau2_eps,
            "tau2_xi": cfg.tau2_xi,
            "sigma2_alpha": cfg.sigma2_alpha,
            "sigma2_beta": cfg.sigma2_beta,
        },
        "pacf": pacf,
        "train_subjects": train_idx,
        "test_subjects": test_idx,
    }
    return Simulation(full.subset(train_idx), full.subset(test_idx), truth)
