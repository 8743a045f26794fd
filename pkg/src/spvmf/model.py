"""Data containers and the joint log posterior of the spatial vMF regression.

Model, for subject i and voxel v on streamline k::

    Q' E_iv ~ vMF(mu_iv, kappa),   mu_iv = inverse_link(eta_iv)
    eta_iv = (X_i alpha_v + eps_iv, X_i beta_v + xi_iv)
    eps_ik, xi_ik ~ AR_P along streamline k (innovation variances tau2_eps, tau2_xi)
    alpha_k(c), beta_k(c) ~ AR_P along streamline k (sigma2_alpha, sigma2_beta)

with Q the Cayley rotation, N(0, 100) priors on the Cayley parameters,
inverse-gamma(0.1, 0.1) priors on the four variances and flat priors on
kappa and the partial autocorrelations.
"""

from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy.special import expit, gammaln

from . import ar
from .errors import DimensionMismatch, UnknownGroupLabel
from .geometry import cayley_derivatives, cayley_to_rotation
from .link import CLAMP_EPS, inverse_link, inverse_link_jacobian, link
from .vmf import log_normalizer_3

PROCESSES = ("eps", "xi", "alpha", "beta")
VARIANCE_NAMES = {"eps": "tau2_eps", "xi": "tau2_xi", "alpha": "sigma2_alpha", "beta": "sigma2_beta"}
IG_SHAPE = 0.1
IG_RATE = 0.1
CAYLEY_PRIOR_VAR = 100.0
KAPPA_MAX = 1e6


@dataclass(frozen=True)
class StreamlineAtlas:
    """Ordered voxel-id chains, one per streamline.

    Voxel ids are expected to be ``0..V-1`` with every voxel on exactly one
    streamline; :func:`validate` reports violations instead of raising here.
    """

    fibers: tuple

    def __post_init__(self):
        object.__setattr__(
            self, "fibers", tuple(np.asarray(f, dtype=int).ravel() for f in self.fibers)
        )

    @classmethod
    def chains(cls, lengths):
        """Consecutive id chains of the given lengths."""
        start = np.cumsum([0, *lengths])
        return cls(tuple(np.arange(a, b) for a, b in zip(start[:-1], start[1:])))

    @property
    def n_fibers(self):
        return len(self.fibers)

    @property
    def n_voxels(self):
        return len(np.unique(np.concatenate(self.fibers))) if self.fibers else 0

    @property
    def lengths(self):
        return np.array([f.size for f in self.fibers])

    @property
    def max_length(self):
        return int(self.lengths.max())

    def fiber_of(self):
        """Fiber index of each voxel id."""
        out = np.full(self.n_voxels, -1)
        for k, f in enumerate(self.fibers):
            out[f] = k
        return out

    def to_dict(self):
        return {"fibers": [f.tolist() for f in self.fibers]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["fibers"]))


@dataclass(frozen=True)
class CovariateTable:
    """Subject covariates without the intercept column.

    ``groups`` holds one label per subject (or is ``None``); ``levels`` fixes
    the admissible labels and their order in group-specific designs.
    """

    subjects: tuple
    names: tuple
    values: np.ndarray
    groups: tuple = None
    levels: tuple = None

    def __post_init__(self):
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if values.shape[0] != len(self.subjects):
            values = values.reshape(len(self.subjects), -1)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "subjects", tuple(str(s) for s in self.subjects))
        object.__setattr__(self, "names", tuple(self.names))
        if self.groups is not None:
            groups = tuple(str(g) for g in self.groups)
            object.__setattr__(self, "groups", groups)
            if self.levels is None:
                object.__setattr__(self, "levels", tuple(sorted(set(groups))))
            else:
                object.__setattr__(self, "levels", tuple(str(g) for g in self.levels))

    @property
    def n_subjects(self):
        return len(self.subjects)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        groups = None if self.groups is None else tuple(self.groups[i] for i in idx)
        return CovariateTable(
            tuple(self.subjects[i] for i in idx), self.names, self.values[idx], groups, self.levels
        )


def design_names(table, group_specific=False):
    base = ("intercept", *table.names)
    if group_specific and table.groups is not None:
        return tuple(f"{g}:{n}" for g in table.levels for n in base)
    return base


def design_rows(values, groups=None, levels=None, group_specific=False):
    """Intercept-augmented design rows, optionally expanded into group blocks."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    X = np.column_stack([np.ones(values.shape[0]), values])
    if not group_specific or groups is None:
        return X
    levels = tuple(levels)
    out = np.zeros((X.shape[0], X.shape[1] * len(levels)))
    width = X.shape[1]
    for i, g in enumerate(groups):
        try:
            j = levels.index(str(g))
        except ValueError:
            raise UnknownGroupLabel(f"group label {g!r} is not one of {levels}") from None
        out[i, j * width:(j + 1) * width] = X[i]
    return out


def build_design(table, group_specific=False):
    """Design matrix (N, D); group-specific designs get one coefficient block per group."""
    return design_rows(table.values, table.groups, table.levels, group_specific)


@dataclass(frozen=True)
class DirectionField:
    """Observed unit vectors ``E`` (N, V, 3) and an observation mask (N, V)."""

    E: np.ndarray
    mask: np.ndarray = None

    def __post_init__(self):
        E = np.asarray(self.E, dtype=float)
        object.__setattr__(self, "E", E)
        mask = np.ones(E.shape[:2], dtype=bool) if self.mask is None else np.asarray(self.mask, dtype=bool)
        object.__setattr__(self, "mask", mask)

    @property
    def n_observed(self):
        return int(self.mask.sum())


@dataclass
class Dataset:
    atlas: StreamlineAtlas
    table: CovariateTable
    directions: DirectionField
    group_specific: bool = False

    def __post_init__(self):
        self.X = build_design(self.table, self.group_specific)
        self.design_names = design_names(self.table, self.group_specific)
        N, V = self.directions.E.shape[:2]
        if N != self.table.n_subjects:
            raise DimensionMismatch(f"{N} direction rows but {self.table.n_subjects} subjects")
        if V != self.atlas.n_voxels:
            raise DimensionMismatch(f"{V} direction voxels but the atlas has {self.atlas.n_voxels}")

    @property
    def n_subjects(self):
        return self.X.shape[0]

    @property
    def n_voxels(self):
        return self.atlas.n_voxels

    @property
    def n_coef(self):
        return self.X.shape[1]

    def subset(self, subjects):
        subjects = np.asarray(subjects, dtype=int)
        d = self.directions
        return Dataset(
            self.atlas,
            self.table.subset(subjects),
            DirectionField(d.E[subjects], d.mask[subjects]),
            self.group_specific,
        )


@dataclass
class ModelConfig:
    lag: int = 5
    n_iter: int = 5000
    burn: int = 2000
    thin: int = 1
    seed: int = 0
    threshold: float = 0.65
    quantile: float = 0.9
    clamp_eps: float = CLAMP_EPS
    group_specific: bool = False
    adapt_target: float = 0.3
    eta_step: float = 0.05
    pacf_step: float = 0.1
    log_kappa_step: float = 0.05
    cayley_step: float = 0.002
    coef_step: float = 0.1
    kappa_max: float = KAPPA_MAX
    store_eta: bool = True

    def __post_init__(self):
        if self.lag < 1:
            raise ValueError("lag must be >= 1")
        if not self.n_iter > self.burn >= 0:
            raise ValueError("need n_iter > burn >= 0")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")

    @property
    def n_draws(self):
        return len(range(self.burn, self.n_iter, self.thin))

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ModelState:
    """One full parameter configuration.

    ``eta`` (N, V, 2) holds the latent linked coordinates; the random effects
    are the residuals ``eta - X coef``.
    """

    alpha: np.ndarray
    beta: np.ndarray
    eta: np.ndarray
    cayley: np.ndarray
    kappa: float
    variances: dict
    pacf: dict

    def copy(self):
        return replace(
            self,
            alpha=self.alpha.copy(),
            beta=self.beta.copy(),
            eta=None if self.eta is None else self.eta.copy(),
            cayley=np.array(self.cayley, dtype=float),
            variances=dict(self.variances),
            pacf={k: np.array(v, dtype=float) for k, v in self.pacf.items()},
        )

    @property
    def Q(self):
        return cayley_to_rotation(self.cayley)

    def coef(self, channel):
        return self.alpha if channel == 0 else self.beta

    def fitted(self, X):
        """Mean linked coordinates (N, V, 2)."""
        return np.stack([X @ self.alpha.T, X @ self.beta.T], axis=-1)

    def residuals(self, X):
        return self.eta - self.fitted(X)

    def to_dict(self, include_eta=True):
        d = {
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "cayley": [float(a) for a in self.cayley],
            "kappa": float(self.kappa),
            "variances": {k: float(v) for k, v in self.variances.items()},
            "pacf": {k: np.asarray(v).tolist() for k, v in self.pacf.items()},
        }
        if include_eta and self.eta is not None:
            d["eta"] = self.eta.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            alpha=np.array(d["alpha"], dtype=float),
            beta=np.array(d["beta"], dtype=float),
            eta=np.array(d["eta"], dtype=float) if d.get("eta") is not None else None,
            cayley=np.array(d["cayley"], dtype=float),
            kappa=float(d["kappa"]),
            variances={k: float(v) for k, v in d["variances"].items()},
            pacf={k: np.array(v, dtype=float) for k, v in d["pacf"].items()},
        )


def align_seam(theta_t, X, mask, ridge):
    """Choose the seam side of each linked azimuth before the first fit.

    A linear predictor on the linked scale never crosses the +/-pi seam, but
    noisy directions near it land on either side. Per voxel, fit least squares
    on subjects with |theta| < 3pi/4 (unambiguous), then mirror any subject
    near the seam whose sign disagrees with the prediction. Voxels whose
    unambiguous subjects do not identify the fit fall back to their circular
    mean side.
    """
    out = theta_t.copy()
    theta = 2.0 * np.pi * expit(theta_t) - np.pi
    near_seam = np.abs(theta) > 0.75 * np.pi
    D = X.shape[1]
    for v in range(theta_t.shape[1]):
        obs = mask[:, v]
        safe = obs & ~near_seam[:, v]
        Xs = X[safe]
        if safe.sum() > D and np.linalg.matrix_rank(Xs) == D:
            coef = np.linalg.solve(Xs.T @ Xs + ridge, Xs.T @ theta_t[safe, v])
            side = np.sign(X @ coef)
        else:
            side = np.full(X.shape[0], np.sign(np.angle(np.sum(np.exp(1j * theta[obs, v])))))
        flip = obs & near_seam[:, v] & (side != 0) & (np.sign(theta_t[:, v]) != side)
        out[flip, v] = -theta_t[flip, v]
    return out


def initial_state(data, config):
    """Start at the data: eta = link(E), coefficients by per-voxel least squares."""
    X = data.X
    N, V = data.directions.E.shape[:2]
    E = data.directions.E
    mask = data.directions.mask
    eta = np.where(mask[..., None], link(np.where(mask[..., None], E, [1.0, 0.0, 0.0]), config.clamp_eps), 0.0)
    eta = np.clip(eta, -8.0, 8.0)
    ridge = 1e-3 * np.eye(X.shape[1])
    eta[..., 0] = align_seam(eta[..., 0], X, mask, ridge)
    coef = np.zeros((2, V, X.shape[1]))
    for v in range(V):
        rows = mask[:, v]
        if rows.sum() == 0:
            continue
        Xv = X[rows]
        coef[:, v] = np.linalg.solve(Xv.T @ Xv + ridge, Xv.T @ eta[rows, v]).T
    fitted = np.stack([X @ coef[0].T, X @ coef[1].T], axis=-1)
    eta = np.where(mask[..., None], eta, fitted)
    resid_var = float(np.var(eta - fitted)) if N * V > 1 else 1.0
    P = config.lag
    return ModelState(
        alpha=coef[0],
        beta=coef[1],
        eta=eta,
        cayley=np.zeros(3),
        kappa=10.0,
        variances={
            "tau2_eps": max(resid_var, 0.01),
            "tau2_xi": max(resid_var, 0.01),
            "sigma2_alpha": 1.0,
            "sigma2_beta": 1.0,
        },
        pacf={p: np.zeros(P) for p in PROCESSES},
    )


def inverse_gamma_logpdf(x, shape=IG_SHAPE, rate=IG_RATE):
    return shape * np.log(rate) - gammaln(shape) - (shape + 1.0) * np.log(x) - rate / x


def vmf_loglik(mu, E, mask, Q, kappa):
    """sum over observed (i, v) of log vMF(E_iv | Q mu_iv, kappa)."""
    QtE = E @ Q
    lin = np.sum(np.where(mask[..., None], mu * QtE, 0.0))
    return int(mask.sum()) * float(log_normalizer_3(kappa)) + kappa * lin


def _check_state(state, data):
    N, V, D = data.n_subjects, data.n_voxels, data.n_coef
    if state.alpha.shape != (V, D) or state.beta.shape != (V, D):
        raise DimensionMismatch(f"coefficients must be ({V}, {D})")
    if state.eta.shape != (N, V, 2):
        raise DimensionMismatch(f"eta must be ({N}, {V}, 2)")


def log_posterior_terms(state, data, config=None):
    """Additive pieces of the log posterior (kappa and PACF priors are flat)."""
    _check_state(state, data)
    atlas = data.atlas
    d = data.directions
    Q = state.Q
    mu = inverse_link(state.eta)
    terms = {"likelihood": vmf_loglik(mu, d.E, d.mask, Q, state.kappa)}

    resid = state.residuals(data.X)
    factors = {p: ar.ArFactor(state.pacf[p], atlas.max_length) for p in PROCESSES}
    re = 0.0
    coef_prior = 0.0
    for fiber in atlas.fibers:
        re += factors["eps"].log_density(resid[:, fiber, 0], state.variances["tau2_eps"])
        re += factors["xi"].log_density(resid[:, fiber, 1], state.variances["tau2_xi"])
        coef_prior += factors["alpha"].log_density(state.alpha[fiber].T, state.variances["sigma2_alpha"])
        coef_prior += factors["beta"].log_density(state.beta[fiber].T, state.variances["sigma2_beta"])
    terms["random_effects"] = re
    terms["coefficient_prior"] = coef_prior
    a = np.asarray(state.cayley)
    terms["cayley_prior"] = float(-0.5 * (a @ a) / CAYLEY_PRIOR_VAR - 1.5 * np.log(2 * np.pi * CAYLEY_PRIOR_VAR))
    terms["variance_prior"] = float(sum(inverse_gamma_logpdf(state.variances[k]) for k in sorted(state.variances)))
    return terms


def log_posterior(state, data, config=None):
    """Joint log posterior, up to the constants of the flat priors."""
    return float(sum(log_posterior_terms(state, data, config).values()))


def log_posterior_grad(state, data, config=None):
    """Gradient of :func:`log_posterior` with respect to eta, alpha, beta and the Cayley parameters."""
    _check_state(state, data)
    atlas = data.atlas
    d = data.directions
    X = data.X
    kappa = state.kappa
    Q = state.Q
    mu, d_theta, d_phi = inverse_link_jacobian(state.eta)
    QtE = np.where(d.mask[..., None], d.E @ Q, 0.0)
    g_eta = kappa * np.stack([np.sum(QtE * d_theta, -1), np.sum(QtE * d_phi, -1)], axis=-1)

    # d/da tr(Q S) with S = sum mu E'
    S = np.einsum("nvi,nvj->ij", np.where(d.mask[..., None], mu, 0.0), d.E)
    dQ = cayley_derivatives(state.cayley)
    g_cayley = kappa * np.einsum("kij,ji->k", dQ, S) - np.asarray(state.cayley) / CAYLEY_PRIOR_VAR

    resid = state.residuals(X)
    g_alpha = np.zeros_like(state.alpha)
    g_beta = np.zeros_like(state.beta)
    factors = {p: ar.ArFactor(state.pacf[p], atlas.max_length) for p in PROCESSES}
    for fiber in atlas.fibers:
        n = fiber.size
        for ch, proc, cproc, g_coef, coef in (
            (0, "eps", "alpha", g_alpha, state.alpha),
            (1, "xi", "beta", g_beta, state.beta),
        ):
            lam = factors[proc].precision(n) / state.variances[VARIANCE_NAMES[proc]]
            grad_r = -resid[:, fiber, ch] @ lam  # (N, n)
            g_eta[:, fiber, ch] += grad_r
            # residual = eta - X coef
            g_coef[fiber] += -(grad_r.T @ X)
            lam_c = factors[cproc].precision(n) / state.variances[VARIANCE_NAMES[cproc]]
            g_coef[fiber] += -(lam_c @ coef[fiber])
    return {"eta": g_eta, "alpha": g_alpha, "beta": g_beta, "cayley": g_cayley}


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def add(self, kind, message, where=None):
        self.violations.append({"kind": kind, "message": message, "where": where})

    def __str__(self):
        if self.ok:
            return "no violations"
        return "\n".join(f"[{v['kind']}] {v['message']}" for v in self.violations)


def validate(atlas, table=None, directions=None, group_specific=False, norm_tol=1e-6):
    """Report (never raise) problems with an atlas/covariate/direction triple."""
    report = ValidationReport()
    seen = {}
    for k, fiber in enumerate(atlas.fibers):
        if fiber.size < 2:
            report.add("fiber_length", f"fiber {k} has {fiber.size} voxel(s); need at least 2", k)
        for v in fiber.tolist():
            if v in seen:
                report.add("disjointness", f"voxel {v} appears in fibers {seen[v]} and {k}", v)
            else:
                seen[v] = k
    ids = np.array(sorted(seen))
    V = len(ids)
    if V and not np.array_equal(ids, np.arange(V)):
        missing = sorted(set(range(int(ids.max()) + 1)) - set(ids.tolist()))
        report.add("coverage", f"voxel ids are not 0..{V - 1}; missing {missing[:10]}", missing[:10])

    if table is not None:
        if not np.all(np.isfinite(table.values)):
            report.add("covariates", "non-finite covariate values")
        try:
            X = build_design(table, group_specific)
        except UnknownGroupLabel as exc:
            report.add("group", str(exc))
        else:
            if np.all(np.isfinite(X)):
                rank = np.linalg.matrix_rank(X)
                if rank < X.shape[1]:
                    report.add("design_rank", f"design has rank {rank} < {X.shape[1]} columns")

    if directions is not None:
        E, mask = directions.E, directions.mask
        if table is not None and E.shape[0] != table.n_subjects:
            report.add("dimension", f"{E.shape[0]} direction subjects vs {table.n_subjects} covariate rows")
        if E.shape[1] != V:
            report.add("dimension", f"{E.shape[1]} direction voxels vs {V} atlas voxels")
        norms = np.linalg.norm(E, axis=-1)
        bad = np.argwhere(mask & ~(np.abs(norms - 1.0) <= norm_tol))
        for i, v in bad[:50].tolist():
            report.add("norm", f"direction at subject {i}, voxel {v} has norm {norms[i, v]:.6g}", (i, v))
    return report
