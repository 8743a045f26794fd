"""Stationary Gaussian AR(P) processes parametrised by partial autocorrelations.

``sigma2`` is always the innovation variance. Likelihoods use the
innovations form of the process, whose precision matrix is banded; dense
Toeplitz covariances are kept for checking.
"""

import numpy as np
from scipy.linalg import toeplitz
from scipy.signal import lfilter

from .errors import InvalidPacf, NonStationaryAr

LOG_2PI = np.log(2.0 * np.pi)


def _check_pacf(rho):
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    if rho.ndim != 1:
        raise InvalidPacf("partial autocorrelations must be a 1-d vector")
    if not np.all(np.isfinite(rho)) or np.any(np.abs(rho) >= 1.0):
        raise InvalidPacf(f"every partial autocorrelation must lie in (-1, 1), got {rho}")
    return rho


def pacf_to_ar(rho):
    """Durbin-Levinson map from partial autocorrelations to AR coefficients."""
    rho = _check_pacf(rho)
    phi = np.zeros(0)
    for r in rho:
        phi = np.concatenate([phi - r * phi[::-1], [r]])
    return phi


def ar_to_pacf(phi):
    """Inverse Durbin-Levinson recursion.

    Raises
    ------
    NonStationaryAr
        If an implied partial autocorrelation has modulus >= 1.
    """
    phi = np.atleast_1d(np.asarray(phi, dtype=float)).copy()
    P = phi.size
    rho = np.empty(P)
    for k in range(P, 0, -1):
        r = phi[k - 1]
        if not np.isfinite(r) or abs(r) >= 1.0:
            raise NonStationaryAr(f"implied partial autocorrelation at lag {k} is {r}")
        rho[k - 1] = r
        head = phi[: k - 1]
        phi = (head + r * head[::-1]) / (1.0 - r * r)
    return rho


def autocorrelation_from_pacf(rho, n):
    """Autocorrelations r(0..n-1) and the normalised innovation variance.

    Returns
    -------
    r : ndarray (n,)
    v : float
        Innovation variance divided by the marginal variance,
        ``prod(1 - rho_k^2)``.
    """
    rho = _check_pacf(rho)
    P = rho.size
    r = np.empty(n)
    r[0] = 1.0
    phi = np.zeros(0)
    v = 1.0
    for k in range(1, n):
        rk = rho[k - 1] if k <= P else 0.0
        lags = np.arange(1, phi.size + 1)
        r[k] = phi @ r[k - lags] + rk * v
        if k <= P:
            phi = np.concatenate([phi - rk * phi[::-1], [rk]])
            v *= 1.0 - rk * rk
    for k in range(n, P + 1):
        v *= 1.0 - rho[k - 1] ** 2
    return r, v


def autocovariance(phi, sigma2, n):
    """Autocovariances gamma(0..n-1) from the Yule-Walker equations."""
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    ar_to_pacf(phi)
    P = phi.size
    M = np.eye(P + 1)
    for h in range(P + 1):
        for j in range(1, P + 1):
            M[h, abs(h - j)] -= phi[j - 1]
    rhs = np.zeros(P + 1)
    rhs[0] = sigma2
    g = np.linalg.solve(M, rhs)
    gamma = np.empty(max(n, P + 1))
    gamma[: P + 1] = g
    lags = np.arange(1, P + 1)
    for h in range(P + 1, gamma.size):
        gamma[h] = phi @ gamma[h - lags]
    return gamma[:n]


def stationary_covariance(phi, sigma2, n):
    """n x n Toeplitz covariance of a stationary AR process with innovation variance ``sigma2``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    return toeplitz(autocovariance(phi, sigma2, n))


class ArFactor:
    """Innovations factorisation of a unit-innovation AR covariance up to ``max_n``.

    Writes ``B x = e`` where row t of ``B`` subtracts the best linear predictor
    of ``x_t`` from its ``min(t, P)`` predecessors (Durbin-Levinson
    coefficients) and ``e_t`` has variance ``d_t``. Then
    ``Sigma^{-1} = B' diag(1/d) B`` is exactly banded, and the leading n x n
    blocks of ``B`` and ``d`` factor the covariance of any n consecutive values.
    Only the band is stored: ``coef[t, j - 1]`` is the weight of ``x_{t-j}``.
    """

    def __init__(self, rho, max_n):
        self.rho = _check_pacf(rho)
        self.max_n = int(max_n)
        P = self.rho.size
        n = self.max_n
        phis = [np.zeros(0)]
        v = [1.0]
        for r in self.rho:
            prev = phis[-1]
            phis.append(np.concatenate([prev - r * prev[::-1], [r]]))
            v.append(v[-1] * (1.0 - r * r))
        self.marginal_variance = 1.0 / v[-1]
        self.phi = phis[-1]
        coef = np.zeros((n, P))
        coef[P:] = self.phi
        for t in range(min(P, n)):
            coef[t, :t] = phis[t]
        self.coef = coef
        self.d = np.array([v[min(t, P)] for t in range(n)]) / v[-1]
        self._log_d = np.log(self.d)
        self._precision = {}

    @property
    def order(self):
        return self.rho.size

    @property
    def cov(self):
        r, v = autocorrelation_from_pacf(self.rho, self.max_n)
        return toeplitz(r) / v

    def logdet(self, n):
        return self._log_d[:n].sum()

    def innovations(self, x):
        """B x along the last axis."""
        x = np.asarray(x, dtype=float)
        n = x.shape[-1]
        e = x.copy()
        for j in range(1, min(self.order, n - 1) + 1):
            e[..., j:] -= self.coef[j:n, j - 1] * x[..., : n - j]
        return e

    def quad(self, x):
        """x' Sigma^{-1} x along the last axis, unit innovation variance."""
        x = np.asarray(x, dtype=float)
        e = self.innovations(x)
        return np.sum(e * e / self.d[: x.shape[-1]], axis=-1)

    def band_matrix(self, n):
        """Dense leading n x n block of ``B``."""
        B = np.eye(n)
        for j in range(1, min(self.order, n - 1) + 1):
            rows = np.arange(j, n)
            B[rows, rows - j] = -self.coef[j:n, j - 1]
        return B

    def precision(self, n):
        """Banded precision matrix (bandwidth = order), unit innovation variance."""
        if n not in self._precision:
            Bn = self.band_matrix(n)
            self._precision[n] = Bn.T @ (Bn / self.d[:n, None])
        return self._precision[n]

    def log_density(self, x, sigma2):
        """Sum of mean-zero Gaussian log-densities of the rows of ``x``."""
        x = np.asarray(x, dtype=float)
        n = x.shape[-1]
        m = x.size // n if n else 0
        q = self.quad(x).sum()
        return -0.5 * (m * (n * (LOG_2PI + np.log(sigma2)) + self.logdet(n)) + q / sigma2)

    def sample(self, n, sigma2, size, rng):
        shape = (n,) if size is None else (*np.atleast_1d(size), n)
        e = (rng.standard_normal(shape) * np.sqrt(sigma2 * self.d[:n])).reshape(-1, n)
        P = self.order
        h = min(P, n)
        x = np.empty_like(e)
        for t in range(h):
            x[:, t] = e[:, t] + x[:, :t][:, ::-1] @ self.coef[t, :t]
        if n > P:
            # direct-form state after x_{P-1}: z_k = sum_{j>k} phi_j x_{P+k-j}
            zi = np.stack([x[:, P + k - np.arange(k + 1, P + 1)] @ self.phi[k:] for k in range(P)], axis=-1)
            x[:, P:] = lfilter([1.0], np.concatenate([[1.0], -self.phi]), e[:, P:], axis=-1, zi=zi)[0]
        return x.reshape(shape)


def log_density(x, phi, sigma2):
    """Mean-zero Gaussian log-density of series ``x`` (..., n), summed over leading axes."""
    x = np.asarray(x, dtype=float)
    rho = ar_to_pacf(phi) if np.size(phi) else np.zeros(0)
    return _factor(rho, x.shape[-1]).log_density(x, sigma2)


def _factor(rho, n):
    if rho.size == 0:
        rho = np.zeros(1)
    return ArFactor(rho, n)


def sample(phi, sigma2, n, rng=None, size=None):
    """Exact draw(s) of length ``n`` from the stationary process."""
    rng = np.random.default_rng(rng)
    rho = ar_to_pacf(phi) if np.size(phi) else np.zeros(1)
    return _factor(rho, n).sample(n, sigma2, size, rng)


def sample_pacf(rho, sigma2, n, rng=None, size=None):
    rng = np.random.default_rng(rng)
    return ArFactor(rho, n).sample(n, sigma2, size, rng)


def companion_spectral_radius(phi):
    """Largest eigenvalue modulus of the AR companion matrix (< 1 iff stationary)."""
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    P = phi.size
    C = np.zeros((P, P))
    C[0] = phi
    C[1:, :-1] = np.eye(P - 1)
    return np.max(np.abs(np.linalg.eigvals(C)))
