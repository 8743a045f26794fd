"""von Mises-Fisher distribution on the 2-sphere."""

import numpy as np

LOG_4PI = np.log(4.0 * np.pi)
_SMALL_KAPPA = 1e-8


def log_normalizer_3(kappa):
    """log C_3(kappa) with C_3(kappa) = kappa / (2 pi (e^kappa - e^-kappa)).

    Evaluated as ``log k - k - log 2pi - log(1 - e^{-2k})`` so large
    concentrations do not overflow; tends to ``-log 4pi`` as ``k -> 0``.
    """
    kappa = np.asarray(kappa, dtype=float)
    small = kappa < _SMALL_KAPPA
    k = np.where(small, 1.0, kappa)
    out = np.log(k) - k - np.log(2.0 * np.pi) - np.log(-np.expm1(-2.0 * k))
    out = np.where(small, -LOG_4PI, out)
    return out[()] if out.ndim == 0 else out


def _log_density_at_mode(kappa):
    """log density at x = mu, i.e. log C_3(k) + k."""
    kappa = np.asarray(kappa, dtype=float)
    small = kappa < _SMALL_KAPPA
    k = np.where(small, 1.0, kappa)
    out = np.log(k) - np.log(2.0 * np.pi) - np.log(-np.expm1(-2.0 * k))
    return np.where(small, -LOG_4PI, out)


def log_density(x, mu, kappa):
    """Log density of vMF(mu, kappa) at unit vectors ``x`` (broadcasts)."""
    cos = np.sum(np.asarray(x, dtype=float) * np.asarray(mu, dtype=float), axis=-1)
    out = _log_density_at_mode(kappa) + np.asarray(kappa, dtype=float) * (cos - 1.0)
    return out[()] if np.ndim(out) == 0 else out


def orthonormal_complement(mu):
    """Two unit vectors completing ``mu`` (..., 3) to a right-handed frame."""
    mu = np.asarray(mu, dtype=float)
    # Cross with whichever axis is least aligned with mu.
    helper = np.zeros_like(mu)
    idx = np.argmin(np.abs(mu), axis=-1)
    np.put_along_axis(helper, idx[..., None], 1.0, axis=-1)
    b1 = np.cross(mu, helper)
    b1 /= np.linalg.norm(b1, axis=-1, keepdims=True)
    b2 = np.cross(mu, b1)
    return b1, b2


def sample_cosine(kappa, size, rng):
    """Draw w = mu'x by inverting its CDF, w = 1 + log(u + (1-u) e^{-2k}) / k."""
    u = rng.random(size)
    if kappa < _SMALL_KAPPA:
        return 2.0 * u - 1.0
    w = 1.0 + np.log(u + (1.0 - u) * np.exp(-2.0 * kappa)) / kappa
    return np.clip(w, -1.0, 1.0)


def sample(mu, kappa, n=None, rng=None):
    """Draw from vMF(mu, kappa) on S^2 without rejection.

    Parameters
    ----------
    mu : array_like (3,) or (..., 3)
        Mode direction(s).
    kappa : float
        Concentration, >= 0.
    n : int, optional
        Number of draws for a single ``mu`` of shape (3,). When omitted one
        draw is made per row of ``mu``.
    rng : numpy.random.Generator or int, optional

    Returns
    -------
    ndarray (n, 3) or mu.shape
    """
    rng = np.random.default_rng(rng)
    mu = np.asarray(mu, dtype=float)
    if kappa < 0 or not np.isfinite(kappa):
        raise ValueError(f"kappa must be finite and >= 0, got {kappa}")
    if n is not None:
        if mu.shape != (3,):
            raise ValueError("n is only allowed with a single mode direction")
        if n < 1:
            raise ValueError("n must be >= 1")
        mu = np.broadcast_to(mu, (n, 3))
    shape = mu.shape[:-1]
    w = sample_cosine(kappa, shape, rng)
    psi = rng.uniform(0.0, 2.0 * np.pi, size=shape)
    b1, b2 = orthonormal_complement(mu)
    r = np.sqrt(np.clip(1.0 - w * w, 0.0, None))
    x = w[..., None] * mu + r[..., None] * (np.cos(psi)[..., None] * b1 + np.sin(psi)[..., None] * b2)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def mean_cosine(kappa):
    """E[mu'x] = coth(kappa) - 1/kappa."""
    return 1.0 / np.tanh(kappa) - 1.0 / kappa
