"""Bijective link between the unit sphere and the plane.

A unit vector is mapped to (azimuth, elevation), each angle is rescaled to
the unit interval and pushed through a logit. The inverse uses the sigmoid,
so it is defined on all of R^2.
"""

import numpy as np
from scipy.special import expit, logit

CLAMP_EPS = 1e-10


def cart_to_angles(v):
    """Azimuth in (-pi, pi] and elevation in [-pi/2, pi/2] of unit vectors.

    The azimuth at the poles is 0 (``arctan2(0, 0)``).
    """
    v = np.asarray(v, dtype=float)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    z = np.clip(z, -1.0, 1.0)
    theta = np.arctan2(y, x)
    phi = np.arctan2(z, np.sqrt(1.0 - z * z))
    return theta, phi


def angles_to_cart(theta, phi):
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    cphi = np.cos(phi)
    return np.stack([cphi * np.cos(theta), cphi * np.sin(theta), np.sin(phi)], axis=-1)


def _scaled_logit(s, eps):
    return logit(np.clip(s, eps, 1.0 - eps))


def angles_to_linked(theta, phi, eps=CLAMP_EPS):
    theta_t = _scaled_logit((np.asarray(theta) + np.pi) / (2.0 * np.pi), eps)
    phi_t = _scaled_logit((np.asarray(phi) + np.pi / 2.0) / np.pi, eps)
    return theta_t, phi_t


def link(v, eps=CLAMP_EPS):
    """Map unit vectors (..., 3) to linked coordinates (..., 2).

    Scaled angles are clamped to ``[eps, 1 - eps]`` before the logit so the
    output is finite everywhere, including the poles and the azimuth seam.
    """
    theta, phi = cart_to_angles(v)
    theta_t, phi_t = angles_to_linked(theta, phi, eps)
    return np.stack([theta_t, phi_t], axis=-1)


def linked_to_angles(c):
    c = np.asarray(c, dtype=float)
    theta = 2.0 * np.pi * expit(c[..., 0]) - np.pi
    phi = np.pi * expit(c[..., 1]) - np.pi / 2.0
    return theta, phi


def inverse_link(c):
    """Map linked coordinates (..., 2) back to unit vectors (..., 3)."""
    return angles_to_cart(*linked_to_angles(c))


def inverse_link_jacobian(c):
    """Unit vectors and their derivatives with respect to the linked coordinates.

    Returns
    -------
    mu : ndarray (..., 3)
    d_theta, d_phi : ndarray (..., 3)
        Partial derivatives of ``mu`` with respect to the first and second
        linked coordinate.
    """
    c = np.asarray(c, dtype=float)
    s1 = expit(c[..., 0])
    s2 = expit(c[..., 1])
    theta = 2.0 * np.pi * s1 - np.pi
    phi = np.pi * s2 - np.pi / 2.0
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(phi), np.sin(phi)
    mu = np.stack([cp * ct, cp * st, sp], axis=-1)
    dtheta = (2.0 * np.pi * s1 * (1.0 - s1))[..., None]
    dphi = (np.pi * s2 * (1.0 - s2))[..., None]
    d_theta = dtheta * np.stack([-cp * st, cp * ct, np.zeros_like(cp)], axis=-1)
    d_phi = dphi * np.stack([-sp * ct, -sp * st, cp], axis=-1)
    return mu, d_theta, d_phi


def general_p_link(theta, phis, eps=CLAMP_EPS):
    """Link for a point on S^{p-1} given as one azimuth and p-2 elevations.

    Parameters
    ----------
    theta : float
        Azimuth in (-pi, pi].
    phis : sequence of float
        The p-2 elevation angles, each in (-pi/2, pi/2].

    Returns
    -------
    ndarray (p-1,)
        ``[logit((theta + pi) / 2pi), logit((phi_1 + pi/2) / pi), ...]``.
    """
    phis = np.atleast_1d(np.asarray(phis, dtype=float))
    out = np.empty(phis.size + 1)
    out[0] = _scaled_logit((float(theta) + np.pi) / (2.0 * np.pi), eps)
    out[1:] = _scaled_logit((phis + np.pi / 2.0) / np.pi, eps)
    return out
