"""Unit vectors, separation angles, Cayley rotations and the tangent-normal split.

Unit vectors are plain ``ndarray`` objects whose last axis has length 3, so
every function here broadcasts over leading axes.
"""

from typing import NamedTuple

import numpy as np

from .errors import DegenerateDecomposition, RotationAtCayleySingularity

DEGENERATE_TOL = 1e-9


def normalize(v, axis=-1):
    """Scale vectors to unit length along ``axis``."""
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=axis, keepdims=True)


def unit_vector(x, y, z):
    return normalize(np.array([x, y, z], dtype=float))


def separation_angle(u, v):
    """Angle in radians, in [0, pi], between unit vectors ``u`` and ``v``.

    Uses ``2 atan2(|u - v|, |u + v|)``, which stays accurate near 0 and pi
    where ``arccos`` of the dot product loses half its digits.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return 2.0 * np.arctan2(np.linalg.norm(u - v, axis=-1), np.linalg.norm(u + v, axis=-1))


def skew(a):
    """Skew-symmetric matrix [[0, a1, a2], [-a1, 0, a3], [-a2, -a3, 0]]."""
    a1, a2, a3 = np.asarray(a, dtype=float)
    return np.array([[0.0, a1, a2], [-a1, 0.0, a3], [-a2, -a3, 0.0]])


def cayley_to_rotation(a):
    """Rotation Q = (I - A)(I + A)^{-1} for the skew matrix built from ``a``.

    ``I + A`` has eigenvalues ``1 +/- i|a|`` and 1, so it is always invertible.
    """
    A = skew(a)
    eye = np.eye(3)
    # (I - A) and (I + A)^{-1} commute, so solve instead of inverting.
    return np.linalg.solve(eye + A, eye - A)


def rotation_to_cayley(Q, tol=1e-10):
    """Inverse Cayley map; raises if ``Q`` is a half-turn (eigenvalue -1)."""
    Q = np.asarray(Q, dtype=float)
    eye = np.eye(3)
    M = eye + Q
    if abs(np.linalg.det(M)) < tol:
        raise RotationAtCayleySingularity(
            "I + Q is singular: rotation angle is pi, outside the Cayley chart"
        )
    A = np.linalg.solve(M, eye - Q)
    A = 0.5 * (A - A.T)
    return np.array([A[0, 1], A[0, 2], A[1, 2]])


def cayley_derivatives(a):
    """Partial derivatives dQ/da_k, stacked along the first axis (3, 3, 3)."""
    A = skew(a)
    eye = np.eye(3)
    inv = np.linalg.inv(eye + A)
    Q = (eye - A) @ inv
    out = np.empty((3, 3, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = 1.0
        dA = skew(e)
        out[k] = -(eye + Q) @ dA @ inv
    return out


def random_rotation(rng):
    """Haar-uniform rotation from a QR decomposition."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


class TangentNormalResult(NamedTuple):
    """Split of ``target`` into ``t * base + m * R``.

    ``R`` is NaN wherever ``degenerate`` is set (target colinear with base).
    """

    R: np.ndarray
    m: np.ndarray
    t: np.ndarray
    degenerate: np.ndarray


def tangent_normal(base, target, strict=False):
    """Tangent-normal decomposition of ``target`` about ``base``.

    Parameters
    ----------
    base, target : array_like (..., 3)
        Unit vectors. ``base`` plays the role of the reference (typical)
        direction.
    strict : bool
        Raise :class:`DegenerateDecomposition` instead of flagging when
        ``m`` falls below 1e-9.

    Returns
    -------
    TangentNormalResult
        ``t`` is the signed cosine of the separation, ``m`` the length of the
        component normal to ``base`` and ``R`` its direction.
    """
    base = np.asarray(base, dtype=float)
    target = np.asarray(target, dtype=float)
    t = np.sum(base * target, axis=-1)
    normal = target - t[..., None] * base
    m = np.linalg.norm(normal, axis=-1)
    degenerate = m < DEGENERATE_TOL
    if strict and np.any(degenerate):
        raise DegenerateDecomposition("target is colinear with base; R is undefined")
    with np.errstate(invalid="ignore", divide="ignore"):
        R = normal / m[..., None]
    R = np.where(degenerate[..., None], np.nan, R)
    return TangentNormalResult(R=R, m=m, t=t, degenerate=degenerate)
