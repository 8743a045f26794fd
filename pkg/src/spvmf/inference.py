"""Posterior summaries: angular expectations, predictive modes and covariate effects."""

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import AllDrawsDegenerate, DegenerateResultant, DimensionMismatch
from .geometry import cayley_to_rotation, tangent_normal
from .link import inverse_link

RESULTANT_TOL = 1e-9


def angular_expectation(samples, axis=0):
    """Normalised mean of unit vectors along ``axis``.

    This is the estimator of the direction minimising the expected separation
    angle. Raises :class:`DegenerateResultant` when the mean is numerically
    zero.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.shape[axis] == 0:
        raise ValueError("need at least one sample")
    mean = samples.mean(axis=axis)
    norm = np.linalg.norm(mean, axis=-1, keepdims=True)
    if np.any(norm < RESULTANT_TOL):
        raise DegenerateResultant("mean resultant is numerically zero")
    return mean / norm


def _design_row(draws, x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    D = draws.alpha.shape[-1]
    if x.shape[-1] != D:
        raise DimensionMismatch(f"covariate row has {x.shape[-1]} entries; the fit has {D} coefficients")
    return x


def mode_draws(draws, X):
    """Direct mode directions Q l^{-1}(X alpha_v, X beta_v) for every draw.

    Returns an array (T, N, V, 3) for design rows ``X`` (N, D).
    """
    X = _design_row(draws, X)
    eta = np.stack(
        [np.einsum("nd,tvd->tnv", X, draws.alpha), np.einsum("nd,tvd->tnv", X, draws.beta)], axis=-1
    )
    mu = inverse_link(eta)
    Q = np.stack([cayley_to_rotation(a) for a in draws.cayley])
    return np.einsum("tij,tnvj->tnvi", Q, mu)


def predictive_mode_draws(draws, x_new, voxel=None):
    """Posterior predictive draws of a new subject's mode direction.

    Random effects sit at their mean (zero), so each draw is the mode of the
    new subject's distribution rather than a noisy realisation. Returns
    (T, 3) for one ``voxel`` or (T, V, 3) otherwise.
    """
    out = mode_draws(draws, x_new)[:, 0]
    return out if voxel is None else out[:, voxel]


def predict_modes(draws, X):
    """Angular expectation of the predictive mode for each row of ``X`` and voxel (N, V, 3)."""
    return angular_expectation(mode_draws(draws, X), axis=0)


@dataclass
class EffectRow:
    voxel: int
    R_mean: np.ndarray
    m_mean: float
    m_sd: float
    prob_large: float
    z_score: float
    degenerate_fraction: float
    fiber: int = -1
    contrast: str = ""
    flagged: bool = False

    @property
    def all_degenerate(self):
        return self.degenerate_fraction >= 1.0


def _summarise(voxel, M_typ, M_spec, threshold, on_degenerate):
    tn = tangent_normal(M_typ, M_spec)
    m = np.where(tn.degenerate, 0.0, tn.m)
    ok = ~tn.degenerate
    deg_frac = float(1.0 - ok.mean())
    if not ok.any():
        if on_degenerate == "raise":
            raise AllDrawsDegenerate(f"voxel {voxel}: typical and specific modes coincide in every draw")
        return EffectRow(voxel, np.full(3, np.nan), 0.0, 0.0, 0.0, float("nan"), 1.0)
    try:
        R_mean = angular_expectation(tn.R[ok])
    except DegenerateResultant:
        R_mean = np.full(3, np.nan)
    m_mean = float(m.mean())
    m_sd = float(m.std(ddof=1)) if m.size > 1 else 0.0
    diff = m_mean - threshold
    if m_sd > 0:
        z = diff / m_sd
    else:
        z = float(np.sign(diff) * np.inf) if diff != 0 else 0.0
    return EffectRow(voxel, R_mean, m_mean, m_sd, float(np.mean(m > threshold)), z, deg_frac)


def covariate_effect(draws, x_typical, x_specific, voxel, threshold=0.65, on_degenerate="raise"):
    """Tangent-normal effect of moving from the typical to the specific covariate row.

    Per draw, the specific-condition mode is decomposed about the typical one.
    Degenerate draws (m < 1e-9) are left out of the mean deviation direction
    but count as m = 0 in the magnitude summaries.

    Parameters
    ----------
    on_degenerate : {"raise", "report"}
        What to do when every draw is degenerate: raise
        :class:`AllDrawsDegenerate` or return a row with NaN direction and
        z-score.
    """
    M_typ = predictive_mode_draws(draws, x_typical, voxel)
    M_spec = predictive_mode_draws(draws, x_specific, voxel)
    return _summarise(voxel, M_typ, M_spec, threshold, on_degenerate)


@dataclass
class Contrast:
    label: str
    x_typical: np.ndarray
    x_specific: np.ndarray


@dataclass
class EffectReport:
    rows: list
    threshold: float
    quantile: float
    z_cutoff: float

    @property
    def n_flagged(self):
        return sum(r.flagged for r in self.rows)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows])

    def flagged_voxels(self, contrast=None):
        return [r.voxel for r in self.rows if r.flagged and (contrast is None or r.contrast == contrast)]

    def to_csv(self, path):
        header = ["contrast", "voxel", "fiber", "m_mean", "m_sd", "prob_large", "z_score", "flagged", "R_x", "R_y", "R_z"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in self.rows:
                w.writerow(
                    [r.contrast, r.voxel, r.fiber, repr(r.m_mean), repr(r.m_sd), repr(r.prob_large),
                     repr(r.z_score), int(r.flagged), *(repr(float(c)) for c in r.R_mean)]
                )

    def to_dict(self):
        def num(x):
            x = float(x)
            return x if np.isfinite(x) else None

        return {
            "threshold": self.threshold,
            "quantile": self.quantile,
            "z_cutoff": num(self.z_cutoff),
            "rows": [
                {
                    "contrast": r.contrast,
                    "voxel": r.voxel,
                    "fiber": r.fiber,
                    "m_mean": r.m_mean,
                    "m_sd": r.m_sd,
                    "prob_large": r.prob_large,
                    "z_score": num(r.z_score),
                    "flagged": bool(r.flagged),
                    "degenerate_fraction": r.degenerate_fraction,
                    "R_mean": [num(c) for c in r.R_mean],
                }
                for r in self.rows
            ],
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def effect_map(draws, contrasts, threshold=0.65, quantile=0.9, fiber_of=None):
    """Effect rows for every voxel and contrast, flagged by a pooled z-score quantile.

    A voxel is flagged when its z-score is at least the empirical ``quantile``
    of the z-scores pooled over voxels and contrasts (for example, one
    contrast per clinical group). Voxels whose every draw is degenerate are
    never flagged.

    Parameters
    ----------
    contrasts : Contrast or list of Contrast
    fiber_of : array_like, optional
        Fiber index per voxel, copied into the rows.
    """
    if not 0.0 <= quantile <= 1.0:
        raise ValueError("quantile must lie in [0, 1]")
    if isinstance(contrasts, Contrast):
        contrasts = [contrasts]
    V = draws.alpha.shape[1]
    rows = []
    for c in contrasts:
        M_typ = predictive_mode_draws(draws, c.x_typical)
        M_spec = predictive_mode_draws(draws, c.x_specific)
        for v in range(V):
            row = _summarise(v, M_typ[:, v], M_spec[:, v], threshold, "report")
            row.contrast = c.label
            row.fiber = int(fiber_of[v]) if fiber_of is not None else -1
            rows.append(row)
    live = [r for r in rows if not r.all_degenerate]
    cutoff = float("nan")
    if live:
        z = np.array([r.z_score for r in live])
        cutoff = float(np.quantile(z, quantile, method="inverted_cdf"))
        for r in live:
            r.flagged = bool(r.z_score >= cutoff)
    return EffectReport(rows, threshold, quantile, cutoff)
