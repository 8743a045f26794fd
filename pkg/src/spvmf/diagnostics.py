"""Convergence diagnostics: Heidelberger-Welch stationarity/halfwidth tests and ESS."""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import kv
from scipy.stats import chi2

from .errors import TraceTooShort

MIN_HW_LENGTH = 100
MIN_ESS_LENGTH = 10


def _autocovariance(x, max_lag):
    x = np.asarray(x, dtype=float) - np.mean(x)
    n = x.size
    m = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, m)
    acov = np.fft.irfft(f * np.conj(f), m)[: max_lag + 1] / n
    return acov


def spectrum0_ar(x):
    """Spectral density at frequency zero from a Yule-Walker AR fit with AIC order choice.

    Returns ``var_pred / (1 - sum(phi))^2`` as in the usual MCMC-output
    tooling; ``var_pred`` carries the ``n / (n - order - 1)`` correction.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    order_max = int(min(n - 1, math.floor(10.0 * math.log10(n))))
    r = _autocovariance(x, order_max)
    if r[0] <= 0:
        return 0.0
    # Levinson recursion, keeping every order's coefficients and innovation variance.
    phis = [np.zeros(0)]
    variances = [r[0]]
    phi = np.zeros(0)
    v = r[0]
    for k in range(1, order_max + 1):
        lags = np.arange(1, k)
        pk = (r[k] - phi @ r[k - lags]) / v if k > 1 else r[1] / v
        if abs(pk) >= 1.0:
            break
        phi = np.concatenate([phi - pk * phi[::-1], [pk]])
        v *= 1.0 - pk * pk
        phis.append(phi)
        variances.append(v)
    aic = n * np.log(np.array(variances)) + 2.0 * np.arange(len(variances))
    order = int(np.argmin(aic))
    var_pred = variances[order] * n / (n - (order + 1))
    return float(var_pred / (1.0 - phis[order].sum()) ** 2)


PCRAMER_SERIES_MAX = 2.5


def _pcramer_series(q, eps):
    total = 0.0
    for k in range(4):
        u = (4 * k + 1) ** 2 / (16.0 * q)
        if u > -math.log(eps):
            continue
        z = gamma_fn(k + 0.5) * math.sqrt(4 * k + 1) / (gamma_fn(k + 1) * math.pi**1.5 * math.sqrt(q))
        total += z * math.exp(-u) * kv(0.25, u)
    return total


def pcramer(q, eps=1e-5):
    """CDF of the Cramer-von Mises limit law.

    Uses the four-term series in the modified Bessel function K_{1/4} up to
    ``q = 2.5``. The truncated series turns back down for larger ``q``, so the
    upper tail continues there as the leading eigenvalue term, a scaled
    chi-square(1) survival at ``pi^2 q``, matched to the series at 2.5.
    """
    q = float(q)
    if q <= 0:
        return 0.0
    if q <= PCRAMER_SERIES_MAX:
        return _pcramer_series(q, eps)
    q0 = PCRAMER_SERIES_MAX
    tail0 = 1.0 - _pcramer_series(q0, eps)
    return 1.0 - tail0 * chi2.sf(math.pi**2 * q, 1) / chi2.sf(math.pi**2 * q0, 1)


@dataclass
class HwResult:
    stationary: bool
    kept_fraction: float
    halfwidth_ratio: float
    halfwidth: float
    mean: float
    cvm_statistic: float
    pvalue: float
    passed_halfwidth: bool
    degenerate: bool = False

    def to_dict(self):
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in self.__dict__.items()}


def hw_diagnostic(trace, pvalue=0.05, eps=0.1):
    """Heidelberger-Welch diagnostic on a scalar trace.

    The spectral density at zero is estimated once from the final half of the
    trace. The Cramer-von Mises test on the scaled Brownian bridge is applied
    after discarding 0%, 10%, ..., 50% of the start; the first passing
    truncation wins. The halfwidth test then checks the 95% interval of the
    retained mean against ``eps`` times its magnitude.
    """
    y = np.asarray(trace, dtype=float)
    n1 = y.size
    if n1 < MIN_HW_LENGTH:
        raise TraceTooShort(f"trace has {n1} values; need at least {MIN_HW_LENGTH}")
    if np.ptp(y) == 0.0:
        return HwResult(True, 1.0, 0.0, 0.0, float(y[0]), 0.0, 1.0, True, degenerate=True)
    s0 = spectrum0_ar(y[n1 // 2:])
    converged = False
    stat = float("nan")
    p = float("nan")
    start = 0
    for frac in np.arange(6) / 10.0:
        start = int(round(frac * n1))
        seg = y[start:]
        n = seg.size
        bridge = np.cumsum(seg) - seg.mean() * np.arange(1, n + 1)
        stat = float(np.sum(bridge * bridge / (n * s0)) / n) if s0 > 0 else float("nan")
        p = 1.0 - pcramer(stat) if math.isfinite(stat) else float("nan")
        if math.isfinite(stat) and pcramer(stat) < 1.0 - pvalue:
            converged = True
            break
    seg = y[start:]
    mean = float(seg.mean())
    if not converged:
        return HwResult(False, float("nan"), float("nan"), float("nan"), mean, stat, p, False)
    halfwidth = 1.96 * math.sqrt(spectrum0_ar(seg) / seg.size)
    ratio = abs(halfwidth / mean) if mean != 0 else float("inf")
    return HwResult(True, seg.size / n1, ratio, halfwidth, mean, stat, p, bool(ratio <= eps))


def effective_sample_size(trace):
    """n / (1 + 2 sum rho_k) with Geyer's initial positive sequence truncation.

    Returns 0.0 for a constant trace.
    """
    x = np.asarray(trace, dtype=float)
    n = x.size
    if n < MIN_ESS_LENGTH:
        raise TraceTooShort(f"trace has {n} values; need at least {MIN_ESS_LENGTH}")
    acov = _autocovariance(x, n - 1)
    if acov[0] <= 0:
        return 0.0
    rho = acov / acov[0]
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return float(n / max(tau, 1e-12))


@dataclass
class DiagnosticsReport:
    entries: dict = field(default_factory=dict)

    @property
    def stationary_fraction(self):
        flags = [e["hw"].stationary for e in self.entries.values()]
        return float(np.mean(flags)) if flags else float("nan")

    def to_dict(self):
        return {
            "stationary_fraction": self.stationary_fraction,
            "traces": {k: {"ess": e["ess"], **e["hw"].to_dict()} for k, e in self.entries.items()},
        }


def diagnose(draws, pvalue=0.05, eps=0.1):
    """Run both diagnostics on every scalar trace of ``draws``."""
    report = DiagnosticsReport()
    for name, trace in draws.traces().items():
        report.entries[name] = {
            "hw": hw_diagnostic(trace, pvalue, eps),
            "ess": effective_sample_size(trace),
        }
    return report
