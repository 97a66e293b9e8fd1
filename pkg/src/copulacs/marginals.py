"""Univariate marginal models for transform-domain coefficients.

Three variants cover the coefficient shapes seen in practice: Laplace
(double exponential), Cauchy (heavy tails), and a Gaussian-kernel density
estimate for anything in between. All expose pdf/cdf/quantile plus an MLE
(or rule-of-thumb, for the KDE bandwidth) fit, so they are interchangeable
wherever a marginal is consumed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize

from .errors import ConvergenceError, InsufficientDataError, ParameterError

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)


def _as_sample_array(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2 or np.unique(x).size < 2:
        raise InsufficientDataError("need at least 2 distinct samples to fit")
    if not np.all(np.isfinite(x)):
        raise ParameterError("samples must be finite")
    return x


def _check_probability(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ParameterError("quantile argument must lie strictly inside (0, 1)")
    return p


@dataclass(frozen=True)
class LaplaceMarginal:
    """Laplace marginal with location mu and scale b > 0."""

    location: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not (self.scale > 0.0 and np.isfinite(self.scale) and np.isfinite(self.location)):
            raise ParameterError("Laplace scale must be positive and finite")

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(-np.abs(x - self.location) / self.scale) / (2.0 * self.scale)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        z = (x - self.location) / self.scale
        return np.where(z < 0.0, 0.5 * np.exp(z), 1.0 - 0.5 * np.exp(-z))

    def quantile(self, p):
        p = _check_probability(p)
        return self.location + self.scale * np.where(
            p < 0.5, np.log(2.0 * p), -np.log(2.0 * (1.0 - p))
        )


@dataclass(frozen=True)
class CauchyMarginal:
    """Cauchy marginal with location alpha and scale beta > 0."""

    location: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not (self.scale > 0.0 and np.isfinite(self.scale) and np.isfinite(self.location)):
            raise ParameterError("Cauchy scale must be positive and finite")

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        z = (x - self.location) / self.scale
        return 1.0 / (math.pi * self.scale * (1.0 + z * z))

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 + np.arctan((x - self.location) / self.scale) / math.pi

    def quantile(self, p):
        p = _check_probability(p)
        return self.location + self.scale * np.tan(math.pi * (p - 0.5))


class KdeMarginal:
    """Gaussian-kernel density estimate over a fixed sample set.

    Parameters
    ----------
    samples : array_like
        Observations the density is built from (at least 2 distinct).
    bandwidth : float, optional
        Kernel bandwidth h. Defaults to Silverman's rule of thumb,
        0.9 * min(std, IQR/1.34) * n**(-1/5).
    """

    def __init__(self, samples, bandwidth: float | None = None):
        x = _as_sample_array(samples)
        if bandwidth is None:
            bandwidth = silverman_bandwidth(x)
        if not (bandwidth > 0.0 and np.isfinite(bandwidth)):
            raise ParameterError("bandwidth must be positive and finite")
        self.samples = np.sort(x)
        self.bandwidth = float(bandwidth)

    @property
    def location(self) -> float:
        return float(np.median(self.samples))

    @property
    def scale(self) -> float:
        return self.bandwidth

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        z = (x[..., None] - self.samples) / self.bandwidth
        out = np.exp(-0.5 * z * z).sum(axis=-1)
        return out / (self.samples.size * self.bandwidth * _SQRT2PI)

    def cdf(self, x):
        from scipy.special import ndtr

        x = np.asarray(x, dtype=float)
        z = (x[..., None] - self.samples) / self.bandwidth
        return ndtr(z).mean(axis=-1)

    def quantile(self, p):
        p = _check_probability(p)
        scalar = p.ndim == 0
        lo = float(self.samples[0])
        hi = float(self.samples[-1])
        out = np.empty(np.atleast_1d(p).shape, dtype=float)
        for idx, pi in enumerate(np.atleast_1d(p)):
            a, b = lo - 10.0 * self.bandwidth, hi + 10.0 * self.bandwidth
            # expand until the root is bracketed (tails are Gaussian, so fast)
            while self.cdf(a) > pi:
                a -= 10.0 * self.bandwidth
            while self.cdf(b) < pi:
                b += 10.0 * self.bandwidth
            out[idx] = brentq(lambda t: self.cdf(t) - pi, a, b, xtol=1e-12)
        return float(out[0]) if scalar else out.reshape(p.shape)


def silverman_bandwidth(samples) -> float:
    """Rule-of-thumb bandwidth 0.9 * min(std, IQR/1.34) * n**(-1/5)."""
    x = _as_sample_array(samples)
    std = float(np.std(x, ddof=1))
    q25, q75 = np.percentile(x, [25.0, 75.0])
    iqr = float(q75 - q25)
    spread = min(std, iqr / 1.34) if iqr > 0.0 else std
    return 0.9 * spread * x.size ** (-0.2)


def fit_laplace(samples) -> LaplaceMarginal:
    """MLE: location = sample median, scale = mean absolute deviation."""
    x = _as_sample_array(samples)
    loc = float(np.median(x))
    scale = float(np.mean(np.abs(x - loc)))
    return LaplaceMarginal(loc, scale)


def fit_cauchy(samples, max_iterations: int = 2000) -> CauchyMarginal:
    """MLE by derivative-free search (no closed form exists).

    Nelder-Mead on (location, log scale), started at the median and half the
    interquartile range, with 1e-8 parameter tolerance.
    """
    x = _as_sample_array(samples)
    loc0 = float(np.median(x))
    q25, q75 = np.percentile(x, [25.0, 75.0])
    scale0 = 0.5 * float(q75 - q25)
    if scale0 <= 0.0:
        scale0 = max(1e-3 * float(np.std(x)), 1e-6)

    def negloglik(theta):
        loc, log_scale = theta
        scale = math.exp(log_scale)
        z = (x - loc) / scale
        return x.size * math.log(math.pi * scale) + float(np.sum(np.log1p(z * z)))

    res = minimize(
        negloglik,
        x0=np.array([loc0, math.log(scale0)]),
        method="Nelder-Mead",
        options={"xatol": 1e-8, "fatol": 1e-12, "maxiter": max_iterations},
    )
    if not res.success:
        raise ConvergenceError(f"Cauchy MLE did not converge: {res.message}")
    return CauchyMarginal(float(res.x[0]), float(math.exp(res.x[1])))


def fit_kde(samples, bandwidth: float | None = None) -> KdeMarginal:
    return KdeMarginal(samples, bandwidth=bandwidth)


_FITTERS = {"laplace": fit_laplace, "cauchy": fit_cauchy, "kde": fit_kde}


def fit_marginal(samples, variant: str):
    """Fit one marginal variant ("laplace", "cauchy", or "kde")."""
    try:
        fitter = _FITTERS[variant]
    except KeyError:
        raise ParameterError(
            f"unknown marginal variant {variant!r}; expected one of {sorted(_FITTERS)}"
        ) from None
    return fitter(samples)


def ks_statistic(model, samples) -> float:
    """Kolmogorov-Smirnov distance between model cdf and the empirical cdf."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise InsufficientDataError("no samples")
    n = x.size
    f = np.asarray(model.cdf(x), dtype=float)
    d_plus = float(np.max(np.arange(1, n + 1) / n - f))
    d_minus = float(np.max(f - np.arange(0, n) / n))
    return max(d_plus, d_minus)


def ks_pvalue(statistic: float, n: int, terms: int = 100) -> float:
    """Asymptotic KS p-value, alternating series truncated at `terms`."""
    if n <= 0:
        raise ParameterError("n must be positive")
    y = math.sqrt(n) * statistic
    if y < 1e-3:
        return 1.0
    k = np.arange(1, terms + 1, dtype=float)
    p = 2.0 * float(np.sum((-1.0) ** (k - 1) * np.exp(-2.0 * (k * y) ** 2)))
    return min(1.0, max(0.0, p))


def ks_test(model, samples) -> tuple[float, float]:
    """(statistic, asymptotic p-value) of the model against the samples."""
    x = np.asarray(samples, dtype=float).ravel()
    d = ks_statistic(model, x)
    return d, ks_pvalue(d, x.size)
