"""Scalar complex-Gaussian message algebra and log-domain discrete distributions.

Every message passed around the receiver is a circularly-symmetric complex
Gaussian CN(mean, variance) with a real positive variance, or a finite
distribution over constellation points / user indices kept as log-weights.
The vectorized receiver loops reimplement these kernels on arrays; tests pin
the two paths against each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

VARIANCE_FLOOR = 1e-12
VARIANCE_CAP = 1e8
LAMBDA_FLOOR = 1e-8
LAMBDA_CAP = 1e8


@dataclass
class GaussianMsg:
    """A scalar CN(mean, variance) belief or message."""

    mean: complex
    variance: float


@dataclass
class DiscreteDist:
    """Finite distribution over an ordered support, weights in natural log."""

    support: np.ndarray
    log_weights: np.ndarray

    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)


@dataclass
class ClampCounter:
    """Mutable counter for quotient clamp events (diagnostics only)."""

    count: int = 0
    events: list = field(default_factory=list)


def cgauss_pdf(x: complex, mean: complex, variance: float) -> float:
    """Density of CN(mean, variance) at x: exp(-|x-mean|^2/variance)/(pi*variance)."""
    if variance <= 0:
        raise ValueError(f"variance must be positive, got {variance}")
    d = x - mean
    return float(np.exp(-(d.real * d.real + d.imag * d.imag) / variance) / (np.pi * variance))


def log_cgauss_pdf(x, mean, variance):
    """Log of cgauss_pdf; array-friendly."""
    d = np.asarray(x) - np.asarray(mean)
    v = np.asarray(variance, dtype=float)
    return -np.log(np.pi * v) - (d.real * d.real + d.imag * d.imag) / v


def gaussian_product(a: GaussianMsg, b: GaussianMsg) -> GaussianMsg:
    """Normalized product of two CN densities (precision addition)."""
    pa, pb = 1.0 / a.variance, 1.0 / b.variance
    v = 1.0 / (pa + pb)
    m = (a.mean * pa + b.mean * pb) * v
    return GaussianMsg(m, max(v, VARIANCE_FLOOR))


def gaussian_quotient(
    num: GaussianMsg,
    den: GaussianMsg,
    clamp_counter: ClampCounter | None = None,
    variance_cap: float = VARIANCE_CAP,
) -> GaussianMsg:
    """Density quotient num/den refit as a Gaussian (precision subtraction).

    Non-positive resulting precision (or one below 1/variance_cap) is clamped
    to variance_cap with the numerator mean kept; clamps are counted when a
    counter is supplied.
    """
    prec = 1.0 / num.variance - 1.0 / den.variance
    if prec < 1.0 / variance_cap:
        if clamp_counter is not None:
            clamp_counter.count += 1
        return GaussianMsg(num.mean, variance_cap)
    v = 1.0 / prec
    m = (num.mean / num.variance - den.mean / den.variance) * v
    return GaussianMsg(m, max(v, VARIANCE_FLOOR))


def project_mixture(components) -> GaussianMsg:
    """Moment-match a mixture of point masses and Gaussians to one Gaussian.

    `components` is an iterable of (weight, comp) with comp either a complex
    scalar (point mass) or a GaussianMsg. Weights need not be normalized.
    """
    wsum = 0.0
    m1 = 0.0 + 0.0j
    m2 = 0.0
    for w, comp in components:
        if w < 0:
            raise ValueError("mixture weights must be nonnegative")
        if w == 0.0:
            continue
        if isinstance(comp, GaussianMsg):
            mu, var = comp.mean, comp.variance
        else:
            mu, var = complex(comp), 0.0
        wsum += w
        m1 += w * mu
        m2 += w * (abs(mu) ** 2 + var)
    if wsum == 0.0:
        raise ValueError("degenerate mixture: all weights zero")
    mean = m1 / wsum
    var = m2 / wsum - abs(mean) ** 2
    return GaussianMsg(mean, max(var, VARIANCE_FLOOR))


def log_sum_exp(a: np.ndarray, axis=None):
    """Overflow-safe log(sum(exp(a))); tolerates -inf entries."""
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(out.reshape(-1)[0])
    return np.squeeze(out, axis=axis)


def normalize_log(d: DiscreteDist) -> DiscreteDist:
    """Shift log-weights so the distribution sums to one."""
    lw = np.asarray(d.log_weights, dtype=float)
    if not np.any(lw > -np.inf):
        raise ValueError("degenerate distribution: all log-weights are -inf")
    return DiscreteDist(d.support, lw - log_sum_exp(lw))


def expit(x: np.ndarray) -> np.ndarray:
    """Overflow-safe logistic function, saturating exactly at 0 and 1."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
