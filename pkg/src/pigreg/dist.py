"""Gaussian, Gamma and non-standard Student-t distribution math.

Gamma distributions are parameterised by shape and *rate* everywhere. All
functions broadcast over numpy arrays so the models can evaluate a whole batch
of posteriors at once.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .mathfun import LOG_2PI, DomainError, digamma, log_gamma, trigamma


class UndefinedMomentError(ValueError):
    """Requested a Student-t moment that does not exist for its degrees of freedom."""


def _check_positive(name, value):
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise DomainError(f"{name} must be finite and > 0")


@dataclass(frozen=True)
class GammaParams:
    """Gamma(shape, rate). Fields may be floats or equally shaped arrays."""

    shape: object
    rate: object

    def __post_init__(self):
        _check_positive("shape", self.shape)
        _check_positive("rate", self.rate)

    @property
    def mean(self):
        return np.asarray(self.shape) / np.asarray(self.rate)

    @property
    def predictive_variance(self):
        """rate / (shape - 1): variance of the matching Student-t marginal."""
        return np.asarray(self.rate) / (np.asarray(self.shape) - 1.0)


@dataclass(frozen=True)
class GaussianParams:
    mean: float
    precision: float

    def __post_init__(self):
        _check_positive("precision", self.precision)

    @property
    def variance(self):
        return 1.0 / self.precision


@dataclass(frozen=True)
class StudentT:
    """Student-t with ``df`` degrees of freedom, location ``loc`` and scale ``scale``."""

    df: object
    loc: object
    scale: object

    def __post_init__(self):
        _check_positive("df", self.df)
        _check_positive("scale", self.scale)

    @property
    def shape(self):
        """Shape of the Gamma precision this marginal arises from (df / 2)."""
        return 0.5 * np.asarray(self.df, dtype=np.float64)


class Moments(NamedTuple):
    mean: object
    variance: object
    aleatoric: object
    epistemic: object


def gamma_kl(q: GammaParams, p: GammaParams):
    """KL(Gamma(q.shape, q.rate) || Gamma(p.shape, p.rate))."""
    alpha, beta = np.asarray(q.shape, float), np.asarray(q.rate, float)
    a, b = np.asarray(p.shape, float), np.asarray(p.rate, float)
    kl = (
        (alpha - a) * digamma(alpha)
        - log_gamma(alpha)
        + log_gamma(a)
        + a * (np.log(beta) - np.log(b))
        + alpha * (b - beta) / beta
    )
    return float(kl) if np.ndim(kl) == 0 else kl


def gamma_kl_grad(q: GammaParams, p: GammaParams):
    """Partial derivatives of :func:`gamma_kl` w.r.t. ``q.shape`` and ``q.rate``."""
    alpha, beta = np.asarray(q.shape, float), np.asarray(q.rate, float)
    a, b = np.asarray(p.shape, float), np.asarray(p.rate, float)
    d_alpha = (alpha - a) * trigamma(alpha) + (b - beta) / beta
    d_beta = a / beta - alpha * b / (beta * beta)
    return d_alpha, d_beta


def gamma_expect_log(q: GammaParams):
    """E[ln lambda] under Gamma(shape, rate)."""
    out = digamma(q.shape) - np.log(q.rate)
    return float(out) if np.ndim(out) == 0 else out


def gamma_sample(q: GammaParams, rng: np.random.Generator, size=None):
    """Draw precisions from Gamma(shape, rate) using ``rng``."""
    return rng.gamma(q.shape, 1.0 / np.asarray(q.rate, float), size=size)


def student_t_from_gamma(mu, q: GammaParams) -> StudentT:
    """Marginal of N(x | mu, 1/lambda) with lambda ~ Gamma(q)."""
    alpha = np.asarray(q.shape, float)
    return StudentT(df=2.0 * alpha, loc=mu, scale=np.sqrt(np.asarray(q.rate, float) / alpha))


def student_t_logpdf(t: StudentT, x):
    nu = np.asarray(t.df, float)
    z = (np.asarray(x, float) - np.asarray(t.loc, float)) / np.asarray(t.scale, float)
    out = (
        log_gamma(0.5 * (nu + 1.0))
        - log_gamma(0.5 * nu)
        - 0.5 * np.log(nu * np.pi)
        - np.log(t.scale)
        - 0.5 * (nu + 1.0) * np.log1p(z * z / nu)
    )
    return float(out) if np.ndim(out) == 0 else out


def student_t_moments(t: StudentT) -> Moments:
    """Mean, variance and its aleatoric x epistemic split.

    The aleatoric part is scale**2 (rate / shape of the underlying Gamma) and
    the epistemic factor is shape / (shape - 1).
    """
    nu = np.asarray(t.df, float)
    if np.any(nu <= 1.0):
        raise UndefinedMomentError("Student-t mean needs df > 1")
    if np.any(nu <= 2.0):
        raise UndefinedMomentError("Student-t variance needs df > 2")
    alpha = 0.5 * nu
    aleatoric = np.asarray(t.scale, float) ** 2
    epistemic = alpha / (alpha - 1.0)
    return Moments(
        mean=np.asarray(t.loc, float) + 0.0 * nu,
        variance=aleatoric * epistemic,
        aleatoric=aleatoric,
        epistemic=epistemic,
    )


def student_t_sample(t: StudentT, rng: np.random.Generator, size=None):
    """Compositional draw: lambda ~ Gamma(df/2, rate=scale^2 df/2), x ~ N(loc, 1/lambda)."""
    alpha = t.shape
    rate = np.asarray(t.scale, float) ** 2 * alpha
    lam = rng.gamma(alpha, 1.0 / rate, size=size)
    return np.asarray(t.loc, float) + rng.standard_normal(np.shape(lam)) / np.sqrt(lam)


def expected_gaussian_loglik(y, mu, q: GammaParams):
    """E_q[ln N(y | mu, 1/lambda)] in closed form."""
    alpha, beta = np.asarray(q.shape, float), np.asarray(q.rate, float)
    r2 = (np.asarray(y, float) - np.asarray(mu, float)) ** 2
    out = -0.5 * (LOG_2PI - digamma(alpha) + np.log(beta) + alpha / beta * r2)
    return float(out) if np.ndim(out) == 0 else out


def expected_gaussian_loglik_grad(y, mu, q: GammaParams):
    """Partials of :func:`expected_gaussian_loglik` w.r.t. mu, shape and rate."""
    alpha, beta = np.asarray(q.shape, float), np.asarray(q.rate, float)
    r = np.asarray(y, float) - np.asarray(mu, float)
    d_mu = alpha / beta * r
    d_alpha = 0.5 * trigamma(alpha) - 0.5 * r * r / beta
    d_beta = -0.5 / beta + 0.5 * alpha * r * r / (beta * beta)
    return d_mu, d_alpha, d_beta
