"""Independent numerical oracles (scipy quadrature, Monte Carlo) for the tests."""

import math

import numpy as np
from scipy import integrate, special


def _log_gamma_pdf(lam_log, shape, rate):
    # log density of ln(lambda) when lambda ~ Gamma(shape, rate)
    return shape * math.log(rate) - special.gammaln(shape) + shape * lam_log - rate * math.exp(lam_log)


def _log_t_window(shape, rate):
    mode = math.log(shape / rate)
    return mode - 60.0 / shape - 5.0, mode + math.log1p(60.0 / shape) + 3.0


def gamma_kl_quad(alpha, beta, a, b):
    """KL(Gamma(alpha, beta) || Gamma(a, b)) by quadrature over t = ln(lambda)."""

    def integrand(t):
        lq = _log_gamma_pdf(t, alpha, beta)
        lp = _log_gamma_pdf(t, a, b)
        return math.exp(lq) * (lq - lp)

    lo, hi = _log_t_window(alpha, beta)
    mode = math.log(alpha / beta)
    pts = sorted({lo, min(max(mode - 2.0, lo), hi), mode, min(mode + 2.0, hi), hi})
    total = 0.0
    for u, v in zip(pts[:-1], pts[1:]):
        if v > u:
            total += integrate.quad(integrand, u, v, epsabs=1e-13, epsrel=1e-13, limit=400)[0]
    return total


def student_t_logpdf_quad(x, mu, alpha, beta):
    """ln of the integral of N(x | mu, 1/lambda) Gamma(lambda | alpha, beta) over lambda."""
    r2 = (x - mu) ** 2

    def log_integrand(t):
        lam = math.exp(t)
        return _log_gamma_pdf(t, alpha, beta) + 0.5 * (t - math.log(2 * math.pi)) - 0.5 * lam * r2

    lo, hi = _log_t_window(alpha, beta + 0.5 * r2)
    ts = np.linspace(lo, hi, 2001)
    shift = max(log_integrand(t) for t in ts)
    val = integrate.quad(lambda t: math.exp(log_integrand(t) - shift), lo, hi, epsabs=0.0, epsrel=1e-13, limit=400)[0]
    return shift + math.log(val)


def expected_loglik_mc(y, mu, alpha, beta, n, rng):
    lam = rng.gamma(alpha, 1.0 / beta, size=n)
    return float(np.mean(0.5 * (np.log(lam) - math.log(2 * math.pi)) - 0.5 * lam * (y - mu) ** 2))


def central_diff(f, x, h):
    return (f(x + h) - f(x - h)) / (2 * h)
