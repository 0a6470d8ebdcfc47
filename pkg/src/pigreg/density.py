"""Diagonal-covariance Gaussian mixture density with EM fitting.

The fit starts from k-means++ seeds and runs EM with a variance floor and a
weak conjugate prior on the variances. Components whose weight collapses are
dropped, then the closest components are merged along a path scored by BIC.
Weight pruning plus BIC merging stands in for the sparsifying prior of a
Bayesian mixture: the result is a deliberately coarse density.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .mathfun import LOG_2PI


class DegenerateDataError(ValueError):
    pass


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class GmmConfig:
    max_em_iters: int = 200
    tol: float = 1e-6
    var_floor: float = 1e-4
    # pseudo-observations pulling each component variance toward the data variance
    var_prior_strength: float = 1.0
    merge: bool = True
    merge_em_iters: int = 3


@dataclass(frozen=True, eq=False)
class DiagGmm:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    variances: np.ndarray  # (K, d)

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        m = np.atleast_2d(np.array(self.means, dtype=np.float64))
        v = np.atleast_2d(np.array(self.variances, dtype=np.float64))
        if w.ndim != 1 or m.shape != v.shape or m.shape[0] != w.shape[0]:
            raise DimensionError("weights (K,), means and variances (K, d) must agree")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must be >= 0 and sum to 1")
        if np.any(v <= 0):
            raise ValueError("component variances must be > 0")
        for arr in (w, m, v):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)

    @property
    def n_components(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    def to_dict(self):
        return {
            "format": "diag-gmm/1",
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
        }

    @classmethod
    def from_dict(cls, obj):
        return cls(np.array(obj["weights"]), np.array(obj["means"]), np.array(obj["variances"]))

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _points(g, x):
    pts = np.asarray(x, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != g.dim:
        raise DimensionError(f"expected points of dimension {g.dim}, got {pts.shape[1]}")
    return pts, single


def _component_logpdf(weights, means, variances, pts):
    """(n, K) array of ln pi_k + ln N(x | m_k, diag v_k)."""
    diff = pts[:, None, :] - means[None, :, :]
    maha = np.sum(diff * diff / variances[None], axis=2)
    log_norm = -0.5 * (means.shape[1] * LOG_2PI + np.sum(np.log(variances), axis=1))
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)
    return log_w[None, :] + log_norm[None, :] - 0.5 * maha


def _logsumexp(a, axis):
    top = np.max(a, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    return np.squeeze(top, axis=axis) + np.log(np.sum(np.exp(a - top), axis=axis))


def gmm_logpdf(g: DiagGmm, x):
    """ln p(x) for one point (d,) or a batch (n, d)."""
    pts, single = _points(g, x)
    out = _logsumexp(_component_logpdf(g.weights, g.means, g.variances, pts), axis=1)
    return float(out[0]) if single else out


def gmm_pdf(g: DiagGmm, x):
    out = np.exp(gmm_logpdf(g, x))
    return float(out) if np.ndim(out) == 0 else out


def gmm_grad_pdf(g: DiagGmm, x):
    """Gradient of the density p(x) (not of ln p)."""
    pts, single = _points(g, x)
    comp = np.exp(_component_logpdf(g.weights, g.means, g.variances, pts))  # (n, K)
    slope = -(pts[:, None, :] - g.means[None]) / g.variances[None]  # (n, K, d)
    grad = np.einsum("nk,nkd->nd", comp, slope)
    return grad[0] if single else grad


def gmm_grad_logpdf(g: DiagGmm, x):
    """Gradient of ln p(x); handy for diagnostics and the log-density PIG mode."""
    pts, single = _points(g, x)
    logc = _component_logpdf(g.weights, g.means, g.variances, pts)
    resp = np.exp(logc - _logsumexp(logc, axis=1)[:, None])
    slope = -(pts[:, None, :] - g.means[None]) / g.variances[None]
    grad = np.einsum("nk,nkd->nd", resp, slope)
    return grad[0] if single else grad


def gmm_sample(g: DiagGmm, n, rng):
    comp = rng.choice(g.n_components, size=n, p=g.weights)
    return g.means[comp] + rng.standard_normal((n, g.dim)) * np.sqrt(g.variances[comp])


# --- fitting -----------------------------------------------------------------


@dataclass
class EmTrace:
    """Per-iteration record of the main EM run.

    ``objective`` is the mean per-point log-likelihood plus the variance prior
    term; EM never decreases it. ``loglik`` is the plain log-likelihood.
    """

    objective: list = field(default_factory=list)
    loglik: list = field(default_factory=list)
    pruned: int = 0
    merged: int = 0


class _Fitter:
    def __init__(self, data, config):
        self.data = data
        self.cfg = config
        self.n, self.d = data.shape
        self.data_var = np.maximum(data.var(axis=0), config.var_floor)

    def m_step(self, resp):
        cfg, data = self.cfg, self.data
        nk = resp.sum(axis=0)
        safe = np.maximum(nk, 1e-300)[:, None]
        weights = nk / nk.sum()
        means = np.where(nk[:, None] > 0, resp.T @ data / safe, data.mean(axis=0))
        scatter = np.maximum(resp.T @ (data * data) / safe - means * means, 0.0) * (nk[:, None] > 0)
        nu = cfg.var_prior_strength
        variances = (nk[:, None] * scatter + nu * self.data_var) / (nk[:, None] + nu)
        return weights, means, np.maximum(variances, cfg.var_floor)

    def prior_term(self, variances):
        nu = self.cfg.var_prior_strength
        return -0.5 * nu * float(np.sum(np.log(variances) + self.data_var / variances)) / self.n

    def e_step(self, params):
        logc = _component_logpdf(*params, self.data)
        lse = _logsumexp(logc, axis=1)
        return np.exp(logc - lse[:, None]), float(np.mean(lse))

    def em(self, params, max_iters, trace=None):
        resp, ll = self.e_step(params)
        obj = ll + self.prior_term(params[2])
        if trace is not None:
            trace.loglik.append(ll)
            trace.objective.append(obj)
        for _ in range(max_iters):
            params = self.m_step(resp)
            resp, ll = self.e_step(params)
            new_obj = ll + self.prior_term(params[2])
            if trace is not None:
                trace.loglik.append(ll)
                trace.objective.append(new_obj)
            done = new_obj - obj < self.cfg.tol
            obj = new_obj
            if done:
                break
        return params, ll

    def bic(self, ll, k):
        n_params = k * 2 * self.d + (k - 1)
        return -2.0 * self.n * ll + n_params * math.log(self.n)


def _kmeanspp(data, k, rng):
    n = data.shape[0]
    centers = [data[rng.integers(n)]]
    d2 = np.sum((data - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.integers(n) if total <= 0.0 else rng.choice(n, p=d2 / total)
        centers.append(data[idx])
        d2 = np.minimum(d2, np.sum((data - data[idx]) ** 2, axis=1))
    return np.array(centers)


def _closest_pair(weights, means, variances):
    # symmetric KL between diagonal components
    k = len(weights)
    best, pair = np.inf, None
    for i in range(k - 1):
        dm = means[i + 1 :] - means[i]
        vi, vj = variances[i], variances[i + 1 :]
        skl = 0.5 * np.sum(vi / vj + vj / vi - 2.0 + dm * dm * (1.0 / vi + 1.0 / vj), axis=1)
        j = int(np.argmin(skl))
        if skl[j] < best:
            best, pair = skl[j], (i, i + 1 + j)
    return pair


def _merge(params, i, j, var_floor):
    weights, means, variances = params
    w = weights[i] + weights[j]
    if w <= 0.0:
        m, v = means[i], variances[i]
    else:
        m = (weights[i] * means[i] + weights[j] * means[j]) / w
        second = (
            weights[i] * (variances[i] + means[i] ** 2) + weights[j] * (variances[j] + means[j] ** 2)
        ) / w
        v = np.maximum(second - m * m, var_floor)
    keep = [t for t in range(len(weights)) if t not in (i, j)]
    return (np.append(weights[keep], w), np.vstack([means[keep], m]), np.vstack([variances[keep], v]))


def _prune(params, threshold):
    weights, means, variances = params
    keep = weights >= threshold
    if not keep.any():
        keep = weights == weights.max()
    w = weights[keep]
    return (w / w.sum(), means[keep], variances[keep]), int((~keep).sum())


def gmm_fit(data, k, rng, config: GmmConfig = GmmConfig(), trace: EmTrace = None) -> DiagGmm:
    """Fit a diagonal GMM to ``data`` (N, d), starting from ``k`` components.

    After EM converges, components lighter than 1/(10 N) are dropped. With
    ``config.merge`` the closest pair (symmetric KL) is then merged repeatedly
    down to a single component, each candidate refined by a few EM steps, and
    the candidate with the lowest BIC is returned.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
        raise DegenerateDataError("gmm_fit needs at least one observation of dimension >= 1")
    if k < 1:
        raise ValueError("k must be >= 1")
    n = data.shape[0]
    k = min(k, n)
    trace = trace if trace is not None else EmTrace()
    fit = _Fitter(data, config)

    centers = _kmeanspp(data, k, rng)
    nearest = np.argmin(np.sum((data[:, None, :] - centers[None]) ** 2, axis=2), axis=1)
    resp = np.zeros((n, k))
    resp[np.arange(n), nearest] = 1.0
    params = fit.m_step(resp)
    params, ll = fit.em(params, config.max_em_iters, trace)

    params, n_pruned = _prune(params, 1.0 / (10.0 * n))
    trace.pruned = n_pruned
    if n_pruned:
        params, ll = fit.em(params, config.max_em_iters)

    if config.merge:
        best_bic, best = fit.bic(ll, len(params[0])), params
        while len(params[0]) > 1:
            params = _merge(params, *_closest_pair(*params), config.var_floor)
            params, ll = fit.em(params, config.merge_em_iters)
            params, _ = _prune(params, 1.0 / (10.0 * n))
            bic = fit.bic(ll, len(params[0]))
            if bic < best_bic:
                best_bic, best = bic, params
        trace.merged = k - n_pruned - len(best[0])
        params = best

    weights, means, variances = params
    return DiagGmm(weights / weights.sum(), means, variances)
