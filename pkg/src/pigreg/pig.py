"""Pseudo-input generator.

Pseudo-inputs start at training points and take a few gradient-descent steps
on the fitted input density, which pushes them towards the low-density rim of
the data. Steps use the gradient of the density itself, so they fade out in
the far tails and the points settle near the boundary of the support.
"""

from dataclasses import dataclass

import numpy as np

from .density import DiagGmm, DimensionError, gmm_grad_logpdf, gmm_grad_pdf, gmm_logpdf, gmm_pdf


@dataclass(frozen=True)
class PigConfig:
    count: int = 0  # 0 means "as many as training points"
    max_iterations: int = 5
    tolerance: float = 0.005
    step: float = 0.4
    log_density: bool = False  # descend ln p instead of p (spreads points further out)

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("count must be >= 0 (0 selects the training-set size)")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if not self.step > 0:
            raise ValueError("step must be > 0")


@dataclass(frozen=True, eq=False)
class PseudoInputs:
    points: np.ndarray  # (K, d)
    density: np.ndarray  # (K,) final p(x) at each point
    iterations: int
    final_eps: float


def init_from_data(x, count, rng):
    """Draw ``count`` rows of ``x``; a permutation when count equals len(x)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < 1:
        raise ValueError("need at least one training point")
    count = n if count == 0 else count
    if count == n:
        return x[rng.permutation(n)]
    if count < n:
        return x[rng.choice(n, size=count, replace=False)]
    return x[rng.choice(n, size=count, replace=True)]


def generate(density: DiagGmm, init, cfg: PigConfig) -> PseudoInputs:
    """Run the generator from ``init`` (K, d).

    The loop computes gradients, derives eps as the largest step norm, applies
    the step and only then checks eps at the top of the next pass. So with
    ``max_iterations >= 1`` at least one update is always applied.
    """
    x = np.array(init, dtype=np.float64, copy=True)
    if x.ndim != 2 or x.shape[1] != density.dim:
        raise DimensionError(f"init must be (K, {density.dim}), got {np.shape(init)}")
    grad_fn = gmm_grad_logpdf if cfg.log_density else gmm_grad_pdf
    it, eps = 0, np.inf
    while it < cfg.max_iterations and eps > cfg.tolerance:
        step = cfg.step * grad_fn(density, x)
        eps = float(np.max(np.linalg.norm(step, axis=1))) if len(x) else 0.0
        x -= step
        it += 1
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("pseudo-inputs diverged to non-finite values")
    return PseudoInputs(points=x, density=np.exp(gmm_logpdf(density, x)), iterations=it, final_eps=eps)


def far_ood(x, sigma, rng):
    """Training points plus isotropic Gaussian noise of std ``sigma``."""
    x = np.asarray(x, dtype=np.float64)
    return x + sigma * rng.standard_normal(x.shape)


def pseudo_input_density_report(density: DiagGmm, before, after):
    before = np.atleast_2d(np.asarray(before, dtype=np.float64))
    after = np.atleast_2d(np.asarray(after, dtype=np.float64))
    if before.size == 0 or after.size == 0:
        raise ValueError("density report needs non-empty point sets")
    if before.shape != after.shape:
        raise DimensionError("before and after must have the same shape")
    return {
        "mean_logp_before": float(np.mean(gmm_logpdf(density, before))),
        "mean_logp_after": float(np.mean(gmm_logpdf(density, after))),
        "mean_density_before": float(np.mean(gmm_pdf(density, before))),
        "mean_density_after": float(np.mean(gmm_pdf(density, after))),
    }


def points_to_csv(path, points, header_lines=()):
    """One row per point, columns x0..x{d-1}; header lines become '# ' comments."""
    points = np.atleast_2d(points)
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(",".join(f"x{j}" for j in range(points.shape[1])) + "\n")
        for row in points:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def points_from_csv(path):
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#") or line.startswith("x0"):
                continue
            if line.strip():
                rows.append([float(v) for v in line.split(",")])
    return np.array(rows)
