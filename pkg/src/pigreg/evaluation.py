"""Metric suite, distribution-shift splits and the draw test.

All metrics are per-test-set means in standardized target units. Quantities a
model cannot provide (the Gaussian baseline has no ELBO, no Gamma posterior
and no Student-t samples) are reported as NaN and rendered as ``n/a``.
"""

import csv
import io
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .density import GmmConfig, gmm_fit
from .dist import GammaParams, expected_gaussian_loglik, gamma_kl, student_t_logpdf, student_t_sample
from .mathfun import LOG_2PI
from .pig import PigConfig, generate, init_from_data
from .vvmodel import MeanVarianceNet, VvRegressor, predict

Z_975 = 1.959964  # two-sided 5% critical value of the standard normal

METRICS = ("elbo", "loglik", "rmse_mean", "rmse_var", "rmse_sample", "ood_kl", "ood_kl_far")
HIGHER_IS_BETTER = {"elbo": True, "loglik": True}


@dataclass(frozen=True)
class MetricRecord:
    elbo: float
    loglik: float
    rmse_mean: float
    rmse_var: float
    rmse_sample: float
    ood_kl: float
    ood_kl_far: float = math.nan
    seed: int = 0
    variant: str = ""

    def to_dict(self):
        return asdict(self)


def _rmse(v):
    return float(np.sqrt(np.mean(np.square(v))))


def compute_metrics(model, x, y, probe_ood=None, rng=None, probe_far=None, seed=0, variant=""):
    """Evaluate ``model`` on (x, y); probes feed the prior-KL metrics."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    y = y[:, None] if y.ndim == 1 else y
    pred = predict(model, x)
    resid = y - pred.mean
    rmse_mean = _rmse(resid)
    rmse_var = _rmse(pred.variance - resid * resid)
    if isinstance(model, MeanVarianceNet):
        var = pred.variance
        loglik = float(np.mean(np.sum(-0.5 * (LOG_2PI + np.log(var) + resid * resid / var), axis=1)))
        return MetricRecord(math.nan, loglik, rmse_mean, rmse_var, math.nan, math.nan, math.nan, seed, variant)
    if not isinstance(model, VvRegressor):
        raise TypeError(f"cannot evaluate {type(model).__name__}")
    q = GammaParams(pred.alpha, pred.beta)
    prior = model.prior
    elbo = float(np.mean(np.sum(expected_gaussian_loglik(y, pred.mean, q) - gamma_kl(q, prior), axis=1)))
    t = pred.student_t
    loglik = float(np.mean(np.sum(student_t_logpdf(t, y), axis=1)))
    if rng is None:
        rng = np.random.default_rng(seed)
    rmse_sample = _rmse(y - student_t_sample(t, rng))

    def probe_kl(probe):
        if probe is None or len(probe) == 0:
            return math.nan
        _, qp = model.posterior(probe)
        return float(np.mean(np.sum(gamma_kl(qp, prior), axis=1)))

    return MetricRecord(
        elbo, loglik, rmse_mean, rmse_var, rmse_sample, probe_kl(probe_ood), probe_kl(probe_far), seed, variant
    )


def make_probes(x_test, rng, pig=PigConfig(), gmm=GmmConfig(), k=64, far_sigma=3.0):
    """Boundary probes (generator run on a density of the test inputs) and far probes."""
    x_test = np.atleast_2d(np.asarray(x_test, dtype=np.float64))
    rng_gmm, rng_init, rng_far = rng.spawn(3)
    # The generator assumes unit-scale inputs; a test fold (a shifted one in
    # particular) can be much narrower than the train fold, so rescale it first.
    # Constant columns are left where they are: a floored variance there
    # would only inflate the density and with it the step length.
    centre = x_test.mean(axis=0)
    scale = x_test.std(axis=0)
    live = np.ptp(x_test, axis=0) > 0
    z = (x_test - centre) / np.where(live, scale, 1.0)
    init = init_from_data(z, pig.count, rng_init)
    if live.any():
        density = gmm_fit(z[:, live], min(k, len(z)), rng_gmm, gmm)
        init[:, live] = generate(density, init[:, live], pig).points
    boundary = init * np.where(live, scale, 1.0) + centre
    far = x_test + far_sigma * rng_far.standard_normal(x_test.shape)
    return boundary, far


# --- shift splits ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ShiftSplit:
    feature: int
    train: np.ndarray
    test: np.ndarray


def make_shift_splits(x):
    """One split per feature: the middle third by that feature becomes the test set."""
    x = np.atleast_2d(np.asarray(x))
    n = x.shape[0]
    if n < 3:
        raise ValueError(f"shift splits need at least 3 rows, got {n}")
    lo, hi = n // 3, (2 * n) // 3
    out = []
    for j in range(x.shape[1]):
        order = np.argsort(x[:, j], kind="stable")
        out.append(ShiftSplit(j, np.sort(np.concatenate([order[:lo], order[hi:]])), np.sort(order[lo:hi])))
    return out


# --- draw test and aggregation ----------------------------------------------


def draw_test(mean_a, std_a, n_a, mean_b, std_b, n_b):
    """Two-sided test on a mean difference; returns (is_draw, z)."""
    if n_a < 1 or n_b < 1 or std_a < 0 or std_b < 0:
        raise ValueError("need n >= 1 and std >= 0 for both samples")
    se2 = std_a * std_a / n_a + std_b * std_b / n_b
    if se2 == 0.0:
        if mean_a == mean_b:
            return True, 0.0
        return False, math.copysign(math.inf, mean_a - mean_b)
    z = (mean_a - mean_b) / math.sqrt(se2)
    return abs(z) < Z_975, z


def mean_std(values):
    v = np.asarray([t for t in values if not math.isnan(t)], dtype=np.float64)
    if v.size == 0:
        return math.nan, math.nan, 0
    std = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
    return float(np.mean(v)), std, int(v.size)


RECORD_HEADER = ("dataset", "shift", "variant", "trial", "seed", "status") + METRICS


def records_to_csv(rows, header_lines=()):
    """``rows`` are dicts with RECORD_HEADER keys; floats are written with repr."""
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_HEADER)
    for r in rows:
        w.writerow([repr(float(r[k])) if k in METRICS else r[k] for k in RECORD_HEADER])
    return buf.getvalue()


def records_from_csv(text):
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    rows = []
    for r in csv.DictReader(lines):
        for k in METRICS:
            r[k] = float(r[k])
        r["shift"], r["trial"], r["seed"] = int(r["shift"]), int(r["trial"]), int(r["seed"])
        rows.append(r)
    return rows


def aggregate(rows):
    """Mean and std over trials per (dataset, shifted, variant, metric).

    Shifted runs (shift >= 0) are first averaged over their features within a
    trial, so every trial contributes one value per dataset.
    """
    per_trial = {}
    for r in rows:
        if r["status"] != "ok":
            continue
        key = (r["dataset"], r["shift"] >= 0, r["variant"], r["trial"])
        per_trial.setdefault(key, []).append(r)
    cells = {}
    for (ds, shifted, variant, _trial), group in sorted(per_trial.items()):
        for m in METRICS:
            vals = [g[m] for g in group if not math.isnan(g[m])]
            value = float(np.mean(vals)) if vals else math.nan
            cells.setdefault((ds, shifted, variant, m), []).append(value)
    table = []
    for (ds, shifted, variant, m), vals in sorted(cells.items()):
        mean, std, n = mean_std(vals)
        table.append({"dataset": ds, "shifted": shifted, "variant": variant, "metric": m, "mean": mean, "std": std, "n": n})
    return table


def best_and_draws(table, variants):
    """Per metric, count wins and statistical draws with the winner.

    Returns {metric: {variant: [best_count, draw_count]}}. The winner of a
    (dataset, shifted) cell has the best mean; every other variant whose draw
    test against the winner is a draw gets a draw count.
    """
    counts = {m: {v: [0, 0] for v in variants} for m in METRICS}
    cells = {}
    for row in table:
        if row["n"] == 0 or math.isnan(row["mean"]):
            continue
        cells.setdefault((row["dataset"], row["shifted"], row["metric"]), {})[row["variant"]] = row
    for (_ds, _sh, m), by_variant in sorted(cells.items()):
        sign = 1.0 if HIGHER_IS_BETTER.get(m, False) else -1.0
        ranked = sorted(by_variant.values(), key=lambda r: (-sign * r["mean"], r["variant"]))
        best = ranked[0]
        counts[m][best["variant"]][0] += 1
        for other in ranked[1:]:
            draw, _ = draw_test(best["mean"], best["std"], best["n"], other["mean"], other["std"], other["n"])
            if draw:
                counts[m][other["variant"]][1] += 1
    return counts
