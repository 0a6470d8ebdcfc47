"""Single runs and benchmark sweeps built from an ExperimentConfig.

Randomness is drawn from one SeedSequence per (master seed, trial) that is
split into named child streams. Every variant of a trial sees the same data
split, the same initial weights and the same stage-1 batches, so d-VV and VV
differ only by the pseudo-input term.
"""

import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .data import (
    Dataset,
    ManifestEntry,
    _columns,
    fetch,
    heteroscedastic_bump_generate,
    load_manifest,
    load_table,
    random_split,
    standardize_split,
    toy_generate,
)
from .density import gmm_fit
from .dist import GammaParams, gamma_kl
from .evaluation import MetricRecord, compute_metrics, make_probes, make_shift_splits
from .pig import far_ood
from .vvmodel import (
    DissipativeConfig,
    MeanVarianceNet,
    TrainLog,
    VvRegressor,
    fit_mean,
    fit_uncertainty,
    predict,
    select_prior,
    train_mvn,
)

STREAMS = ("data", "split", "init", "stage1", "density", "stage2", "probes", "metrics")


def streams(master_seed, trial):
    ss = np.random.SeedSequence([int(master_seed), int(trial)])
    return {name: np.random.default_rng(child) for name, child in zip(STREAMS, ss.spawn(len(STREAMS)))}


# --- data --------------------------------------------------------------------


def load_raw(cfg: ExperimentConfig, name=None, cache_dir=None, rng=None, transport=None):
    """(X, Y, provenance) in raw units for the configured dataset."""
    name = name or cfg.data.name
    d = cfg.data
    if name == "toy":
        ds = toy_generate(d.toy_n, d.toy_low, d.toy_high, rng)
        return ds.x, ds.y, ds.provenance
    if name == "bump":
        ds = heteroscedastic_bump_generate(d.toy_n, d.bump_s, rng)
        return ds.x, ds.y, ds.provenance
    if name == "csv":
        entry = ManifestEntry(
            "csv", d.csv_path, f"csv:{d.csv_delimiter}", _columns(d.csv_targets), _columns(d.csv_features), d.csv_skip_rows
        )
        x, y = load_table(d.csv_path, entry)
        return x, y, d.csv_path
    manifest = load_manifest()
    if name not in manifest:
        raise KeyError(f"unknown dataset {name!r}; known: toy, bump, csv, {', '.join(sorted(manifest))}")
    kwargs = {} if transport is None else {"transport": transport}
    path, _ = fetch(manifest[name], cache_dir, **kwargs)
    x, y = load_table(path, manifest[name])
    return x, y, manifest[name].url


# --- one run -------------------------------------------------------------------


@dataclass
class RunResult:
    dataset: str
    shift: int
    variant: str
    trial: int
    seed: int
    metrics: MetricRecord = None
    model: object = None
    log: TrainLog = None
    train: Dataset = None
    test: Dataset = None
    pseudo_inputs: np.ndarray = None
    extra: dict = field(default_factory=dict)


def _init_heads_at_prior(model: VvRegressor, prior: GammaParams):
    """Zero the last layer of the uncertainty nets and bias them to the prior."""
    inv = lambda v: np.log(np.expm1(v))
    for net, value in ((model.alpha_net, np.asarray(prior.shape) - 1.0), (model.beta_net, np.asarray(prior.rate))):
        last = net.n_layers - 1
        net.params[f"W{last}"][:] = 0.0
        net.params[f"b{last}"][:] = inv(value)


def build_prior(cfg: ExperimentConfig, y_train, residual_ms):
    p = cfg.prior
    if p.mode == "fixed":
        return GammaParams(p.shape, p.rate)
    if p.mode == "toy":
        return select_prior("toy", float(np.mean(np.std(y_train, axis=0))))
    return select_prior("empirical", float(residual_ms))


def run_variant(cfg: ExperimentConfig, train: Dataset, test: Dataset, variant, rngs, probes=None):
    """Train one variant on standardized folds and evaluate it."""
    t = cfg.train
    d_in, d_out = train.x.shape[1], train.y.shape[1]
    hidden = (t.hidden,) * t.layers
    rng_init = _fresh(rngs["init"])
    result = {}
    if variant == "mvn":
        model = MeanVarianceNet(d_in, d_out, hidden, rng_init)
        losses = []
        train_mvn(model, train.x, train.y, t.mvn_epochs, t.mvn_lr, t.batch_size, _fresh(rngs["stage1"]), losses)
        log = TrainLog(stage1=losses)
    else:
        model = VvRegressor(d_in, d_out, hidden, rng=rng_init)
        log = TrainLog()
        fit_mean(model.mu_net, train.x, train.y, t.stage1_epochs, t.stage1_lr, t.batch_size, _fresh(rngs["stage1"]), log.stage1)
        resid = train.y - model.mu_net(train.x)
        model.prior = build_prior(cfg, train.y, float(np.mean(resid * resid)))
        if t.head_init == "prior":
            _init_heads_at_prior(model, model.prior)
        dcfg = DissipativeConfig(
            prior=model.prior,
            pig=cfg.pig,
            variant=variant if variant != "d-vv" or cfg.ood.source != "none" else "vv",
            stage1_epochs=t.stage1_epochs,
            stage1_lr=t.stage1_lr,
            stage2_epochs=t.stage2_epochs,
            stage2_lr=t.stage2_lr,
            batch_size=t.batch_size,
            freeze_mean=t.freeze_mean,
            pig_per_epoch=t.pig_per_epoch,
        )
        density, fixed_ood = None, None
        if dcfg.variant == "d-vv":
            if cfg.ood.source == "far":
                fixed_ood = far_ood(train.x, cfg.ood.far_sigma, _fresh(rngs["density"]))
            else:
                k = cfg.density_k or min(len(train.x), t.batch_size)
                density = gmm_fit(train.x, k, _fresh(rngs["density"]), cfg.density)
                result["density_components"] = density.n_components
        fit_uncertainty(model, train.x, train.y, dcfg, density, _fresh(rngs["stage2"]), log, fixed_ood=fixed_ood)
    if probes is None:
        probes = make_probes(test.x, _fresh(rngs["probes"]), cfg.pig, cfg.density, cfg.eval.probe_k, cfg.eval.probe_far_sigma)
    boundary, far = probes
    metrics = compute_metrics(model, test.x, test.y, boundary, _fresh(rngs["metrics"]), probe_far=far, variant=variant)
    return model, log, metrics, result


def _fresh(rng):
    """A new generator on the same seed, so reuse of a stream never shares state."""
    return np.random.default_rng(rng.bit_generator.seed_seq)


def make_folds(cfg: ExperimentConfig, x, y, shift, rngs, name, provenance=""):
    if shift >= 0:
        sp = make_shift_splits(x)[shift]
        tr, te = sp.train, sp.test
    else:
        tr, te = random_split(len(x), cfg.data.train_fraction, _fresh(rngs["split"]))
    return standardize_split(name, x, y, tr, te, provenance)


def run_cell(cfg: ExperimentConfig, dataset, shift, variant, trial, cache_dir=None, raw=None):
    master = cfg.seeds[0]
    rngs = streams(master, trial)
    if raw is None:
        raw = load_raw(cfg, dataset, cache_dir, _fresh(rngs["data"]))
    x, y, prov = raw
    train, test = make_folds(cfg, x, y, shift, rngs, dataset, prov)
    model, log, metrics, extra = run_variant(cfg, train, test, variant, rngs)
    metrics = replace(metrics, seed=master)
    return RunResult(dataset, shift, variant, trial, master, metrics, model, log, train, test, log.pseudo_inputs, extra)


# --- toy diagnostics ---------------------------------------------------------


def outside_probes(train: Dataset, cfg: ExperimentConfig):
    """Points between outside_min and outside_max input-std beyond the data range (1-d)."""
    e = cfg.eval
    x = train.x[:, 0]
    half = e.outside_n // 2
    left = np.linspace(x.min() - e.outside_max, x.min() - e.outside_min, half)
    right = np.linspace(x.max() + e.outside_min, x.max() + e.outside_max, e.outside_n - half)
    return np.concatenate([left, right])[:, None]


def toy_diagnostics(model, train: Dataset, cfg: ExperimentConfig):
    """Prior KL, variance ratio and epistemic factor at outside probes."""
    probe = outside_probes(train, cfg)
    pred_out = predict(model, probe)
    pred_in = predict(model, train.x)
    out = {}
    if isinstance(model, VvRegressor):
        prior = model.prior
        _, q = model.posterior(probe)
        prior_var = float(np.asarray(prior.rate) / (np.asarray(prior.shape) - 1.0))
        out["outside_kl"] = float(np.mean(gamma_kl(q, prior)))
        out["prior_variance"] = prior_var
        rel = np.abs(pred_out.variance - prior_var) / prior_var
        out["outside_var_rel_err_mean"] = float(np.mean(rel))
        out["outside_var_rel_err_max"] = float(np.max(rel))
        out["outside_epistemic_mean"] = float(np.mean(pred_out.epistemic))
        out["inside_epistemic_mean"] = float(np.mean(pred_in.epistemic))
    return out


def plot_grid(model, train: Dataset, n=200, margin=None):
    """Rows of (x, mean, lo, hi, aleatoric, epistemic, prior_kl) over a 1-d or 2-d grid."""
    d = train.x.shape[1]
    if d > 2:
        raise ValueError("plot grids are only emitted for 1-d or 2-d inputs")
    margin = 6.0 if margin is None else margin
    lo, hi = train.x.min(axis=0) - margin, train.x.max(axis=0) + margin
    if d == 1:
        grid = np.linspace(lo[0], hi[0], n)[:, None]
    else:
        m = int(math.sqrt(n)) or 1
        g0, g1 = np.meshgrid(np.linspace(lo[0], hi[0], m), np.linspace(lo[1], hi[1], m), indexing="ij")
        grid = np.column_stack([g0.ravel(), g1.ravel()])
    pred = predict(model, grid)
    std = np.sqrt(pred.variance[:, 0])
    if isinstance(model, VvRegressor):
        _, q = model.posterior(grid)
        kl = gamma_kl(q, model.prior)[:, 0]
    else:
        kl = np.full(len(grid), math.nan)
    cols = [grid[:, j] for j in range(d)]
    cols += [pred.mean[:, 0], pred.mean[:, 0] - 2 * std, pred.mean[:, 0] + 2 * std, pred.aleatoric[:, 0], pred.epistemic[:, 0], kl]
    names = [f"x{j}" for j in range(d)] + ["mean", "lo2std", "hi2std", "aleatoric", "epistemic", "prior_kl"]
    return names, np.column_stack(cols)


# --- output helpers ------------------------------------------------------------


def provenance_header(cfg: ExperimentConfig, seed):
    return {"config_hash": cfg.hash(), "master_seed": int(seed), "version": __version__}


def atomic_write_text(path, text):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".part")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def json_text(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default, allow_nan=True) + "\n"


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def csv_text(names, rows, header):
    lines = [f"# {k}={v}" for k, v in sorted(header.items())]
    lines.append(",".join(names))
    for r in rows:
        lines.append(",".join(repr(float(v)) for v in r))
    return "\n".join(lines) + "\n"


# --- benchmark -----------------------------------------------------------------


def benchmark_cells(cfg: ExperimentConfig, dims):
    """All (dataset, shift, variant, trial) tuples; ``dims`` maps dataset -> d."""
    cells = []
    for ds in cfg.datasets or (cfg.data.name,):
        shifts = []
        if cfg.shift in ("none", "both"):
            shifts.append(-1)
        if cfg.shift in ("only", "both"):
            shifts.extend(range(dims[ds]))
        for shift in shifts:
            for variant in cfg.variants:
                for trial in range(cfg.n_trials):
                    cells.append((ds, shift, variant, trial))
    return cells


def _cell_worker(args):
    cfg, cell, cache_dir = args
    ds, shift, variant, trial = cell
    try:
        res = run_cell(cfg, ds, shift, variant, trial, cache_dir)
        row = {"status": "ok", **res.metrics.to_dict()}
    except Exception as exc:  # partial failures are recorded, the sweep goes on
        row = {"status": f"failed: {type(exc).__name__}: {exc}".replace(",", ";").replace("\n", " ")}
        row.update({k: math.nan for k in ("elbo", "loglik", "rmse_mean", "rmse_var", "rmse_sample", "ood_kl", "ood_kl_far")})
        row["seed"] = cfg.seeds[0]
    row.update({"dataset": ds, "shift": shift, "variant": variant, "trial": trial})
    return row


def run_benchmark(cfg: ExperimentConfig, dims, cache_dir=None, jobs=1, cell_dir=None):
    """Run every cell; rows come back sorted by cell regardless of ``jobs``."""
    cells = benchmark_cells(cfg, dims)
    args = [(cfg, c, cache_dir) for c in cells]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_cell_worker, args))
    else:
        rows = [_cell_worker(a) for a in args]
    if cell_dir is not None:
        for row in rows:
            name = f"{row['dataset']}_s{row['shift']}_{row['variant']}_t{row['trial']}.json"
            atomic_write_text(os.path.join(cell_dir, name), json_text(row))
    return rows
