"""Command-line entry point: ``python -m pigreg <command> ...``.

Commands: fetch-data, train, benchmark, pig-demo. Exit codes are 0 on
success, 1 on a runtime failure and 2 on a usage or config error.
"""

import argparse
import os
import sys

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, dump_config, load_config, with_overrides
from .data import CACHE_ENV, FetchError, ParseError, default_cache_dir, fetch, load_manifest
from .density import DimensionError, gmm_fit, gmm_pdf
from .evaluation import METRICS, aggregate, best_and_draws, records_to_csv
from .experiment import (
    _fresh,
    atomic_write_text,
    csv_text,
    json_text,
    load_raw,
    make_folds,
    plot_grid,
    provenance_header,
    run_benchmark,
    run_cell,
    streams,
    toy_diagnostics,
)
from .pig import generate, init_from_data, pseudo_input_density_report
from .vvmodel import TrainingDivergedError

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _err(msg):
    print(f"error: {msg}", file=sys.stderr)


def _config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg = with_overrides(cfg, seed=args.seed, out_dir=args.out)
    return cfg.validate()


def _cache_dir(args):
    return args.cache_dir or default_cache_dir()


# --- fetch-data ----------------------------------------------------------------


def cmd_fetch_data(args, transport=None):
    manifest = load_manifest()
    names = args.names or sorted(manifest)
    unknown = [n for n in names if n not in manifest]
    if unknown:
        raise UsageError(f"unknown dataset(s): {', '.join(unknown)}; known: {', '.join(sorted(manifest))}")
    cache = _cache_dir(args)
    kwargs = {} if transport is None else {"transport": transport}
    failed = 0
    for name in names:
        try:
            path, hit = fetch(manifest[name], cache, **kwargs)
        except FetchError as exc:
            failed += 1
            print(f"{name}: FAILED: {exc}")
            continue
        print(f"{name}: {'cache hit' if hit else 'downloaded'} {path}")
    return EXIT_RUNTIME if failed else EXIT_OK


# --- train -----------------------------------------------------------------------


def _metrics_json(cfg, seed, res, extra):
    doc = provenance_header(cfg, seed)
    doc.update({"dataset": res.dataset, "variant": res.variant, "metrics": res.metrics.to_dict(), "extra": extra})
    return json_text(doc)


def cmd_train(args):
    cfg = _config(args)
    cache = _cache_dir(args)
    for seed in cfg.seeds:
        one = with_overrides(cfg, seed=seed)
        for variant in cfg.variants:
            out = os.path.join(cfg.out_dir, f"seed{seed}", variant)
            shift = 0 if cfg.shift == "only" else -1  # train uses the first feature's shift split
            res = run_cell(one, cfg.data.name, shift, variant, 0, cache)
            head = provenance_header(one, seed)
            extra = dict(res.extra)
            if res.train.dim == 1:
                extra.update(toy_diagnostics(res.model, res.train, one))
            ckpt = dict(head)
            ckpt["model"] = res.model.to_dict()
            ckpt["standardization"] = {
                k: getattr(res.train, k).tolist() for k in ("x_mean", "x_std", "y_mean", "y_std")
            }
            ckpt["config"] = dump_config(one)
            atomic_write_text(os.path.join(out, "checkpoint.json"), json_text(ckpt))
            atomic_write_text(os.path.join(out, "metrics.json"), _metrics_json(one, seed, res, extra))
            rows = [(0, i, v) for i, v in enumerate(res.log.stage1)] + [(1, i, v) for i, v in enumerate(res.log.stage2)]
            atomic_write_text(os.path.join(out, "loss.csv"), csv_text(["stage", "epoch", "loss"], rows, head))
            if res.pseudo_inputs is not None:
                names = [f"x{j}" for j in range(res.train.dim)]
                atomic_write_text(os.path.join(out, "pseudo_inputs.csv"), csv_text(names, res.pseudo_inputs, head))
            if res.train.dim <= 2:
                names, grid = plot_grid(res.model, res.train)
                atomic_write_text(os.path.join(out, "plot.csv"), csv_text(names, grid, head))
            m = res.metrics
            print(f"seed {seed} {variant}: " + " ".join(f"{k}={getattr(m, k):.4f}" for k in METRICS) + f" -> {out}")
    return EXIT_OK


# --- benchmark ------------------------------------------------------------------


def _dims(cfg, cache):
    dims = {}
    for ds in cfg.datasets or (cfg.data.name,):
        if cfg.shift == "none":
            dims[ds] = 0
            continue
        x, _, _ = load_raw(cfg, ds, cache, _fresh(streams(cfg.seeds[0], 0)["data"]))
        dims[ds] = x.shape[1]
    return dims


def cmd_benchmark(args):
    cfg = _config(args)
    cache = _cache_dir(args)
    dims = _dims(cfg, cache)
    out = cfg.out_dir
    rows = run_benchmark(cfg, dims, cache, jobs=max(1, args.jobs), cell_dir=os.path.join(out, "cells"))
    head = provenance_header(cfg, cfg.seeds[0])
    head_lines = [f"{k}={v}" for k, v in sorted(head.items())]
    atomic_write_text(os.path.join(out, "raw.csv"), records_to_csv(rows, head_lines))
    table = aggregate(rows)
    lines = [f"# {ln}" for ln in head_lines] + ["dataset,shifted,variant,metric,mean,std,n"]
    for r in table:
        lines.append(f"{r['dataset']},{int(r['shifted'])},{r['variant']},{r['metric']},{r['mean']!r},{r['std']!r},{r['n']}")
    atomic_write_text(os.path.join(out, "aggregate.csv"), "\n".join(lines) + "\n")
    counts = best_and_draws(table, cfg.variants)
    atomic_write_text(os.path.join(out, "aggregate.json"), json_text({**head, "table": table, "best_and_draws": counts}))
    for m in METRICS:
        print(f"{m}: " + " ".join(f"{v}={b}/{d}" for v, (b, d) in counts[m].items()))
    failed = [r for r in rows if r["status"] != "ok"]
    for r in failed:
        print(f"cell {r['dataset']} shift={r['shift']} {r['variant']} trial={r['trial']}: {r['status']}", file=sys.stderr)
    print(f"{len(rows) - len(failed)}/{len(rows)} cells ok -> {out}")
    return EXIT_RUNTIME if failed else EXIT_OK


# --- pig-demo ---------------------------------------------------------------------


def cmd_pig_demo(args):
    cfg = _config(args)
    cache = _cache_dir(args)
    seed = cfg.seeds[0]
    rngs = streams(seed, 0)
    x, y, prov = load_raw(cfg, cfg.data.name, cache, _fresh(rngs["data"]))
    if x.shape[1] > 2:
        raise UsageError(f"pig-demo needs 1-d or 2-d inputs; {cfg.data.name} has d={x.shape[1]}")
    train, _ = make_folds(cfg, x, y, -1, rngs, cfg.data.name, prov)
    k = cfg.density_k or min(train.n, cfg.train.batch_size)
    density = gmm_fit(train.x, k, _fresh(rngs["density"]), cfg.density)
    before = init_from_data(train.x, cfg.pig.count, _fresh(rngs["stage2"]))
    result = generate(density, before, cfg.pig)
    report = pseudo_input_density_report(density, before, result.points)
    head = provenance_header(cfg, seed)
    names = [f"x{j}" for j in range(train.dim)]
    out = cfg.out_dir
    atomic_write_text(os.path.join(out, "train.csv"), csv_text(names, train.x, head))
    atomic_write_text(os.path.join(out, "before.csv"), csv_text(names, before, head))
    atomic_write_text(os.path.join(out, "after.csv"), csv_text(names, result.points, head))
    lo, hi = train.x.min(axis=0) - 3.0, train.x.max(axis=0) + 3.0
    if train.dim == 1:
        grid = np.linspace(lo[0], hi[0], 200)[:, None]
    else:
        g0, g1 = np.meshgrid(np.linspace(lo[0], hi[0], 60), np.linspace(lo[1], hi[1], 60), indexing="ij")
        grid = np.column_stack([g0.ravel(), g1.ravel()])
    dens = np.column_stack([grid, gmm_pdf(density, grid)])
    atomic_write_text(os.path.join(out, "density_grid.csv"), csv_text(names + ["density"], dens, head))
    doc = {**head, **report, "iterations": result.iterations, "final_eps": result.final_eps, "components": density.n_components}
    atomic_write_text(os.path.join(out, "report.json"), json_text(doc))
    print(f"pig-demo: {result.iterations} iterations, mean density {report['mean_density_before']:.4g} -> {report['mean_density_after']:.4g} -> {out}")
    return EXIT_OK


# --- entry point ------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="pigreg", description="Variational variance regression with pseudo-input training.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="INI config file (defaults are used when omitted)")
            sp.add_argument("--seed", type=int, help="override the master seed")
            sp.add_argument("--out", help="output directory (overrides out_dir)")
        sp.add_argument("--cache-dir", help=f"dataset cache (default ${CACHE_ENV} or ~/.cache/pigreg)")

    f = sub.add_parser("fetch-data", help="download and checksum datasets from the manifest")
    f.add_argument("names", nargs="*", help="dataset names (default: all)")
    common(f, config=False)
    t = sub.add_parser("train", help="train the configured variants and write checkpoints and metrics")
    common(t)
    b = sub.add_parser("benchmark", help="run a dataset x variant x trial sweep and aggregate")
    common(b)
    b.add_argument("--jobs", type=int, default=1, help="parallel cells")
    d = sub.add_parser("pig-demo", help="emit pseudo-inputs before and after generation for a 1-d or 2-d dataset")
    common(d)
    return p


COMMANDS = {"fetch-data": cmd_fetch_data, "train": cmd_train, "benchmark": cmd_benchmark, "pig-demo": cmd_pig_demo}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        _err(exc)
        return EXIT_USAGE
    except TrainingDivergedError as exc:
        _err(f"training diverged: {exc}")
        return EXIT_RUNTIME
    except (FetchError, ParseError, KeyError, DimensionError, OSError, ValueError) as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
