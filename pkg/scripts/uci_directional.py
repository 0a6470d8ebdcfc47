"""d-VV vs VV on UCI datasets: prior KL at boundary probes and test ELBO.

    python scripts/uci_directional.py --datasets boston wine-red --trials 5
    python scripts/uci_directional.py --datasets boston --shifted
"""

import argparse
import time
from dataclasses import replace

from pigreg.config import load_config
from pigreg.evaluation import aggregate, draw_test
from pigreg.experiment import run_benchmark


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--datasets", nargs="+", default=["boston", "wine-red"])
    ap.add_argument("--trials", type=int, default=5)
    ap.add_argument("--shifted", action="store_true", help="use the per-feature shift splits")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--cache-dir", default=None)
    args = ap.parse_args()
    for name in args.datasets:
        cfg = load_config(f"configs/{name}.ini")
        cfg = replace(cfg, variants=("d-vv", "vv"), n_trials=args.trials, shift="only" if args.shifted else "none")
        dims = {name: 0}
        if args.shifted:
            from pigreg.experiment import load_raw

            dims[name] = load_raw(cfg, name, args.cache_dir)[0].shape[1]
        t0 = time.time()
        rows = run_benchmark(cfg, dims, args.cache_dir, jobs=args.jobs)
        cell = {(r["variant"], r["metric"]): r for r in aggregate(rows)}
        for metric in ("ood_kl", "elbo"):
            a, b = cell[("d-vv", metric)], cell[("vv", metric)]
            draw, z = draw_test(a["mean"], a["std"], a["n"], b["mean"], b["std"], b["n"])
            print(f"{name}{' (shifted)' if args.shifted else ''} {metric}: d-vv {a['mean']:.4f}±{a['std']:.4f} "
                  f"vv {b['mean']:.4f}±{b['std']:.4f} z={z:.2f} {'draw' if draw else 'not a draw'}")
        print(f"{name}: {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
