"""Run the experiment configs under configs/ and print their metric tables.

    python scripts/run_experiments.py                 # every config
    python scripts/run_experiments.py tau_sweep drx_compare --out results
"""
import argparse
import sys
import time
from pathlib import Path

from drxcast.experiments import load_config, run_experiment

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("names", nargs="*", help="config names without .cfg (default: all)")
    ap.add_argument("--out", type=Path, default=ROOT / "results")
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args(argv)

    paths = sorted((ROOT / "configs").glob("*.cfg"))
    if args.names:
        paths = [ROOT / "configs" / f"{n}.cfg" for n in args.names]
    for p in paths:
        cfg = load_config(p, workers=args.workers, seed=args.seed)
        t0 = time.perf_counter()
        res = run_experiment(cfg, args.out / p.stem)
        print(f"== {p.stem}: {cfg.kind} over {cfg.axis}, {cfg.repetitions} reps, "
              f"{time.perf_counter() - t0:.0f} s -> {args.out / p.stem}")
        for (scheme, axis, value, metric), (mean, std, n) in sorted(res.table.rows.items()):
            if metric.startswith(("correct_", "actual_", "cdf@")):
                continue
            print(f"  {scheme:12s} {axis}={value:<6s} {metric:18s} {mean:12.4f} +- {std:.4f} (n={n})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
