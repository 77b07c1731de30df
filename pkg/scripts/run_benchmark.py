"""Run a transfer grid preset and print mean AUC per method and per pair.

    python scripts/run_benchmark.py --preset benchmark --out runs/benchmark
"""

import argparse
import logging
import time

import numpy as np

from dropout_transfer.config import load_config
from dropout_transfer.experiment import run


def method_means(rows):
    methods = sorted({r.method for r in rows})
    return {m: float(np.nanmean([r.auc for r in rows if r.method == m])) for m in methods}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--preset", default="benchmark", help="preset name or JSON config path")
    p.add_argument("--out", default="runs/benchmark")
    p.add_argument("--parallel", type=int, default=1)
    args = p.parse_args()
    logging.basicConfig(level=logging.WARNING)

    start = time.perf_counter()
    outcome = run(load_config(args.preset), args.out, parallel=args.parallel)
    elapsed = time.perf_counter() - start

    print(f"{len(outcome.results)} rows in {elapsed / 60:.1f} min, {len(outcome.failures)} failed cells")
    for m, v in sorted(method_means(outcome.results).items(), key=lambda kv: -kv[1]):
        print(f"  {m:16s} {v:.4f}")
    for pair in sorted({(r.source, r.target) for r in outcome.results if r.source}):
        rows = [r for r in outcome.results if (r.source, r.target) == pair]
        cells = " ".join(f"{m}={v:.3f}" for m, v in method_means(rows).items())
        print(f"  {pair[0]}->{pair[1]}: {cells}")
    return outcome.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
