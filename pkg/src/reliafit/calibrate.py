"""Monte Carlo calibration of the Cramer-von Mises critical values.

Under a power-law process the scaled times ``z_i**beta`` are sorted
uniforms, and the statistic computed with the unbiased shape estimate is
pivotal: its distribution depends on m alone. Each (m, block) pair gets its
own seed, so the table does not depend on how blocks are scheduled.
"""
from __future__ import annotations

import argparse
import csv
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

M_VALUES = tuple(range(3, 21)) + (30, 60, 100)
LEVELS = (0.01, 0.05, 0.10, 0.20)
BLOCK = 10_000
BASE_SEED = 20140301


def simulate_block(m: int, block: int, size: int = BLOCK, base_seed: int = BASE_SEED) -> np.ndarray:
    rng = np.random.default_rng([base_seed, m, block])
    z = np.sort(rng.random((size, m)), axis=1)
    z = np.clip(z, np.finfo(float).tiny, None)
    beta_bar = (m - 1) / -np.log(z).sum(axis=1)
    i = np.arange(1, m + 1)
    target = (2 * i - 1) / (2 * m)
    return 1.0 / (12 * m) + ((z ** beta_bar[:, None] - target) ** 2).sum(axis=1)


def _quantiles(args):
    m, n_blocks, base_seed = args
    stats = np.concatenate([simulate_block(m, b, base_seed=base_seed) for b in range(n_blocks)])
    return m, {a: float(np.quantile(stats, 1 - a)) for a in LEVELS}


def calibrate(replicates: int = 200_000, base_seed: int = BASE_SEED, workers: int = 1):
    n_blocks = -(-replicates // BLOCK)
    jobs = [(m, n_blocks, base_seed) for m in M_VALUES]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_quantiles, jobs))
    else:
        results = [_quantiles(j) for j in jobs]
    return dict(results)


def write_table(table, out) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["m", "significance", "critical_value"])
    for m in sorted(table):
        for a in LEVELS:
            writer.writerow([m, f"{a:.2f}", f"{table[m][a]:.6f}"])


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--replicates", type=int, default=200_000)
    parser.add_argument("--seed", type=int, default=BASE_SEED)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--out", default="-")
    args = parser.parse_args(argv)
    table = calibrate(args.replicates, args.seed, args.workers)
    if args.out == "-":
        write_table(table, sys.stdout)
    else:
        with open(args.out, "w", newline="") as fh:
            write_table(table, fh)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
