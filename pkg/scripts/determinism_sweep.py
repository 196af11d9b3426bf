"""Bounded determinism sweep: prep ; up to D chan tests ; obs, plus random circuits."""

import argparse
import time

from optlab.cli import system_arg
from optlab.oracles import check_determinism


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--system", type=system_arg, default="2x2")
    ap.add_argument("--depth", type=int, default=3)
    ap.add_argument("--direct-depth", type=int, default=1,
                    help="also build and evaluate each circuit up to this depth one by one")
    ap.add_argument("--random", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()
    t0 = time.perf_counter()
    report = check_determinism(args.system, depth=args.depth, direct_depth=args.direct_depth,
                               random_circuits=args.random, seed=args.seed)
    print(report)
    print(f"elapsed {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
