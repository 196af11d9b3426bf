"""Compare structural recovery, local admissibility and ancilla admissibility on every 0/1 matrix."""

import argparse
import time

from optlab.cli import system_arg
from optlab.oracles import admissibility_equivalence


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--input", type=system_arg, default="2x2")
    ap.add_argument("--output", type=system_arg, default="2x2")
    ap.add_argument("--ancilla", type=system_arg, action="append",
                    help="repeatable; default runs 2x2 and 2x3")
    args = ap.parse_args()
    for anc in args.ancilla or [system_arg("2x2"), system_arg("2x3")]:
        t0 = time.perf_counter()
        print(admissibility_equivalence(args.input, args.output, anc))
        print(f"elapsed {time.perf_counter() - t0:.1f}s\n")


if __name__ == "__main__":
    main()
