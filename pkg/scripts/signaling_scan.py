"""Which deterministic states of A B let Bob's choice of observation reach Alice?"""

import argparse
from optlab.cli import system_arg
from optlab.demos import bob_state
from optlab.kernel import SystemType, compose_par
from optlab.oracles import enumerate_deterministic_states, signaling_demo, signaling_scan


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--alice", type=system_arg, default="2x2")
    ap.add_argument("--bob", type=system_arg, default="2x2")
    ap.add_argument("--list", action="store_true", help="print every signaling state")
    args = ap.parse_args()
    A, B = args.alice, args.bob
    total = len(enumerate_deterministic_states(A * B))
    hits = signaling_scan(A, B)
    print(f"{len(hits)} of {total} deterministic states of {A * B} admit a signaling witness")
    products = {compose_par(x, y) for x in enumerate_deterministic_states(A) for y in enumerate_deterministic_states(B)}
    print(f"product states among them: {len(products & set(hits))} of {len(products)}")
    if (A, B) == (SystemType.of(2, 2), SystemType.of(2, 2)):
        print("shared state of the worked example among them:", bob_state() in hits)
        print()
        print("\n".join(signaling_demo()[0]))
    if args.list:
        for s in hits:
            print(s)


if __name__ == "__main__":
    main()
