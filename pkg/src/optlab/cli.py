"""``optlab`` command line.

Exit codes: 0 success or property holds, 1 usage/parse/semantic error,
2 property fails, 3 enumeration cap exceeded.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from typing import Sequence

from . import dsl, oracles
from .kernel import OptError, SystemType

OK, ERROR, FAILS, CAP = 0, 1, 2, 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def system_arg(text: str) -> SystemType:
    """``NxM`` (or ``N|>M``) to a system."""
    mt = re.fullmatch(r"\s*(\d+)\s*(?:x|\|>)\s*(\d+)\s*", text)
    if not mt or int(mt.group(1)) < 1 or int(mt.group(2)) < 1:
        raise argparse.ArgumentTypeError(f"bad system {text!r}, expected NxM with N, M >= 1")
    return SystemType.of(int(mt.group(1)), int(mt.group(2)))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="optlab", description="Exact evaluation and exhaustive checks for n|>m systems.")
    p.add_argument("--json", action="store_true", help="emit one JSON document instead of text")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("eval", help="run the eval statements of a .opt file")
    e.add_argument("file")

    en = sub.add_parser("enumerate", help="list every event of a kind")
    en.add_argument("--system", type=system_arg, required=True)
    en.add_argument("--kind", choices=("states", "effects", "transforms"), required=True)
    en.add_argument("--out", type=system_arg, help="output system for transforms (default: --system)")

    c = sub.add_parser("check", help="run a property oracle")
    c.add_argument("property", choices=("causality", "determinism", "local-disc", "admissibility-equiv"))
    c.add_argument("--system", type=system_arg, default=SystemType.of(2, 2))
    c.add_argument("--out", type=system_arg, help="output system (admissibility-equiv)")
    c.add_argument("--depth", type=int, default=3, help="max transformation tests per circuit (determinism)")
    c.add_argument("--ancilla", type=system_arg,
                   help="ancilla system (admissibility-equiv) or second party (local-disc); default --system")
    c.add_argument("--random", type=int, default=0, help="extra random circuits (determinism)")
    c.add_argument("--seed", type=int, default=0)

    d = sub.add_parser("demo", help="narrated worked examples")
    d.add_argument("name", choices=("alice", "signaling"))

    k = sub.add_parser("count", help="closed-form counts only")
    k.add_argument("--system", type=system_arg, required=True)
    k.add_argument("--out", type=system_arg)
    return p


def _emit(out, as_json: bool, doc: dict, lines: list[str]):
    if as_json:
        out.write(json.dumps(doc, sort_keys=True) + "\n")
    else:
        out.write("".join(line + "\n" for line in lines))


def _eval(args, out) -> int:
    try:
        with open(args.file, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise _UsageError(f"cannot read {args.file}: {exc.strerror}")
    try:
        model = dsl.load(text)
    except dsl.DslError as exc:
        for d in exc.diagnostics:
            sys.stderr.write(f"{args.file}:{d}\n")
        return ERROR
    results = dsl.execute(model)
    lines = [line for r in results for line in r.lines()]
    _emit(out, args.json, {"file": args.file, "results": [r.to_dict() for r in results]}, lines)
    return OK


def _enumerate(args, out) -> int:
    s = args.system
    if args.kind == "states":
        items, label = oracles.enumerate_states(s), f"states of {s}"
    elif args.kind == "effects":
        items, label = oracles.enumerate_effects(s), f"effects of {s}"
    else:
        o = args.out or s
        items, label = oracles.enumerate_transformations(s, o), f"transformations {s} -> {o}"
    texts = [str(x) for x in items]
    _emit(out, args.json, {"kind": args.kind, "label": label, "count": len(texts), "items": texts},
          texts + [f"# {len(texts)} {label}"])
    return OK


def _check(args, out) -> int:
    s = args.system
    if args.property == "causality":
        report = oracles.check_causality(s)
    elif args.property == "determinism":
        if args.depth < 0:
            raise _UsageError("--depth must be >= 0")
        report = oracles.check_determinism(s, depth=args.depth, random_circuits=args.random, seed=args.seed)
    elif args.property == "local-disc":
        report = oracles.check_local_discriminability(s, args.ancilla or s)
    else:
        report = oracles.admissibility_equivalence(s, args.out or s, args.ancilla or s)
    _emit(out, args.json, report.to_dict(), str(report).splitlines())
    return OK if report.holds else FAILS


def _demo(args, out) -> int:
    if args.name == "alice":
        lines = oracles.alice_demo()
        doc = {"demo": "alice", "transcript": lines}
    else:
        lines, w = oracles.signaling_demo()
        doc = {"demo": "signaling", "transcript": lines,
               "marginals": [str(m) for m in w.marginals], "test": w.test.label,
               "distributions": [list(d) for d in w.distributions]}
    _emit(out, args.json, doc, lines)
    return OK


def _count(args, out) -> int:
    s, o = args.system, args.out or args.system
    counts = {
        "states": oracles.count_states(s),
        "deterministic states": s.m**s.n,
        "atomic states": s.n * s.m,
        "effects": oracles.count_effects(s),
        "deterministic effects": s.n,
        "atomic effects": s.n * s.m,
        "transformations": oracles.count_transformations(s, o),
        "channels": oracles.count_channels(s, o),
        "atomic transformations": s.n * s.m * o.n * o.m,
    }
    lines = [f"system {s}, output {o}"] + [f"{k}: {v}" for k, v in counts.items()]
    _emit(out, args.json, {"system": str(s), "out": str(o), "counts": counts}, lines)
    return OK


_COMMANDS = {"eval": _eval, "enumerate": _enumerate, "check": _check, "demo": _demo, "count": _count}


def run(argv: Sequence[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.command](args, out)
    except _UsageError as exc:
        sys.stderr.write(f"optlab: error: {exc}\n")
        return ERROR
    except oracles.CapExceeded as exc:
        sys.stderr.write(f"optlab: {exc}\n")
        return CAP
    except OptError as exc:
        sys.stderr.write(f"optlab: {exc}\n")
        return ERROR


def main(argv: Sequence[str] | None = None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
