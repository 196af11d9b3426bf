"""Finite enumeration and brute-force verification.

Everything here works by exhaustion over small systems: the complete lists of
states, effects, transformations and tests, an admissibility test that pushes
every state through a candidate 0/1 matrix (optionally tensored with an
identity on an ancilla), decomposition searches for atomicity, and sweeps over
families of closed circuits for determinism.
"""

from __future__ import annotations

import os
import random
from dataclasses import dataclass, field
from itertools import combinations, product
from typing import Any, Iterable, Iterator, Sequence

import numpy as np

from . import circuit as C
from . import demos
from .circuit import CHAN, OBS, PREP, Test
from .kernel import (
    EffectEvent,
    Event,
    InvalidEvent,
    OptError,
    StateEvent,
    SystemType,
    TRIVIAL,
    TransformationEvent,
    apply,
    as_vector,
    compose_par,
    from_vector,
    marginalize,
    pair,
    recover_cells,
    sum_events,
    support,
    systems_of,
)

DEFAULT_CAP = 10**6


class CapExceeded(OptError):
    pass


def enumeration_cap(cap: int | None = None) -> int:
    if cap is not None:
        return cap
    env = os.environ.get("OPTLAB_ENUM_CAP")
    return int(env) if env else DEFAULT_CAP


def _guard(count: int, cap: int | None, what: str):
    limit = enumeration_cap(cap)
    if count > limit:
        raise CapExceeded(f"{what}: {count} items exceed the enumeration cap {limit}")


@dataclass
class TheoryReport:
    """Outcome of one property check."""

    property: str
    systems: tuple[str, ...]
    holds: bool
    witness: Any = None
    work: int = 0
    details: dict = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        return "holds" if self.holds else "fails"

    def __bool__(self):
        return self.holds

    def to_dict(self) -> dict:
        return {
            "property": self.property,
            "systems": list(self.systems),
            "verdict": self.verdict,
            "witness": _plain(self.witness),
            "work": self.work,
            "details": _plain(self.details),
        }

    def __str__(self):
        lines = [f"{self.property} on {', '.join(self.systems)}: {self.verdict} ({self.work} cases checked)"]
        for key, value in self.details.items():
            lines.append(f"  {key}: {_plain(value)}")
        if self.witness is not None:
            lines.append("  witness:")
            w = _plain(self.witness)
            items = w.items() if isinstance(w, dict) else [("value", w)]
            for key, value in items:
                lines.append(f"    {key}: {value}")
        return "\n".join(lines)


def _plain(x):
    """JSON-ready view; events print in the DSL literal syntax."""
    if isinstance(x, Test):
        return {"label": x.label, "kind": x.kind, "events": [str(e) for e in x.events]}
    if isinstance(x, (StateEvent, EffectEvent, TransformationEvent, SystemType)):
        return str(x)
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, (np.integer, np.bool_)):
        return x.item()
    return x


# -- counting and enumeration ------------------------------------------------


def count_states(sys: SystemType) -> int:
    return (sys.m + 1) ** sys.n


def count_effects(sys: SystemType) -> int:
    return sys.n * (2**sys.m - 1) + 1


def count_transformations(inp: SystemType, out: SystemType) -> int:
    return (1 + inp.n * ((out.m + 1) ** inp.m - 1)) ** out.n


def count_channels(inp: SystemType, out: SystemType) -> int:
    return (inp.n * out.m**inp.m) ** out.n


def enumerate_states(sys: SystemType, cap: int | None = None) -> list[StateEvent]:
    """All states including the zero state, zero first."""
    _guard(count_states(sys), cap, f"states of {sys}")
    out = []
    for choice in product([None, *range(sys.m)], repeat=sys.n):
        out.append(StateEvent(sys, tuple((i, v) for i, v in enumerate(choice) if v is not None)))
    return out


def enumerate_deterministic_states(sys: SystemType, cap: int | None = None) -> list[StateEvent]:
    _guard(sys.m**sys.n, cap, f"deterministic states of {sys}")
    return [StateEvent(sys, tuple(enumerate(f))) for f in product(range(sys.m), repeat=sys.n)]


def enumerate_effects(sys: SystemType, cap: int | None = None) -> list[EffectEvent]:
    """All effects including the zero effect, zero first."""
    _guard(count_effects(sys), cap, f"effects of {sys}")
    out = [EffectEvent(sys)]
    for v in range(sys.n):
        for mask in range(1, 2**sys.m):
            out.append(EffectEvent(sys, v, frozenset(j for j in range(sys.m) if mask >> j & 1)))
    return out


def enumerate_deterministic_effects(sys: SystemType, cap: int | None = None) -> list[EffectEvent]:
    _guard(sys.n, cap, f"deterministic effects of {sys}")
    return [EffectEvent(sys, v, frozenset(range(sys.m))) for v in range(sys.n)]


def _columns(n: int, m: int, q: int) -> list[tuple]:
    # every admissible pattern of cells feeding one output pointer
    cols: list[tuple] = [()]
    for a in range(n):
        for choice in product([None, *range(q)], repeat=m):
            if any(w is not None for w in choice):
                cols.append(tuple((s1, a, w) for s1, w in enumerate(choice) if w is not None))
    return cols


def enumerate_transformations(inp: SystemType, out: SystemType, cap: int | None = None) -> list[TransformationEvent]:
    """All transformations including zero, generated column by column."""
    _guard(count_transformations(inp, out), cap, f"transformations {inp} -> {out}")
    cols = _columns(inp.n, inp.m, out.m)
    return [
        TransformationEvent(inp, out, tuple(((s1, t), (a, w)) for t, col in enumerate(choice) for s1, a, w in col))
        for choice in product(cols, repeat=out.n)
    ]


def enumerate_channels(inp: SystemType, out: SystemType, cap: int | None = None) -> list[TransformationEvent]:
    _guard(count_channels(inp, out), cap, f"channels {inp} -> {out}")
    per_t = list(product(range(inp.n), product(range(out.m), repeat=inp.m)))
    return [
        TransformationEvent(inp, out, tuple(((s1, t), (a, ws[s1])) for t, (a, ws) in enumerate(choice) for s1 in range(inp.m)))
        for choice in product(per_t, repeat=out.n)
    ]


def atomic_states(sys: SystemType) -> list[StateEvent]:
    return [StateEvent(sys, ((s, t),)) for s in range(sys.n) for t in range(sys.m)]


def atomic_effects(sys: SystemType) -> list[EffectEvent]:
    return [EffectEvent(sys, s, frozenset((t,))) for s in range(sys.n) for t in range(sys.m)]


def atomic_transformations(inp: SystemType, out: SystemType) -> list[TransformationEvent]:
    return [
        TransformationEvent(inp, out, (((s1, t), (s, t1)),))
        for s, s1, t, t1 in product(range(inp.n), range(inp.m), range(out.n), range(out.m))
    ]


def set_partitions(items: Sequence) -> Iterator[list[list]]:
    """Unordered set partitions, blocks ordered by their first element."""
    items = list(items)
    if not items:
        yield []
        return

    def grow(k: int, labels: list[int], top: int):
        if k == len(items):
            blocks: list[list] = [[] for _ in range(top)]
            for item, lab in zip(items, labels):
                blocks[lab].append(item)
            yield blocks
            return
        for lab in range(top + 1):
            yield from grow(k + 1, labels + [lab], max(top, lab + 1))

    yield from grow(1, [0], 1)


def bell(k: int) -> int:
    row = [1]
    for _ in range(k):
        nxt = [row[-1]]
        for x in row:
            nxt.append(nxt[-1] + x)
        row = nxt
    return row[0]


def enumerate_prep_tests(sys: SystemType, cap: int | None = None) -> list[Test]:
    """Preparation tests without zero outcomes, up to outcome relabelling."""
    _guard(sys.m**sys.n * bell(sys.n), cap, f"preparation tests on {sys}")
    out = []
    for f in product(range(sys.m), repeat=sys.n):
        for blocks in set_partitions(range(sys.n)):
            out.append(Test("P", PREP, tuple(StateEvent(sys, tuple((i, f[i]) for i in b)) for b in blocks)))
    return out


def enumerate_obs_tests(sys: SystemType, cap: int | None = None) -> list[Test]:
    _guard(sys.n * bell(sys.m), cap, f"observation tests on {sys}")
    out = []
    for v in range(sys.n):
        for blocks in set_partitions(range(sys.m)):
            out.append(Test(f"D{v}", OBS, tuple(EffectEvent(sys, v, frozenset(b)) for b in blocks)))
    return out


def enumerate_chan_tests(inp: SystemType, out: SystemType, cap: int | None = None) -> list[Test]:
    _guard(count_channels(inp, out) * bell(inp.m * out.n), cap, f"transformation tests {inp} -> {out}")
    tests = []
    for ch in enumerate_channels(inp, out):
        for blocks in set_partitions(ch.cells):
            tests.append(Test("T", CHAN, tuple(TransformationEvent(inp, out, tuple(b)) for b in blocks)))
    return tests


# -- admissibility -----------------------------------------------------------


def _as_matrix(matrix, inp: SystemType, out: SystemType) -> np.ndarray:
    arr = np.asarray(matrix, dtype=np.int64)
    if arr.size != inp.dim * out.dim:
        raise ValueError(f"matrix has {arr.size} entries, expected {inp.dim} x {out.dim}")
    if (arr < 0).any():
        raise ValueError("negative coefficient: not in the cone of events")
    return arr.reshape(inp.dim, out.dim)


def _state_rows(sys: SystemType, cap: int | None) -> np.ndarray:
    return np.array([as_vector(s) for s in enumerate_states(sys, cap)], dtype=np.int64)


def _images_valid(images: np.ndarray, p: int, q: int) -> np.ndarray:
    # images: (..., K, p*q); True where every image is a valid state
    shaped = images.reshape(images.shape[:-1] + (p, q))
    ok = (images <= 1).all(axis=-1) & (shaped.sum(axis=-1) <= 1).all(axis=-1)
    return ok.all(axis=-1)


def brute_force_admissible(matrix, inp: SystemType, out: SystemType, cap: int | None = None) -> int:
    """1 iff the linear map sends every state of ``inp`` to a state of ``out``."""
    M = _as_matrix(matrix, inp, out)
    images = _state_rows(inp, cap) @ M
    return int(_images_valid(images, out.n, out.m))


def admissible_batch(matrices: np.ndarray, inp: SystemType, out: SystemType, cap: int | None = None) -> np.ndarray:
    """Vectorised :func:`brute_force_admissible` over ``(N, dim_in, dim_out)``."""
    S = _state_rows(inp, cap)
    images = np.einsum("ki,nij->nkj", S, matrices)
    return _images_valid(images, out.n, out.m)


def _ancilla_rows(inp: SystemType, anc: SystemType, cap: int | None) -> np.ndarray:
    # composite states regrouped so that each row holds the (s, s') block at fixed ancilla (u, u')
    joint = inp * anc
    R = _state_rows(joint, cap).reshape(-1, inp.n, anc.n, inp.m, anc.m)
    return R.transpose(0, 2, 4, 1, 3).reshape(-1, inp.dim)


def ancilla_admissible_batch(matrices: np.ndarray, inp: SystemType, out: SystemType, anc: SystemType,
                             cap: int | None = None, chunk_entries: int = 20_000_000) -> np.ndarray:
    """Admissibility of ``T (x) id_anc`` on every state of ``inp * anc``.

    Images have nonnegative integer entries, so an image is a valid state iff
    the sum over values at each composite output pointer ``(t, u)`` is at most
    one. Those sums are linear in both the state and ``T``, so they are formed
    directly: sum the state block over the ancilla value and ``T`` over the
    output value, then multiply.
    """
    R = _ancilla_rows(inp, anc, cap).reshape(-1, anc.n, anc.m, inp.dim).sum(axis=2)
    R = np.unique(R.reshape(-1, inp.dim), axis=0).astype(np.float32)
    N = matrices.shape[0]
    step = max(1, chunk_entries // (R.shape[0] * out.n))
    result = np.empty(N, dtype=bool)
    for lo in range(0, N, step):
        block = matrices[lo:lo + step]
        b = block.shape[0]
        M = block.reshape(b, inp.dim, out.n, out.m).sum(axis=3).transpose(1, 0, 2).reshape(inp.dim, b * out.n)
        sums = (R @ M.astype(np.float32)).reshape(R.shape[0], b, out.n)
        result[lo:lo + b] = (sums <= 1).all(axis=(0, 2))
    return result


def ancilla_admissible(matrix, inp: SystemType, out: SystemType, anc: SystemType, cap: int | None = None) -> int:
    M = _as_matrix(matrix, inp, out)
    return int(ancilla_admissible_batch(M[None], inp, out, anc, cap)[0])


@dataclass(frozen=True)
class Recovery:
    ok: bool
    event: TransformationEvent | None = None
    reason: str = ""

    def __bool__(self):
        return self.ok


def structural_recover(matrix, inp: SystemType, out: SystemType) -> Recovery:
    """Bring a 0/1 matrix into canonical (omega, f, g) form, or say why not."""
    M = _as_matrix(matrix, inp, out)
    if (M > 1).any():
        return Recovery(False, reason="coefficient above 1")
    m, q = inp.m, out.m
    rows, cols = np.nonzero(M)
    entries = [(int(r) // m, int(r) % m, int(c) // q, int(c) % q) for r, c in zip(rows, cols)]
    cells, reason = recover_cells(entries)
    if cells is None:
        return Recovery(False, reason=reason)
    T = TransformationEvent(inp, out, cells)
    if as_vector(T) != tuple(M.reshape(-1).tolist()):
        return Recovery(False, reason="rebuilt matrix differs")
    return Recovery(True, T)


def all_matrices(inp: SystemType, out: SystemType, cap: int | None = None, chunk: int = 1 << 14):
    """Yield ``(offset, batch)`` covering every 0/1 matrix of the given shape."""
    size = inp.dim * out.dim
    total = 1 << size
    _guard(total, cap, f"0/1 matrices {inp} -> {out}")
    bits = np.arange(size, dtype=np.int64)
    for lo in range(0, total, chunk):
        codes = np.arange(lo, min(total, lo + chunk), dtype=np.int64)
        batch = ((codes[:, None] >> bits) & 1).reshape(-1, inp.dim, out.dim)
        yield lo, batch


def admissibility_equivalence(inp: SystemType, out: SystemType, anc: SystemType, cap: int | None = None) -> TheoryReport:
    """Structural form, local admissibility and ancilla admissibility agree on every 0/1 matrix."""
    accepted = 0
    mismatch = None
    checked = 0
    accepted_vectors = set()
    for lo, batch in all_matrices(inp, out, cap):
        local = admissible_batch(batch, inp, out, cap)
        wide = ancilla_admissible_batch(batch, inp, out, anc, cap)
        for k in range(batch.shape[0]):
            rec = structural_recover(batch[k], inp, out)
            verdicts = (bool(rec), bool(local[k]), bool(wide[k]))
            checked += 1
            if len(set(verdicts)) > 1 and mismatch is None:
                mismatch = {"matrix": batch[k].reshape(-1).tolist(), "structural": verdicts[0],
                            "local": verdicts[1], "ancilla": verdicts[2]}
            if rec:
                accepted += 1
                accepted_vectors.add(as_vector(rec.event))
    enumerated = {as_vector(T) for T in enumerate_transformations(inp, out, cap)}
    same_set = enumerated == accepted_vectors
    return TheoryReport(
        "admissibility-equivalence",
        (str(inp), str(out), f"ancilla {anc}"),
        mismatch is None and same_set,
        mismatch,
        checked,
        {"accepted": accepted, "enumerated": len(enumerated), "enumeration matches": same_set},
    )


def integer_rank(vectors: Sequence[Sequence[int]]) -> int:
    import sympy

    return sympy.Matrix([list(v) for v in vectors]).rank()


# -- atomicity ---------------------------------------------------------------


def _event_from_support(template: Event, indices: Iterable[int]) -> Event | None:
    inp, out = systems_of(template)
    if isinstance(template, TransformationEvent):
        vec = [0] * (inp.dim * out.dim)
        kind, sys, other = TransformationEvent, inp, out
    else:
        kind, sys, other = type(template), template.system, None
        vec = [0] * sys.dim
    for k in indices:
        vec[k] = 1
    try:
        return from_vector(kind, vec, sys, other)
    except InvalidEvent:
        return None


def _ambient(event: Event, cap: int | None) -> list[Event] | None:
    inp, out = systems_of(event)
    limit = enumeration_cap(cap)
    if isinstance(event, StateEvent):
        return enumerate_states(event.system) if count_states(event.system) <= limit else None
    if isinstance(event, EffectEvent):
        return enumerate_effects(event.system) if count_effects(event.system) <= limit else None
    return enumerate_transformations(inp, out) if count_transformations(inp, out) <= limit else None


def check_atomicity(event: Event, ambient: Sequence[Event] | None = None, cap: int | None = None) -> TheoryReport:
    """Atomic iff no two nonzero valid events of the same type sum to ``event``.

    With an enumerable ambient set the search runs over it; otherwise every
    split of the event's support is tested for validity of both halves.
    """
    sup = frozenset(support(event))
    name = type(event).__name__
    inp, out = systems_of(event)
    systems = (str(inp), str(out))
    if not sup:
        return TheoryReport("atomicity", systems, False, {"reason": "zero event"}, 0)
    if ambient is None:
        ambient = _ambient(event, cap)
    work = 0
    if ambient is not None:
        by_support = {frozenset(support(x)): x for x in ambient}
        for s, x in by_support.items():
            work += 1
            if s and s < sup and (sup - s) in by_support:
                return TheoryReport("atomicity", systems, False, {"parts": [x, by_support[sup - s]]}, work,
                                    {"kind": name, "search": "ambient"})
        return TheoryReport("atomicity", systems, True, None, work, {"kind": name, "search": "ambient"})
    items = sorted(sup)
    if len(items) > 24:
        raise CapExceeded(f"support of size {len(items)} is too large to split exhaustively")
    head, tail = items[0], items[1:]
    for r in range(len(tail)):
        for extra in combinations(tail, r):
            work += 1
            left = (head, *extra)
            right = sorted(sup - set(left))
            x, y = _event_from_support(event, left), _event_from_support(event, right)
            if x is not None and y is not None:
                return TheoryReport("atomicity", systems, False, {"parts": [x, y]}, work,
                                    {"kind": name, "search": "support splits"})
    return TheoryReport("atomicity", systems, True, None, work, {"kind": name, "search": "support splits"})


# -- local discriminability --------------------------------------------------


def check_local_discriminability(A: SystemType, B: SystemType, cap: int | None = None) -> TheoryReport:
    """Every two distinct states of ``A B`` differ on some product of local effects."""
    states = enumerate_states(A * B, cap)
    effects = [compose_par(a, b) for a in enumerate_effects(A, cap) for b in enumerate_effects(B, cap)]
    seen: dict[tuple[int, ...], StateEvent] = {}
    work = 0
    for rho in states:
        signature = tuple(pair(e, rho) for e in effects)
        work += len(effects)
        if signature in seen:
            return TheoryReport("local-discriminability", (str(A), str(B)), False,
                                {"states": [seen[signature], rho]}, work,
                                {"states": len(states), "product effects": len(effects)})
        seen[signature] = rho
    return TheoryReport("local-discriminability", (str(A), str(B)), True, None, work,
                        {"states": len(states), "product effects": len(effects),
                         "state pairs": len(states) * (len(states) - 1) // 2})


# -- causality ---------------------------------------------------------------


def is_causal(sys: SystemType) -> bool:
    return len(enumerate_deterministic_effects(sys)) == 1


def _prep_marginal(P: Test, D: Test) -> tuple[int, ...]:
    return tuple(sum(pair(d, rho) for d in D.events) for rho in P.events)


def find_causality_witness(sys: SystemType, cap: int | None = None):
    """Search preparation tests and pairs of observation tests for a dependence."""
    preps = enumerate_prep_tests(sys, cap)
    observations = enumerate_obs_tests(sys, cap)
    work = 0
    for P in preps:
        for a, b in combinations(observations, 2):
            work += 1
            pa, pb = _prep_marginal(P, a), _prep_marginal(P, b)
            if pa != pb:
                return {"preparation": P, "observations": [a, b], "probabilities": [pa, pb]}, work
    return None, work


def check_causality(sys: SystemType, cap: int | None = None) -> TheoryReport:
    """Holds iff the system has a unique deterministic effect.

    When it fails, the witness is a preparation test whose outcome-0
    probability is 1 under one observation test and 0 under another,
    computed through the circuit evaluator.
    """
    det = enumerate_deterministic_effects(sys, cap)
    details = {"deterministic effects": len(det)}
    if len(det) == 1:
        witness, work = find_causality_witness(sys, cap)
        details["searched triples"] = work
        return TheoryReport("causality", (str(sys),), witness is None, witness, work, details)
    f = demos.ALICE_F if (sys.n, sys.m) == (2, 2) else tuple(i % sys.m for i in range(sys.n))
    P = demos.alice_preparation(sys, f)
    tests = [demos.pointer_test(0, sys), demos.pointer_test(1, sys)]
    probabilities = []
    for D in tests:
        c = C.chain(P, D, ids=("P", "D"))
        probabilities.append(C.marginal_probability(c, "P", 0))
    witness = {"preparation": P, "observations": tests, "outcome": 0, "probabilities": probabilities}
    return TheoryReport("causality", (str(sys),), False, witness, 2, details)


# -- determinism -------------------------------------------------------------


def _config_key(states: Iterable[StateEvent]) -> tuple:
    return tuple(sorted((s for s in states if s.assignment), key=lambda s: s.assignment))


def _check_config(config: tuple, obs_tests: Sequence[Test]) -> tuple[bool, Any]:
    for D in obs_tests:
        values = [pair(e, s) for s in config for e in D.events]
        if any(v not in (0, 1) for v in values) or sum(values) != 1:
            return False, {"branch states": list(config), "observation": D, "values": values}
    return True, None


def _joint_ok(dist: dict) -> bool:
    values = list(dist.values())
    return all(v in (0, 1) for v in values) and sum(values) == 1


def random_test(rng: random.Random, kind: str, inp: SystemType, out: SystemType, max_outcomes: int = 3) -> Test:
    """A random test whose events partition a random deterministic event."""
    if kind == PREP:
        cells = [(i, rng.randrange(out.m)) for i in range(out.n)]
        make = lambda part: StateEvent(out, part)
    elif kind == OBS:
        v = rng.randrange(inp.n)
        cells = list(range(inp.m))
        make = lambda part: EffectEvent(inp, v, frozenset(part))
    else:
        anchors = [rng.randrange(inp.n) for _ in range(out.n)]
        cells = [((s1, t), (anchors[t], rng.randrange(out.m))) for t in range(out.n) for s1 in range(inp.m)]
        make = lambda part: TransformationEvent(inp, out, part)
    k = rng.randint(1, min(max_outcomes, len(cells)))
    labels = [rng.randrange(k) for _ in cells]
    parts = [[c for c, lab in zip(cells, labels) if lab == j] for j in range(k)]
    events = [make(p) for p in parts if p]
    if rng.random() < 0.1:
        events.append(make([]))
    rng.shuffle(events)
    return Test(kind.upper(), kind, tuple(events))


def random_circuit(rng: random.Random, max_nodes: int = 6, max_size: int = 3) -> C.Circuit:
    """A random closed circuit of tests on systems with ``n, m <= max_size``."""

    def system():
        return SystemType.of(rng.randint(1, max_size), rng.randint(1, max_size))

    nodes: list[C.Node] = []
    wires: list[C.Wire] = []
    open_ports: list[tuple[tuple[str, int], SystemType]] = []

    def add(kind, inputs, outputs):
        nid = f"{len(nodes):02d}"
        inp = SystemType(sum((s.factors for _, s in inputs), ()))
        out = SystemType(sum((s.factors for s in outputs), ()))
        test = random_test(rng, kind, inp, out)
        nodes.append(C.Node(nid, test, tuple(s for _, s in inputs), tuple(outputs)))
        for j, (port, _) in enumerate(inputs):
            wires.append(C.Wire(port, (nid, j)))
        for j, s in enumerate(outputs):
            open_ports.append(((nid, j), s))

    for _ in range(rng.randint(1, 2)):
        add(PREP, [], [system() for _ in range(rng.randint(1, 2))])
    while open_ports and len(nodes) < max_nodes - 1 and rng.random() < 0.75:
        k = rng.randint(1, min(2, len(open_ports)))
        picked = rng.sample(open_ports, k)
        for p in picked:
            open_ports.remove(p)
        n_out = rng.randint(0, 2)
        add(OBS if n_out == 0 else CHAN, picked, [system() for _ in range(n_out)])
    while open_ports:
        if len(nodes) < max_nodes - 1 and len(open_ports) > 1:
            picked = open_ports[:1]
        else:
            picked = list(open_ports)
        for p in picked:
            open_ports.remove(p)
        add(OBS, picked, [])
    return C.Circuit(tuple(nodes), tuple(wires))


def check_determinism(sys: SystemType, depth: int = 3, random_circuits: int = 0, seed: int = 0,
                      direct_depth: int = -1, max_nodes: int = 6, max_size: int = 3,
                      cap: int | None = None) -> TheoryReport:
    """Closed-circuit probabilities are 0/1 and each joint distribution sums to 1.

    The bounded family is every circuit ``prep-test ; d chan-tests ; obs-test``
    on ``sys`` with ``d <= depth``. Circuits are swept stage by stage; two
    prefixes that leave the same multiset of nonzero branch states have
    identical continuations, so each multiset is expanded once and the number
    of circuits it stands for is carried along. Circuits with
    ``d <= direct_depth`` are additionally built and evaluated one by one
    through :func:`optlab.circuit.joint_distribution`. Random circuits
    (arbitrary DAG shapes) are evaluated the same way.
    """
    preps = enumerate_prep_tests(sys, cap)
    chans = enumerate_chan_tests(sys, sys, cap) if depth > 0 else []
    observations = enumerate_obs_tests(sys, cap)
    configs: dict[tuple, int] = {}
    for P in preps:
        key = _config_key(P.events)
        configs[key] = configs.get(key, 0) + 1
    covered = 0
    expanded = 0
    per_depth = []
    for d in range(depth + 1):
        for config, mult in configs.items():
            ok, bad = _check_config(config, observations)
            expanded += 1
            if not ok:
                return TheoryReport("determinism", (str(sys),), False, {"depth": d, **bad}, covered)
            covered += mult * len(observations)
        per_depth.append({"depth": d, "circuits": sum(configs.values()) * len(observations),
                          "distinct branch configurations": len(configs)})
        if d == depth:
            break
        nxt: dict[tuple, int] = {}
        for config, mult in configs.items():
            for T in chans:
                key = _config_key(apply(e, s) for s in config for e in T.events)
                nxt[key] = nxt.get(key, 0) + mult
        configs = nxt

    direct = 0
    for d in range(min(direct_depth, depth) + 1):
        for P in preps:
            for middle in product(chans, repeat=d):
                for D in observations:
                    dist = C.joint_distribution(C.chain(P, *middle, D))
                    direct += 1
                    if not _joint_ok(dist):
                        return TheoryReport("determinism", (str(sys),), False,
                                            {"circuit": [P, *middle, D], "distribution": dist}, covered + direct)

    rng = random.Random(seed)
    for k in range(random_circuits):
        c = random_circuit(rng, max_nodes, max_size)
        dist = C.joint_distribution(c)
        if not _joint_ok(dist):
            return TheoryReport("determinism", (str(sys),), False,
                                {"random circuit": k, "seed": seed, "distribution": dist}, covered + direct + k)
    details = {
        "family": f"prep ; up to {depth} chan ; obs",
        "preparation tests": len(preps),
        "transformation tests": len(chans),
        "observation tests": len(observations),
        "circuits covered": covered,
        "configurations expanded": expanded,
        "per depth": per_depth,
        "circuits evaluated directly": direct,
        "random circuits": random_circuits,
        "seed": seed,
    }
    return TheoryReport("determinism", (str(sys),), True, None, covered + direct + random_circuits, details)


# -- signaling without interaction -------------------------------------------


@dataclass(frozen=True)
class SignalingWitness:
    marginals: tuple[StateEvent, ...]
    choices: tuple[int, int]
    test: Test
    distributions: tuple[tuple[int, ...], tuple[int, ...]]


def alice_marginal(eps: StateEvent, bob_test: Test, factor: int = 1) -> StateEvent:
    """Remaining state when ``bob_test`` runs on ``factor`` and its outcome is ignored."""
    return sum_events([marginalize(eps, factor, b) for b in bob_test.events])


def signaling_witness(eps: StateEvent, bob_tests: Sequence[Test], factor: int = 1,
                      alice_tests: Sequence[Test] | None = None) -> SignalingWitness | None:
    if not all(len(t.events) and t.kind == OBS for t in bob_tests):
        raise InvalidEvent("Bob's tests must be observation tests")
    marginals = tuple(alice_marginal(eps, t, factor) for t in bob_tests)
    pairs = [(i, j) for i, j in combinations(range(len(marginals)), 2) if marginals[i] != marginals[j]]
    if not pairs:
        return None
    i, j = pairs[0]
    if alice_tests is None:
        alice_tests = enumerate_obs_tests(marginals[i].system)
    for D in alice_tests:
        di = tuple(pair(a, marginals[i]) for a in D.events)
        dj = tuple(pair(a, marginals[j]) for a in D.events)
        if di != dj:
            return SignalingWitness(marginals, (i, j), D, (di, dj))
    return None


def signaling_scan(A: SystemType, B: SystemType, bob_tests: Sequence[Test] | None = None,
                   cap: int | None = None) -> list[StateEvent]:
    """Deterministic states of ``A B`` through which Bob's choice reaches Alice."""
    if bob_tests is None:
        bob_tests = enumerate_obs_tests(B, cap)
    return [eps for eps in enumerate_deterministic_states(A * B, cap) if signaling_witness(eps, bob_tests) is not None]


def signaling_demo() -> tuple[list[str], SignalingWitness]:
    eps = demos.bob_state()
    D0, D1 = demos.pointer_test(0), demos.pointer_test(1)
    w = signaling_witness(eps, [D0, D1])
    lines = [
        "Alice and Bob each hold a 2|>2 system.",
        f"Shared deterministic state eps = sum_st alpha_(s,t) x alpha_(t,s) = {eps}",
        f"Bob's tests: D0 = {{{', '.join(map(str, D0.events))}}}, D1 = {{{', '.join(map(str, D1.events))}}}",
        f"Alice's marginal when Bob runs D0: {w.marginals[0]}  (eps_h0, h0 = 0)",
        f"Alice's marginal when Bob runs D1: {w.marginals[1]}  (eps_h1, h1 = 1)",
        f"Alice runs {w.test.label} = {{{', '.join(map(str, w.test.events))}}}:",
        f"  outcome probabilities {w.distributions[0]} if Bob chose D0, {w.distributions[1]} if Bob chose D1",
        "Bob's choice is visible to Alice without any interaction: no-signaling without interaction fails.",
    ]
    return lines, w


def alice_demo() -> list[str]:
    P = demos.alice_preparation()
    lines = [
        f"Alice prepares 2|>2 with P = {{{', '.join(map(str, P.events))}}} (alpha_(f, {{i}}), f = {demos.ALICE_F}).",
    ]
    for v in (0, 1):
        D = demos.pointer_test(v)
        c = C.chain(P, D, ids=("P", "D"))
        marg = C.marginal_distribution(c, "P")
        lines.append(f"Observation D{v} = {{{', '.join(map(str, D.events))}}}: "
                     f"P(alpha_(f,{{0}}) | D{v}) = {marg[0]}, P(alpha_(f,{{1}}) | D{v}) = {marg[1]}")
    lines.append("The preparation probabilities depend on the later choice of observation: the theory is not causal.")
    return lines
