"""Tests wired into circuits, and exact evaluation of closed and open diagrams.

A circuit is a DAG of nodes. Each node carries either a :class:`Test` (an
ordered list of events, one per outcome) or a single event, and has typed
input/output ports. Evaluation sweeps the nodes in topological order while
keeping one composite frontier state per live outcome branch; branches that
become the zero state are dropped, since zero annihilates everything after it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from itertools import product
from typing import Iterable, Mapping, Sequence, Union

from . import kernel
from .kernel import (
    Event,
    EffectEvent,
    OptError,
    StateEvent,
    SystemType,
    TransformationEvent,
    as_transformation,
    is_deterministic,
    narrow,
    sum_events,
    systems_of,
)

PREP, OBS, CHAN = "prep", "obs", "chan"
_KIND_OF = {StateEvent: PREP, EffectEvent: OBS, TransformationEvent: CHAN}


class CircuitError(OptError):
    pass


class OutcomeError(CircuitError):
    pass


class InvalidTest(kernel.InvalidEvent):
    pass


@dataclass(frozen=True)
class Test:
    """An elementary operation; outcome ``i`` yields ``events[i]``.

    The events must coarse-grain (sum) to a deterministic event.
    """

    __test__ = False  # not a pytest class

    label: str
    kind: str
    events: tuple[Event, ...]

    def __post_init__(self):
        events = tuple(self.events)
        object.__setattr__(self, "events", events)
        if not events:
            raise InvalidTest(f"test {self.label!r} has no outcomes")
        kinds = {_KIND_OF[type(e)] for e in events}
        if kinds != {self.kind}:
            raise InvalidTest(f"test {self.label!r} declared {self.kind} but holds {sorted(kinds)} events")
        try:
            total = sum_events(events)
        except kernel.InvalidEvent as exc:
            raise InvalidTest(f"test {self.label!r}: {exc}") from exc
        if not is_deterministic(total):
            raise InvalidTest(f"test {self.label!r}: events do not sum to deterministic")

    @property
    def input(self) -> SystemType:
        return systems_of(self.events[0])[0]

    @property
    def output(self) -> SystemType:
        return systems_of(self.events[0])[1]

    @property
    def coarse(self) -> Event:
        return sum_events(self.events)

    def __len__(self):
        return len(self.events)


Payload = Union[Test, StateEvent, EffectEvent, TransformationEvent]


def _io(payload: Payload) -> tuple[SystemType, SystemType]:
    if isinstance(payload, Test):
        return payload.input, payload.output
    return systems_of(payload)


def _product(ports: Sequence[SystemType]) -> SystemType:
    out = SystemType()
    for p in ports:
        out = out * p
    return out


@dataclass(frozen=True)
class Node:
    """A box; ports default to one per factor of the payload's systems."""

    id: str
    payload: Payload
    inputs: tuple[SystemType, ...] | None = None
    outputs: tuple[SystemType, ...] | None = None

    def __post_init__(self):
        inp, out = _io(self.payload)
        object.__setattr__(self, "inputs", tuple(inp.split() if self.inputs is None else self.inputs))
        object.__setattr__(self, "outputs", tuple(out.split() if self.outputs is None else self.outputs))

    @property
    def is_test(self) -> bool:
        return isinstance(self.payload, Test)

    def event(self, outcome: int | None = None) -> Event:
        if not self.is_test:
            return self.payload
        if outcome is None:
            raise OutcomeError(f"node {self.id!r} needs an outcome")
        if not 0 <= outcome < len(self.payload):
            raise OutcomeError(f"outcome {outcome} out of range for node {self.id!r}")
        return self.payload.events[outcome]


Port = tuple[str, int]


@dataclass(frozen=True)
class Wire:
    src: Port
    dst: Port


@dataclass(frozen=True)
class Circuit:
    """Nodes plus wires; ``inputs``/``outputs`` fix the order of dangling ports."""

    nodes: tuple[Node, ...]
    wires: tuple[Wire, ...] = ()
    inputs: tuple[Port, ...] | None = None
    outputs: tuple[Port, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "wires", tuple(Wire(tuple(w.src), tuple(w.dst)) for w in self.wires))
        if self.inputs is None:
            fed = {w.dst for w in self.wires}
            ins = tuple((n.id, j) for n in self.nodes for j in range(len(n.inputs)) if (n.id, j) not in fed)
            object.__setattr__(self, "inputs", ins)
        if self.outputs is None:
            used = {w.src for w in self.wires}
            outs = tuple((n.id, j) for n in self.nodes for j in range(len(n.outputs)) if (n.id, j) not in used)
            object.__setattr__(self, "outputs", outs)
        object.__setattr__(self, "inputs", tuple(tuple(p) for p in self.inputs))
        object.__setattr__(self, "outputs", tuple(tuple(p) for p in self.outputs))

    @cached_property
    def by_id(self) -> dict[str, Node]:
        return {n.id: n for n in self.nodes}

    def node(self, node_id: str) -> Node:
        try:
            return self.by_id[node_id]
        except KeyError:
            raise CircuitError(f"unknown node {node_id!r}") from None

    @property
    def test_ids(self) -> list[str]:
        return sorted(n.id for n in self.nodes if n.is_test)

    def port_system(self, port: Port, side: str) -> SystemType:
        node = self.node(port[0])
        return (node.inputs if side == "in" else node.outputs)[port[1]]

    @property
    def input_system(self) -> SystemType:
        return _product([self.port_system(p, "in") for p in self.inputs])

    @property
    def output_system(self) -> SystemType:
        return _product([self.port_system(p, "out") for p in self.outputs])


# -- building ----------------------------------------------------------------


def single(node_id: str, payload: Payload) -> Circuit:
    return Circuit((Node(node_id, payload),))


def seq(left: Circuit, right: Circuit) -> Circuit:
    """Feed every open output of ``left`` into the open inputs of ``right``, in order."""
    if len(left.outputs) != len(right.inputs):
        raise CircuitError(f"arity mismatch: {len(left.outputs)} outputs feed {len(right.inputs)} inputs")
    wires = list(left.wires) + list(right.wires)
    for src, dst in zip(left.outputs, right.inputs):
        a, b = left.port_system(src, "out"), right.port_system(dst, "in")
        if not a.matches(b):
            raise CircuitError(f"type mismatch on wire {src} -> {dst}: {a} vs {b}")
        wires.append(Wire(src, dst))
    return Circuit(left.nodes + right.nodes, tuple(wires), left.inputs, right.outputs)


def par(left: Circuit, right: Circuit) -> Circuit:
    return Circuit(left.nodes + right.nodes, left.wires + right.wires,
                   left.inputs + right.inputs, left.outputs + right.outputs)


def chain(*payloads: Payload, ids: Sequence[str] | None = None) -> Circuit:
    """Linear circuit ``payloads[0] ; payloads[1] ; ...``."""
    ids = list(ids) if ids is not None else [f"{k:02d}" for k in range(len(payloads))]
    out = single(ids[0], payloads[0])
    for node_id, payload in zip(ids[1:], payloads[1:]):
        out = seq(out, single(node_id, payload))
    return out


def rename(c: Circuit, mapping: Mapping[str, str]) -> Circuit:
    def port(p):
        return (mapping.get(p[0], p[0]), p[1])

    return Circuit(
        tuple(replace(n, id=mapping.get(n.id, n.id)) for n in c.nodes),
        tuple(Wire(port(w.src), port(w.dst)) for w in c.wires),
        tuple(port(p) for p in c.inputs),
        tuple(port(p) for p in c.outputs),
    )


def replace_payload(c: Circuit, node_id: str, payload: Payload) -> Circuit:
    old = c.node(node_id)
    inp, out = _io(payload)
    if not (inp.matches(_product(old.inputs)) and out.matches(_product(old.outputs))):
        raise CircuitError(f"replacement for {node_id!r} has type {inp} -> {out}")
    nodes = tuple(replace(n, payload=payload) if n.id == node_id else n for n in c.nodes)
    return Circuit(nodes, c.wires, c.inputs, c.outputs)


# -- static checks -----------------------------------------------------------


def typecheck(c: Circuit) -> list[str]:
    """Return the wiring errors of ``c``; an empty list means well-typed."""
    errors: list[str] = []
    ids = [n.id for n in c.nodes]
    for dup in sorted({i for i in ids if ids.count(i) > 1}):
        errors.append(f"duplicate node id {dup!r}")
    nodes = {n.id: n for n in c.nodes}
    for n in c.nodes:
        inp, out = _io(n.payload)
        if not inp.matches(_product(n.inputs)):
            errors.append(f"node {n.id!r}: input ports {_product(n.inputs)} do not match payload input {inp}")
        if not out.matches(_product(n.outputs)):
            errors.append(f"node {n.id!r}: output ports {_product(n.outputs)} do not match payload output {out}")

    def port_ok(port, side, label):
        node = nodes.get(port[0])
        if node is None:
            errors.append(f"wire {label}: unknown node {port[0]!r}")
            return None
        ports = node.outputs if side == "out" else node.inputs
        if not 0 <= port[1] < len(ports):
            errors.append(f"wire {label}: node {port[0]!r} has no {side}put port {port[1]}")
            return None
        return ports[port[1]]

    used_src, used_dst = set(), set()
    for w in c.wires:
        label = f"{w.src[0]}.{w.src[1]} -> {w.dst[0]}.{w.dst[1]}"
        a, b = port_ok(w.src, "out", label), port_ok(w.dst, "in", label)
        if a is not None and b is not None and not a.matches(b):
            errors.append(f"wire {label}: type mismatch {a} vs {b}")
        if w.src in used_src:
            errors.append(f"wire {label}: output port used twice")
        if w.dst in used_dst:
            errors.append(f"wire {label}: input port used twice")
        used_src.add(w.src)
        used_dst.add(w.dst)

    if not errors and _topological(c) is None:
        errors.append("wiring has a cycle")
    if not errors:
        fed = {w.dst for w in c.wires}
        dangling_in = {(n.id, j) for n in c.nodes for j in range(len(n.inputs)) if (n.id, j) not in fed}
        dangling_out = {(n.id, j) for n in c.nodes for j in range(len(n.outputs)) if (n.id, j) not in used_src}
        if set(c.inputs) != dangling_in or len(c.inputs) != len(dangling_in):
            errors.append("declared inputs differ from the dangling input ports")
        if set(c.outputs) != dangling_out or len(c.outputs) != len(dangling_out):
            errors.append("declared outputs differ from the dangling output ports")
    return errors


def is_closed(c: Circuit) -> bool:
    return not c.inputs and not c.outputs


def _topological(c: Circuit) -> list[str] | None:
    preds = {n.id: set() for n in c.nodes}
    for w in c.wires:
        preds[w.dst[0]].add(w.src[0])
    order: list[str] = []
    ready = sorted(i for i, p in preds.items() if not p)
    remaining = {i: set(p) for i, p in preds.items() if p}
    while ready:
        i = ready.pop(0)
        order.append(i)
        newly = []
        for j, p in remaining.items():
            p.discard(i)
            if not p:
                newly.append(j)
        for j in newly:
            del remaining[j]
        ready = sorted(ready + newly)
    return None if remaining else order


def topological_order(c: Circuit) -> list[str]:
    order = _topological(c)
    if order is None:
        raise CircuitError("wiring has a cycle")
    return order


def precedes_immediately(c: Circuit, a: str, b: str) -> bool:
    c.node(a), c.node(b)
    return any(w.src[0] == a and w.dst[0] == b for w in c.wires)


def precedes(c: Circuit, a: str, b: str) -> bool:
    c.node(a), c.node(b)
    succ: dict[str, set[str]] = {}
    for w in c.wires:
        succ.setdefault(w.src[0], set()).add(w.dst[0])
    stack, seen = list(succ.get(a, ())), set()
    while stack:
        x = stack.pop()
        if x == b:
            return True
        if x not in seen:
            seen.add(x)
            stack.extend(succ.get(x, ()))
    return False


# -- evaluation --------------------------------------------------------------


def _require_valid(c: Circuit):
    errors = typecheck(c)
    if errors:
        raise CircuitError("; ".join(errors))


def _options(c: Circuit, outcomes: Mapping[str, int] | None, all_outcomes: bool):
    outcomes = dict(outcomes or {})
    unknown = set(outcomes) - set(c.by_id)
    if unknown:
        raise CircuitError(f"outcomes given for unknown nodes {sorted(unknown)}")
    opts: dict[str, list[tuple[int | None, TransformationEvent]]] = {}
    for n in c.nodes:
        if not n.is_test:
            opts[n.id] = [(None, as_transformation(n.payload))]
        elif n.id in outcomes:
            opts[n.id] = [(outcomes[n.id], as_transformation(n.event(outcomes[n.id])))]
        elif all_outcomes:
            opts[n.id] = [(i, as_transformation(e)) for i, e in enumerate(n.payload.events)]
        else:
            raise OutcomeError(f"node {n.id!r} needs an outcome")
    return opts


def _contract(c: Circuit, options, initial: StateEvent | None = None):
    """Sweep the DAG; return ``{outcome-branch: frontier state}`` and port layout.

    ``initial`` is a state on the dangling inputs of ``c`` (in declared order).
    Each branch key is a tuple of ``(node id, outcome)`` pairs.
    """
    where: dict[tuple, list[int]] = {}
    if initial is None:
        initial = kernel.unit_state()
    pos = 0
    for port in c.inputs:
        k = len(c.port_system(port, "in").factors)
        where[("in",) + port] = list(range(pos, pos + k))
        pos += k
    feed = {w.dst: w.src for w in c.wires}
    branches: dict[tuple, StateEvent] = {(): initial}
    width = pos
    for nid in topological_order(c):
        node = c.by_id[nid]
        positions: list[int] = []
        for j in range(len(node.inputs)):
            src = feed.get((nid, j))
            positions += where.pop(("out",) + src if src else ("in", nid, j))
        out_factors = sum((p.factors for p in node.outputs), ())
        new: dict[tuple, StateEvent] = {}
        for key, state in branches.items():
            for outcome, T in options[nid]:
                result = kernel.apply_at(T, state, positions, out_factors)
                if result.assignment:
                    new[key + ((nid, outcome),) if outcome is not None else key] = result
        branches = new
        gone = set(positions)
        remap = {}
        for old in range(width):
            if old not in gone:
                remap[old] = len(remap)
        where = {k: [remap[i] for i in v] for k, v in where.items()}
        base = len(remap)
        for j, p in enumerate(node.outputs):
            k = len(p.factors)
            where[("out", nid, j)] = list(range(base, base + k))
            base += k
        width = base
    return branches, where


def evaluate_closed(c: Circuit, outcomes: Mapping[str, int] | None = None) -> int:
    """Probability (0 or 1) of the given outcomes in a closed circuit."""
    _require_valid(c)
    if not is_closed(c):
        raise CircuitError("circuit is open")
    branches, _ = _contract(c, _options(c, outcomes, all_outcomes=False))
    return int(bool(branches))


def _output_state(state: StateEvent, where, c: Circuit) -> StateEvent:
    order = [i for port in c.outputs for i in where[("out",) + port]]
    return kernel.permute_factors(state, order) if order != sorted(order) else state


def evaluate_open(c: Circuit, outcomes: Mapping[str, int] | None = None) -> Event:
    """Normal form of the diagram as a single event (declared port order)."""
    _require_valid(c)
    options = _options(c, outcomes, all_outcomes=False)
    X, Y = c.input_system, c.output_system
    entries = []
    atomic_inputs = [(s, s1) for s in range(X.n) for s1 in range(X.m)]
    for s, s1 in atomic_inputs:
        branches, where = _contract(c, options, kernel.atomic_state(X, s, s1))
        for state in branches.values():
            for t, t1 in _output_state(state, where, c).assignment:
                entries.append((s, s1, t, t1))
    T = TransformationEvent.from_entries(X, Y, entries)
    return narrow(T) if (X.is_trivial or Y.is_trivial) else T


def coarse_grained(c: Circuit) -> Circuit:
    """Replace every test by the sum of its events."""
    nodes = tuple(replace(n, payload=n.payload.coarse) if n.is_test else n for n in c.nodes)
    return Circuit(nodes, c.wires, c.inputs, c.outputs)


def joint_distribution(c: Circuit) -> dict[tuple[int, ...], int]:
    """Probability of every outcome tuple; tuples follow :attr:`Circuit.test_ids`."""
    _require_valid(c)
    if not is_closed(c):
        raise CircuitError("circuit is open")
    branches, _ = _contract(c, _options(c, None, all_outcomes=True))
    ids = c.test_ids
    sizes = [len(c.by_id[i].payload) for i in ids]
    dist = {tup: 0 for tup in product(*(range(k) for k in sizes))}
    for key in branches:
        chosen = dict(key)
        dist[tuple(chosen[i] for i in ids)] = 1
    return dist


def marginal_distribution(c: Circuit, target: str, fixed: Mapping[str, int] | None = None) -> tuple[int, ...]:
    """Outcome probabilities of test ``target``, summed over all other free tests."""
    node = c.node(target)
    if not node.is_test:
        raise CircuitError(f"node {target!r} is not a test")
    ids = c.test_ids
    k = ids.index(target)
    fixed = dict(fixed or {})
    idx = {i: ids.index(i) for i in fixed}
    out = [0] * len(node.payload)
    for tup, p in joint_distribution(c).items():
        if p and all(tup[idx[i]] == o for i, o in fixed.items()):
            out[tup[k]] += p
    return tuple(out)


def marginal_probability(c: Circuit, target: str, outcome: int, fixed: Mapping[str, int] | None = None) -> int:
    dist = marginal_distribution(c, target, fixed)
    if not 0 <= outcome < len(dist):
        raise OutcomeError(f"outcome {outcome} out of range for node {target!r}")
    return dist[outcome]


def no_backward_signaling_check(c: Circuit, target: str, candidate: str, family: Iterable[Test]) -> int:
    """1 iff the marginal of ``target`` ignores which test sits at ``candidate``.

    Vacuously 1 when ``candidate`` precedes ``target``.
    """
    if precedes(c, candidate, target):
        return 1
    seen = {marginal_distribution(c, target)}
    for test in family:
        seen.add(marginal_distribution(replace_payload(c, candidate, test), target))
    return int(len(seen) == 1)
