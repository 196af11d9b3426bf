"""Exact kernel for the deterministic non-causal theory.

Systems are labelled ``n |> m``; a state is a partial function from the
pointer range ``range(n)`` to the value range ``range(m)``, an effect picks a
pointer ``v`` and a value set ``E``, and a transformation is stored in the
canonical cell form ``(s', t) -> (anchor(t), g(t, s'))``.

Every coefficient lives in {0, 1}. Composite systems index their atomic
events row-major over the factor list.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import product
from typing import Callable, Iterable, Mapping, Sequence, Union


class OptError(Exception):
    """Base class for every error raised by optlab."""


class SystemMismatch(OptError):
    pass


class FactorError(OptError, IndexError):
    pass


class InvalidEvent(OptError, ValueError):
    pass


class OverlapError(InvalidEvent):
    pass


class AnchorConflict(InvalidEvent):
    pass


class StructureError(InvalidEvent):
    """A 0/1 matrix could not be brought into canonical (omega, f, g) form."""


# -- systems -----------------------------------------------------------------


@dataclass(frozen=True)
class SystemType:
    """A (possibly composite) system; ``factors`` lists ``(n_i, m_i)`` pairs.

    Equality compares the factor list. Wiring compatibility only needs the
    flattened pair, see :meth:`matches`.
    """

    factors: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        factors = tuple((int(n), int(m)) for n, m in self.factors)
        for n, m in factors:
            if n < 1 or m < 1:
                raise ValueError(f"system sizes must be positive, got {n}|>{m}")
        object.__setattr__(self, "factors", factors)

    @classmethod
    def of(cls, n: int, m: int) -> SystemType:
        return cls(((n, m),))

    @property
    def n(self) -> int:
        out = 1
        for n, _ in self.factors:
            out *= n
        return out

    @property
    def m(self) -> int:
        out = 1
        for _, m in self.factors:
            out *= m
        return out

    @property
    def dim(self) -> int:
        return self.n * self.m

    @property
    def is_trivial(self) -> bool:
        return self.n == 1 and self.m == 1

    def matches(self, other: SystemType) -> bool:
        return self.n == other.n and self.m == other.m

    def __mul__(self, other: SystemType) -> SystemType:
        return SystemType(self.factors + other.factors)

    def split(self) -> list[SystemType]:
        return [SystemType((f,)) for f in self.factors]

    def __str__(self):
        if not self.factors:
            return "I"
        if len(self.factors) == 1:
            n, m = self.factors[0]
            return f"{n}|>{m}"
        return "".join(f"({n}|>{m})" for n, m in self.factors)


TRIVIAL = SystemType()


def _digits(x: int, radices: Sequence[int]) -> list[int]:
    out = [0] * len(radices)
    for k in range(len(radices) - 1, -1, -1):
        x, out[k] = divmod(x, radices[k])
    return out


def _number(digits: Iterable[int], radices: Iterable[int]) -> int:
    x = 0
    for d, r in zip(digits, radices):
        x = x * r + d
    return x


# -- events ------------------------------------------------------------------


@dataclass(frozen=True)
class StateEvent:
    """Preparation event: ``assignment`` maps each pointer in the domain to its value."""

    system: SystemType
    assignment: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        items = self.assignment.items() if isinstance(self.assignment, Mapping) else self.assignment
        n, m = self.system.n, self.system.m
        f: dict[int, int] = {}
        for i, v in items:
            i, v = int(i), int(v)
            if not 0 <= i < n:
                raise InvalidEvent(f"pointer {i} out of range for {self.system}")
            if not 0 <= v < m:
                raise InvalidEvent(f"value {v} out of range for {self.system}")
            if f.get(i, v) != v:
                raise OverlapError(f"pointer {i} assigned twice; not a valid state")
            f[i] = v
        object.__setattr__(self, "assignment", tuple(sorted(f.items())))

    @cached_property
    def mapping(self) -> dict[int, int]:
        return dict(self.assignment)

    @property
    def domain(self) -> frozenset[int]:
        return frozenset(self.mapping)

    @property
    def is_zero(self) -> bool:
        return not self.assignment

    def __str__(self):
        return "{" + ", ".join(f"{i} -> {v}" for i, v in self.assignment) + "}"


@dataclass(frozen=True)
class EffectEvent:
    """Observation event ``a_{v,E}``; the zero effect is stored with ``v = 0``."""

    system: SystemType
    v: int = 0
    values: frozenset[int] = frozenset()

    def __post_init__(self):
        values = frozenset(int(x) for x in self.values)
        v = int(self.v)
        if not 0 <= v < self.system.n:
            raise InvalidEvent(f"pointer {v} out of range for {self.system}")
        bad = [x for x in values if not 0 <= x < self.system.m]
        if bad:
            raise InvalidEvent(f"value {min(bad)} out of range for {self.system}")
        if not values:
            v = 0
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "values", values)

    @property
    def is_zero(self) -> bool:
        return not self.values

    def __str__(self):
        body = ", ".join(str(x) for x in sorted(self.values))
        return f"[v = {self.v}; E = {{{body}}}]"


Cell = tuple[tuple[int, int], tuple[int, int]]


@dataclass(frozen=True)
class TransformationEvent:
    """Transformation in canonical form.

    ``cells`` maps ``(s', t)`` (input value, output pointer) to
    ``(anchor, out)``: the atomic map ``A[anchor, s' -> t, out]`` is
    included. All cells sharing ``t`` share the anchor.
    """

    input: SystemType
    output: SystemType
    cells: tuple[Cell, ...] = ()

    def __post_init__(self):
        items = self.cells.items() if isinstance(self.cells, Mapping) else self.cells
        n, m = self.input.n, self.input.m
        p, q = self.output.n, self.output.m
        table: dict[tuple[int, int], tuple[int, int]] = {}
        anchors: dict[int, int] = {}
        for (s1, t), (a, w) in items:
            s1, t, a, w = int(s1), int(t), int(a), int(w)
            if not (0 <= s1 < m and 0 <= t < p and 0 <= a < n and 0 <= w < q):
                raise InvalidEvent(f"cell ({s1}, {t}) -> ({a}, {w}) out of range for {self.input} -> {self.output}")
            if table.get((s1, t), (a, w)) != (a, w):
                raise OverlapError(f"cell ({s1}, {t}) defined twice")
            if anchors.get(t, a) != a:
                raise AnchorConflict(f"output pointer {t} has anchors {anchors[t]} and {a}")
            table[(s1, t)] = (a, w)
            anchors[t] = a
        cells = tuple(sorted(table.items(), key=lambda c: (c[0][1], c[0][0])))
        object.__setattr__(self, "cells", cells)

    @classmethod
    def from_entries(cls, input: SystemType, output: SystemType, entries: Iterable[tuple[int, int, int, int]]):
        """Rebuild the canonical form from the 1-entries ``(s, s', t, t')``."""
        cells, reason = recover_cells(entries)
        if cells is None:
            raise StructureError(reason)
        return cls(input, output, cells)

    @cached_property
    def table(self) -> dict[tuple[int, int], tuple[int, int]]:
        return dict(self.cells)

    @cached_property
    def anchors(self) -> dict[int, int]:
        return {t: a for (_, t), (a, _) in self.cells}

    @property
    def omega(self) -> frozenset[tuple[int, int]]:
        return frozenset(self.table)

    def anchor(self, t: int) -> int | None:
        return self.anchors.get(t)

    def g(self, t: int, s1: int) -> int | None:
        cell = self.table.get((s1, t))
        return None if cell is None else cell[1]

    @cached_property
    def entries(self) -> tuple[tuple[int, int, int, int], ...]:
        return tuple(sorted((a, s1, t, w) for (s1, t), (a, w) in self.cells))

    @cached_property
    def columns(self) -> dict[int, list[tuple[int, dict[int, int]]]]:
        # anchor -> [(t, {s': out})]
        cols: dict[int, dict[int, dict[int, int]]] = {}
        for (s1, t), (a, w) in self.cells:
            cols.setdefault(a, {}).setdefault(t, {})[s1] = w
        return {a: sorted(ts.items()) for a, ts in cols.items()}

    @cached_property
    def rows(self) -> dict[tuple[int, int], tuple[tuple[int, int], ...]]:
        out: dict[tuple[int, int], list[tuple[int, int]]] = {}
        for s, s1, t, w in self.entries:
            out.setdefault((s, s1), []).append((t, w))
        return {k: tuple(v) for k, v in out.items()}

    @property
    def is_zero(self) -> bool:
        return not self.cells

    def __str__(self):
        return "{" + ", ".join(f"({s1}, {t}) -> ({a}, {w})" for (s1, t), (a, w) in self.cells) + "}"


Event = Union[StateEvent, EffectEvent, TransformationEvent]


def recover_cells(entries: Iterable[tuple[int, int, int, int]]):
    """Return ``(cells, None)`` or ``(None, reason)`` for a list of 1-entries."""
    table: dict[tuple[int, int], tuple[int, int]] = {}
    anchors: dict[int, int] = {}
    seen = set()
    for s, s1, t, w in entries:
        if (s, s1, t, w) in seen:
            return None, f"coefficient 2 at ({s}, {s1}, {t}, {w})"
        seen.add((s, s1, t, w))
        if anchors.get(t, s) != s:
            return None, f"output pointer {t} is fed by input pointers {anchors[t]} and {s}"
        if (s1, t) in table:
            return None, f"input value {s1} reaches output pointer {t} twice"
        anchors[t] = s
        table[(s1, t)] = (s, w)
    return table, None


# -- constructors ------------------------------------------------------------


def _fn(f) -> Callable:
    if callable(f):
        return f
    return f.__getitem__


def atomic_state(system: SystemType, s: int, t: int) -> StateEvent:
    return StateEvent(system, ((s, t),))


def deterministic_state(system: SystemType, f) -> StateEvent:
    f = _fn(f)
    return StateEvent(system, tuple((i, f(i)) for i in range(system.n)))


def effect(system: SystemType, v: int, values: Iterable[int]) -> EffectEvent:
    return EffectEvent(system, v, frozenset(values))


def atomic_effect(system: SystemType, s: int, s1: int) -> EffectEvent:
    return EffectEvent(system, s, frozenset((s1,)))


def deterministic_effect(system: SystemType, v: int) -> EffectEvent:
    return EffectEvent(system, v, frozenset(range(system.m)))


def atomic_transformation(input: SystemType, output: SystemType, s: int, s1: int, t: int, t1: int):
    return TransformationEvent(input, output, (((s1, t), (s, t1)),))


def transformation(input: SystemType, output: SystemType, omega: Iterable[tuple[int, int]], f, g):
    """``T^{f,g}_omega``: sum of ``A[f(t), s' -> t, g(t, s')]`` over ``(s', t)`` in omega."""
    f, g = _fn(f), g if callable(g) else (lambda t, s1, _g=g: _g[(t, s1)])
    return TransformationEvent(input, output, tuple(((s1, t), (f(t), g(t, s1))) for s1, t in omega))


def channel(input: SystemType, output: SystemType, f, g) -> TransformationEvent:
    omega = product(range(input.m), range(output.n))
    return transformation(input, output, omega, f, g)


def identity(system: SystemType) -> TransformationEvent:
    return channel(system, system, lambda t: t, lambda t, s1: s1)


def unit_state() -> StateEvent:
    """Deterministic state of the trivial system; unit of parallel composition."""
    return StateEvent(TRIVIAL, ((0, 0),))


# -- embedding and views -----------------------------------------------------


def as_transformation(x: Event) -> TransformationEvent:
    if isinstance(x, TransformationEvent):
        return x
    if isinstance(x, StateEvent):
        return TransformationEvent(TRIVIAL, x.system, tuple(((0, t), (0, w)) for t, w in x.assignment))
    if isinstance(x, EffectEvent):
        return TransformationEvent(x.system, TRIVIAL, tuple(((s1, 0), (x.v, 0)) for s1 in x.values))
    raise TypeError(f"not an event: {x!r}")


def narrow(T: TransformationEvent) -> Event:
    """Present a transformation from/to the trivial system as a state/effect."""
    if T.input.is_trivial:
        return StateEvent(T.output, tuple((t, w) for (_, t), (_, w) in T.cells))
    if T.output.is_trivial:
        return EffectEvent(T.input, T.anchor(0) or 0, frozenset(s1 for (s1, _), _ in T.cells))
    return T


def systems_of(x: Event) -> tuple[SystemType, SystemType]:
    """(input, output) of an event with states/effects embedded."""
    if isinstance(x, StateEvent):
        return TRIVIAL, x.system
    if isinstance(x, EffectEvent):
        return x.system, TRIVIAL
    return x.input, x.output


def is_zero(x: Event) -> bool:
    return x.is_zero


def support(x: Event) -> tuple:
    """Indices of the 1-coordinates of :func:`as_vector`."""
    if isinstance(x, StateEvent):
        m = x.system.m
        return tuple(i * m + v for i, v in x.assignment)
    if isinstance(x, EffectEvent):
        m = x.system.m
        return tuple(sorted(x.v * m + e for e in x.values))
    m, p, q = x.input.m, x.output.n, x.output.m
    return tuple(sorted(((s * m + s1) * p + t) * q + w for s, s1, t, w in x.entries))


def as_vector(x: Event) -> tuple[int, ...]:
    if isinstance(x, TransformationEvent):
        size = x.input.dim * x.output.dim
    else:
        size = x.system.dim
    vec = [0] * size
    for k in support(x):
        vec[k] = 1
    return tuple(vec)


def from_vector(kind: type, vector: Sequence[int], system: SystemType, output: SystemType | None = None) -> Event:
    """Inverse of :func:`as_vector`; raises :class:`InvalidEvent` on non-events."""
    ones = []
    for k, c in enumerate(vector):
        if c not in (0, 1):
            raise InvalidEvent(f"coefficient {c} at {k} is not 0 or 1")
        if c:
            ones.append(k)
    if kind is StateEvent:
        pairs = [divmod(k, system.m) for k in ones]
        if len({i for i, _ in pairs}) != len(pairs):
            raise OverlapError("two values at one pointer; not a valid state")
        return StateEvent(system, pairs)
    if kind is EffectEvent:
        pointers = {k // system.m for k in ones}
        if len(pointers) > 1:
            raise InvalidEvent("effect selects more than one pointer")
        return EffectEvent(system, pointers.pop() if pointers else 0, frozenset(k % system.m for k in ones))
    n, m = system.n, system.m
    p, q = output.n, output.m
    entries = []
    for k in ones:
        r, c = divmod(k, p * q)
        entries.append((r // m, r % m, c // q, c % q))
    return TransformationEvent.from_entries(system, output, entries)


def is_deterministic(x: Event) -> bool:
    if isinstance(x, StateEvent):
        return len(x.assignment) == x.system.n
    if isinstance(x, EffectEvent):
        return len(x.values) == x.system.m
    return len(x.cells) == x.input.m * x.output.n


def is_atomic(x: Event) -> bool:
    return len(support(x)) == 1


# -- operations --------------------------------------------------------------


def pair(a: EffectEvent, rho: StateEvent) -> int:
    """Probability of observing ``a`` on ``rho``; always 0 or 1."""
    if not isinstance(a, EffectEvent) or not isinstance(rho, StateEvent):
        raise TypeError("pair() takes an effect and a state")
    if not a.system.matches(rho.system):
        raise SystemMismatch(f"effect on {a.system} paired with state on {rho.system}")
    value = rho.mapping.get(a.v)
    return int(value is not None and value in a.values)


def apply_at(T: Event, rho: StateEvent, positions: Sequence[int], out_factors=None) -> StateEvent:
    """Apply ``T`` to the factors of ``rho`` listed in ``positions``.

    The untouched factors keep their order and the output factors of ``T``
    (or ``out_factors``, a reshaping with the same flattened sizes) are
    appended after them.
    """
    T = as_transformation(T)
    fac = rho.system.factors
    positions = list(positions)
    if len(set(positions)) != len(positions) or any(not 0 <= k < len(fac) for k in positions):
        raise FactorError(f"bad factor positions {positions} for {rho.system}")
    local = SystemType(tuple(fac[k] for k in positions))
    if not local.matches(T.input):
        raise SystemMismatch(f"transformation on {T.input} applied to factors {local}")
    out_sys = T.output if out_factors is None else SystemType(tuple(out_factors))
    if not out_sys.matches(T.output):
        raise SystemMismatch(f"output reshaped to {out_sys}, expected {T.output}")
    chosen = set(positions)
    rest = [k for k in range(len(fac)) if k not in chosen]
    result_sys = SystemType(tuple(fac[k] for k in rest) + out_sys.factors)

    nr = [f[0] for f in fac]
    mr = [f[1] for f in fac]
    n_loc, m_loc = [nr[k] for k in positions], [mr[k] for k in positions]
    n_rest, m_rest = [nr[k] for k in rest], [mr[k] for k in rest]
    p, q = T.output.n, T.output.m
    columns = T.columns
    out: dict[int, int] = {}
    for ptr, val in rho.assignment:
        pd, vd = _digits(ptr, nr), _digits(val, mr)
        pin = _number((pd[k] for k in positions), n_loc)
        cols = columns.get(pin)
        if not cols:
            continue
        vin = _number((vd[k] for k in positions), m_loc)
        rest_p = _number((pd[k] for k in rest), n_rest)
        rest_v = _number((vd[k] for k in rest), m_rest)
        for t, col in cols:
            w = col.get(vin)
            if w is None:
                continue
            key = rest_p * p + t
            if key in out:
                raise StructureError(f"two values reach pointer {key}; the transformation is not admissible")
            out[key] = rest_v * q + w
    return StateEvent(result_sys, out)


def apply(T: Event, rho: StateEvent) -> StateEvent:
    """Image of ``rho`` under ``T``; the result lives on ``T``'s output system."""
    T = as_transformation(T)
    if not T.input.matches(rho.system):
        raise SystemMismatch(f"transformation on {T.input} applied to state on {rho.system}")
    return apply_at(T, rho, range(len(rho.system.factors)))


def marginalize(rho: StateEvent, which: int, b: EffectEvent) -> StateEvent:
    """Observe factor ``which`` of ``rho`` with ``b``; keep the remaining factors."""
    if not 0 <= which < len(rho.system.factors) or len(rho.system.factors) < 2:
        raise FactorError(f"factor {which} out of range for {rho.system}")
    factor = SystemType((rho.system.factors[which],))
    if not isinstance(b, EffectEvent) or not b.system.matches(factor):
        raise SystemMismatch(f"effect on {getattr(b, 'system', b)} applied to factor {factor}")
    return apply_at(b, rho, [which])


def permute_factors(rho: StateEvent, order: Sequence[int]) -> StateEvent:
    """Reorder the factors of a composite state (a swap channel, applied)."""
    fac = rho.system.factors
    order = list(order)
    if sorted(order) != list(range(len(fac))):
        raise FactorError(f"{order} is not a permutation of {len(fac)} factors")
    nr, mr = [f[0] for f in fac], [f[1] for f in fac]
    new_n, new_m = [nr[k] for k in order], [mr[k] for k in order]
    out = {}
    for ptr, val in rho.assignment:
        pd, vd = _digits(ptr, nr), _digits(val, mr)
        out[_number((pd[k] for k in order), new_n)] = _number((vd[k] for k in order), new_m)
    return StateEvent(SystemType(tuple(fac[k] for k in order)), out)


def compose_seq(first: Event, second: Event) -> Event:
    """``second`` after ``first`` (diagram order): Boolean matrix product."""
    A, B = as_transformation(first), as_transformation(second)
    if not A.output.matches(B.input):
        raise SystemMismatch(f"output {A.output} does not match input {B.input}")
    entries = []
    rows = B.rows
    for s, s1, t, t1 in A.entries:
        for u, u1 in rows.get((t, t1), ()):
            entries.append((s, s1, u, u1))
    result = TransformationEvent.from_entries(A.input, B.output, entries)
    if isinstance(first, TransformationEvent) and isinstance(second, TransformationEvent):
        return result
    return narrow(result)


def compose_par(x: Event, y: Event) -> Event:
    """Parallel composition; atomic indices flatten row-major."""
    if isinstance(x, StateEvent) and isinstance(y, StateEvent):
        n2, m2 = y.system.n, y.system.m
        return StateEvent(
            x.system * y.system,
            tuple((i * n2 + j, a * m2 + b) for (i, a), (j, b) in product(x.assignment, y.assignment)),
        )
    if isinstance(x, EffectEvent) and isinstance(y, EffectEvent):
        n2, m2 = y.system.n, y.system.m
        values = frozenset(e * m2 + f for e in x.values for f in y.values)
        return EffectEvent(x.system * y.system, x.v * n2 + y.v if values else 0, values)
    A, B = as_transformation(x), as_transformation(y)
    m2, n2, p2, q2 = B.input.m, B.input.n, B.output.n, B.output.m
    cells = tuple(
        ((s1 * m2 + u1, t * p2 + w), (a * n2 + b, o * q2 + r))
        for ((s1, t), (a, o)), ((u1, w), (b, r)) in product(A.cells, B.cells)
    )
    result = TransformationEvent(A.input * B.input, A.output * B.output, cells)
    if isinstance(x, TransformationEvent) and isinstance(y, TransformationEvent):
        return result
    return narrow(result)


def sum_events(events: Sequence[Event]) -> Event:
    """Coarse-grain events with disjoint supports into a single event."""
    events = list(events)
    if not events:
        raise ValueError("sum_events needs at least one event")
    kind = type(events[0])
    if any(type(e) is not kind for e in events):
        raise InvalidEvent("cannot sum events of different kinds")
    first_io = systems_of(events[0])
    for e in events[1:]:
        io = systems_of(e)
        if not (io[0].matches(first_io[0]) and io[1].matches(first_io[1])):
            raise SystemMismatch("cannot sum events on different systems")

    if kind is StateEvent:
        merged: dict[int, int] = {}
        for e in events:
            for i, v in e.assignment:
                if i in merged:
                    raise OverlapError(f"pointer {i} in two summands; not a valid state")
                merged[i] = v
        return StateEvent(events[0].system, merged)

    if kind is EffectEvent:
        live = [e for e in events if not e.is_zero]
        if len({e.v for e in live}) > 1:
            raise InvalidEvent("effects with different pointers do not sum to an effect")
        values: set[int] = set()
        for e in live:
            if values & e.values:
                raise OverlapError("value sets overlap; not a valid effect")
            values |= e.values
        return EffectEvent(events[0].system, live[0].v if live else 0, frozenset(values))

    entries: list[tuple[int, int, int, int]] = []
    seen = set()
    for e in events:
        for entry in e.entries:
            if entry in seen:
                raise OverlapError(f"entry {entry} in two summands")
            seen.add(entry)
            entries.append(entry)
    cells, reason = recover_cells(entries)
    if cells is None:
        cls = AnchorConflict if "fed by" in reason else OverlapError
        raise cls(reason)
    return TransformationEvent(events[0].input, events[0].output, cells)
