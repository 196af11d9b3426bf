"""The ``.opt`` text format: lexer, recursive-descent parser, analyzer, printer.

Grammar::

    file    := stmt*
    stmt    := "system" ID "=" NAT "|>" NAT
             | "system" ID "=" ID "*" ID
             | "state" ID ":" ID "=" "{" [NAT "->" NAT ("," NAT "->" NAT)*] "}"
             | "effect" ID ":" ID "=" "[" "v" "=" NAT ";" "E" "=" set "]"
             | "transform" ID ":" ID "->" ID "=" "{" [cell ("," cell)*] "}"
             | "test" ID ":" ("prep" | "obs" | "chan") "=" "{" ID ("," ID)* "}"
             | "circuit" ID "=" expr
             | "eval" ID ["@" NAT ("," NAT)*]
    cell    := "(" NAT "," NAT ")" "->" "(" NAT "," NAT ")"     # (s', t) -> (f(t), g(t, s'))
    expr    := term (";" term)*          # sequential, left to right
    term    := factor ("*" factor)*      # parallel
    factor  := ID | "(" expr ")"
    set     := "{" [NAT ("," NAT)*] "}"

``#`` starts a comment. Outcomes after ``@`` are given positionally, one per
test node in left-to-right order of the circuit expression (references to
other circuits are expanded in place).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator, Union

from . import circuit as C
from .circuit import CHAN, OBS, PREP, Circuit, Test
from .kernel import (
    EffectEvent,
    Event,
    InvalidEvent,
    OptError,
    StateEvent,
    SystemType,
    TransformationEvent,
)

KEYWORDS = frozenset({"system", "state", "effect", "transform", "test", "circuit", "eval"})
KINDS = (PREP, OBS, CHAN)


@dataclass(frozen=True)
class Diagnostic:
    line: int
    col: int
    message: str
    expected: tuple[str, ...] = ()

    def __str__(self):
        text = f"{self.line}:{self.col}: {self.message}"
        if self.expected:
            text += f" (expected {', '.join(self.expected)})"
        return text


class DslError(OptError):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(map(str, self.diagnostics)))


# -- lexing ------------------------------------------------------------------


@dataclass(frozen=True)
class Token:
    kind: str  # ID, NAT, KW, SYM, EOF
    text: str
    line: int
    col: int

    def describe(self) -> str:
        return "end of input" if self.kind == "EOF" else repr(self.text)


_TOKEN = re.compile(
    r"(?P<ws>[ \t\r\f\v]+)|(?P<nl>\n)|(?P<comment>#[^\n]*)"
    r"|(?P<NAT>\d+)|(?P<ID>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<SYM>\|>|->|[=*:{}\[\](),;@])"
)


def tokenize(text: str) -> tuple[list[Token], list[Diagnostic]]:
    tokens: list[Token] = []
    diags: list[Diagnostic] = []
    line, start, pos = 1, 0, 0
    while pos < len(text):
        mt = _TOKEN.match(text, pos)
        col = pos - start + 1
        if mt is None:
            diags.append(Diagnostic(line, col, f"unexpected character {text[pos]!r}"))
            pos += 1
            continue
        kind = mt.lastgroup
        if kind == "nl":
            line, start = line + 1, mt.end()
        elif kind in ("NAT", "ID", "SYM"):
            word = mt.group()
            if kind == "ID" and word in KEYWORDS:
                kind = "KW"
            tokens.append(Token(kind, word, line, col))
        pos = mt.end()
    tokens.append(Token("EOF", "", line, pos - start + 1))
    return tokens, diags


# -- syntax tree -------------------------------------------------------------


@dataclass(frozen=True)
class Span:
    line: int
    col: int


@dataclass(frozen=True)
class Ref:
    name: str
    span: Span = field(default=Span(0, 0), compare=False)


@dataclass(frozen=True)
class Seq:
    parts: tuple["Expr", ...]


@dataclass(frozen=True)
class Par:
    parts: tuple["Expr", ...]


Expr = Union[Ref, Seq, Par]


@dataclass(frozen=True)
class SystemStmt:
    name: str
    size: tuple[int, int] | None = None
    parts: tuple[str, str] | None = None
    span: Span = field(default=Span(0, 0), compare=False)


@dataclass(frozen=True)
class StateStmt:
    name: str
    system: str
    pairs: tuple[tuple[int, int], ...]
    span: Span = field(default=Span(0, 0), compare=False)


@dataclass(frozen=True)
class EffectStmt:
    name: str
    system: str
    v: int
    values: tuple[int, ...]
    span: Span = field(default=Span(0, 0), compare=False)


@dataclass(frozen=True)
class TransformStmt:
    name: str
    input: str
    output: str
    cells: tuple[tuple[tuple[int, int], tuple[int, int]], ...]
    span: Span = field(default=Span(0, 0), compare=False)


@dataclass(frozen=True)
class TestStmt:
    __test__ = False

    name: str
    kind: str
    members: tuple[str, ...]
    span: Span = field(default=Span(0, 0), compare=False)


@dataclass(frozen=True)
class CircuitStmt:
    name: str
    expr: Expr
    span: Span = field(default=Span(0, 0), compare=False)


@dataclass(frozen=True)
class EvalStmt:
    circuit: str
    outcomes: tuple[int, ...] | None = None
    span: Span = field(default=Span(0, 0), compare=False)


Stmt = Union[SystemStmt, StateStmt, EffectStmt, TransformStmt, TestStmt, CircuitStmt, EvalStmt]


@dataclass(frozen=True)
class SourceUnit:
    statements: tuple[Stmt, ...]


# -- parsing -----------------------------------------------------------------


class _Abort(Exception):
    pass


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0
        self.diags: list[Diagnostic] = []

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def fail(self, expected: tuple[str, ...], message: str | None = None):
        t = self.tok
        self.diags.append(Diagnostic(t.line, t.col, message or f"unexpected {t.describe()}", expected))
        raise _Abort

    def sym(self, text: str) -> Token:
        if self.tok.kind in ("SYM", "KW") and self.tok.text == text:
            self.pos += 1
            return self.tokens[self.pos - 1]
        self.fail((repr(text),))

    def word(self, text: str):
        # contextual words such as v, E, prep
        if self.tok.kind == "ID" and self.tok.text == text:
            self.pos += 1
            return
        self.fail((repr(text),))

    def ident(self) -> str:
        if self.tok.kind == "ID":
            self.pos += 1
            return self.tokens[self.pos - 1].text
        msg = f"keyword {self.tok.text!r} cannot be used as a name" if self.tok.kind == "KW" else None
        self.fail(("identifier",), msg)

    def nat(self) -> int:
        if self.tok.kind == "NAT":
            self.pos += 1
            return int(self.tokens[self.pos - 1].text)
        self.fail(("number",))

    def at(self, text: str) -> bool:
        return self.tok.kind in ("SYM", "KW") and self.tok.text == text

    def listing(self, close: str, item):
        out = []
        if self.at(close):
            self.pos += 1
            return out
        out.append(item())
        while not self.at(close):
            if not self.at(","):
                self.fail((repr(","), repr(close)))
            self.pos += 1
            out.append(item())
        self.pos += 1
        return out

    def file(self) -> list[Stmt]:
        stmts = []
        while self.tok.kind != "EOF":
            start = self.pos
            try:
                stmts.append(self.stmt())
            except _Abort:
                # resynchronise at the next statement keyword
                self.pos = max(self.pos, start + 1)
                while self.tok.kind not in ("EOF", "KW"):
                    self.pos += 1
        return stmts

    def stmt(self) -> Stmt:
        t = self.tok
        span = Span(t.line, t.col)
        if t.kind != "KW":
            self.fail(tuple(sorted(repr(k) for k in KEYWORDS)), f"unexpected {t.describe()} at start of statement")
        self.pos += 1
        kw = t.text
        if kw == "system":
            name = self.ident()
            self.sym("=")
            if self.tok.kind == "NAT":
                n = self.nat()
                self.sym("|>")
                return SystemStmt(name, (n, self.nat()), None, span)
            if self.tok.kind == "ID":
                a = self.ident()
                self.sym("*")
                return SystemStmt(name, None, (a, self.ident()), span)
            self.fail(("number", "identifier"))
        if kw == "state":
            name = self.ident()
            self.sym(":")
            system = self.ident()
            self.sym("=")
            self.sym("{")

            def pair():
                s = self.nat()
                self.sym("->")
                return (s, self.nat())

            return StateStmt(name, system, tuple(self.listing("}", pair)), span)
        if kw == "effect":
            name = self.ident()
            self.sym(":")
            system = self.ident()
            self.sym("=")
            self.sym("[")
            self.word("v")
            self.sym("=")
            v = self.nat()
            self.sym(";")
            self.word("E")
            self.sym("=")
            self.sym("{")
            values = tuple(self.listing("}", self.nat))
            self.sym("]")
            return EffectStmt(name, system, v, values, span)
        if kw == "transform":
            name = self.ident()
            self.sym(":")
            inp = self.ident()
            self.sym("->")
            out = self.ident()
            self.sym("=")
            self.sym("{")

            def cell():
                self.sym("(")
                s1 = self.nat()
                self.sym(",")
                tt = self.nat()
                self.sym(")")
                self.sym("->")
                self.sym("(")
                a = self.nat()
                self.sym(",")
                w = self.nat()
                self.sym(")")
                return ((s1, tt), (a, w))

            return TransformStmt(name, inp, out, tuple(self.listing("}", cell)), span)
        if kw == "test":
            name = self.ident()
            self.sym(":")
            if not (self.tok.kind == "ID" and self.tok.text in KINDS):
                self.fail(tuple(repr(k) for k in KINDS))
            kind = self.tok.text
            self.pos += 1
            self.sym("=")
            self.sym("{")
            members = self.listing("}", self.ident)
            if not members:
                self.fail(("identifier",), "a test needs at least one event")
            return TestStmt(name, kind, tuple(members), span)
        if kw == "circuit":
            name = self.ident()
            self.sym("=")
            return CircuitStmt(name, self.expr(), span)
        # eval
        name = self.ident()
        outcomes = None
        if self.at("@"):
            self.pos += 1
            outcomes = [self.nat()]
            while self.at(","):
                self.pos += 1
                outcomes.append(self.nat())
            outcomes = tuple(outcomes)
        return EvalStmt(name, outcomes, span)

    def expr(self) -> Expr:
        parts = self._flat(self.term(), Seq)
        while self.at(";"):
            self.pos += 1
            parts += self._flat(self.term(), Seq)
        return parts[0] if len(parts) == 1 else Seq(tuple(parts))

    def term(self) -> Expr:
        parts = self._flat(self.factor(), Par)
        while self.at("*"):
            self.pos += 1
            parts += self._flat(self.factor(), Par)
        return parts[0] if len(parts) == 1 else Par(tuple(parts))

    @staticmethod
    def _flat(e: Expr, kind) -> list[Expr]:
        # both operators are associative; keep the tree flat so printing round-trips
        return list(e.parts) if isinstance(e, kind) else [e]

    def factor(self) -> Expr:
        t = self.tok
        if t.kind == "ID":
            self.pos += 1
            return Ref(t.text, Span(t.line, t.col))
        if self.at("("):
            self.pos += 1
            e = self.expr()
            self.sym(")")
            return e
        self.fail(("identifier", "'('"))


def parse(text: str) -> SourceUnit:
    """Parse ``.opt`` source; raises :class:`DslError` with every syntax diagnostic."""
    tokens, diags = tokenize(text)
    p = _Parser(tokens)
    stmts = p.file()
    diags = sorted(diags + p.diags, key=lambda d: (d.line, d.col))
    if diags:
        raise DslError(diags)
    return SourceUnit(tuple(stmts))


# -- analysis ----------------------------------------------------------------


@dataclass(frozen=True)
class SystemDef:
    name: str
    system: SystemType
    parts: tuple[str, str] | None = None


@dataclass(frozen=True)
class EventDef:
    name: str
    event: Event
    systems: tuple[str, ...]


@dataclass(frozen=True)
class TestDef:
    __test__ = False

    name: str
    kind: str
    members: tuple[str, ...]
    test: Test


@dataclass(frozen=True)
class CircuitDef:
    name: str
    expr: Expr
    circuit: Circuit


@dataclass(frozen=True)
class EvalDef:
    circuit: str
    outcomes: tuple[int, ...] | None


Def = Union[SystemDef, EventDef, TestDef, CircuitDef, EvalDef]


@dataclass(frozen=True)
class Model:
    defs: tuple[Def, ...]

    def _named(self, kind):
        return {d.name: d for d in self.defs if isinstance(d, kind)}

    @property
    def systems(self) -> dict[str, SystemType]:
        return {k: d.system for k, d in self._named(SystemDef).items()}

    @property
    def events(self) -> dict[str, Event]:
        return {k: d.event for k, d in self._named(EventDef).items()}

    @property
    def tests(self) -> dict[str, Test]:
        return {k: d.test for k, d in self._named(TestDef).items()}

    @property
    def circuits(self) -> dict[str, Circuit]:
        return {k: d.circuit for k, d in self._named(CircuitDef).items()}

    @property
    def evals(self) -> list[EvalDef]:
        return [d for d in self.defs if isinstance(d, EvalDef)]


class _Semantic(Exception):
    def __init__(self, message: str, span: Span | None = None):
        super().__init__(message)
        self.span = span


def _leaves(e: Expr) -> Iterator[Ref]:
    if isinstance(e, Ref):
        yield e
    else:
        for p in e.parts:
            yield from _leaves(p)


class _Analyzer:
    def __init__(self):
        self.systems: dict[str, SystemDef] = {}
        self.objects: dict[str, Def] = {}
        self.defs: list[Def] = []
        self.diags: list[Diagnostic] = []

    def system(self, name: str, span: Span) -> SystemType:
        if name not in self.systems:
            raise _Semantic(f"unknown system {name!r}", span)
        return self.systems[name].system

    def object(self, name: str, span: Span) -> Def:
        if name not in self.objects:
            what = "a system, not an event, test or circuit" if name in self.systems else "undeclared"
            raise _Semantic(f"unknown name {name!r} ({what})", span)
        return self.objects[name]

    def declare(self, name: str, d: Def, span: Span, namespace: dict):
        if name in namespace:
            raise _Semantic(f"duplicate name {name!r}", span)
        namespace[name] = d
        self.defs.append(d)

    def run(self, unit: SourceUnit) -> Model:
        for st in unit.statements:
            try:
                self.stmt(st)
            except _Semantic as exc:
                span = exc.span or st.span
                self.diags.append(Diagnostic(span.line, span.col, str(exc)))
            except (InvalidEvent, OptError) as exc:
                self.diags.append(Diagnostic(st.span.line, st.span.col, f"{type(exc).__name__}: {exc}"))
        if self.diags:
            raise DslError(self.diags)
        return Model(tuple(self.defs))

    def stmt(self, st: Stmt):
        if isinstance(st, SystemStmt):
            if st.size is not None:
                n, m = st.size
                if n < 1 or m < 1:
                    raise _Semantic("system sizes must be at least 1", st.span)
                sys = SystemType.of(n, m)
            else:
                a, b = (self.system(p, st.span) for p in st.parts)
                sys = a * b
            d = SystemDef(st.name, sys, st.parts)
            self.declare(st.name, d, st.span, self.systems)
            return
        if isinstance(st, StateStmt):
            sys = self.system(st.system, st.span)
            d = EventDef(st.name, StateEvent(sys, st.pairs), (st.system,))
        elif isinstance(st, EffectStmt):
            sys = self.system(st.system, st.span)
            if not st.values:
                if st.v != 0:
                    raise _Semantic("the zero effect is written with v = 0", st.span)
            elif len(set(st.values)) != len(st.values):
                raise _Semantic("repeated value in effect set", st.span)
            d = EventDef(st.name, EffectEvent(sys, st.v, frozenset(st.values)), (st.system,))
        elif isinstance(st, TransformStmt):
            inp, out = self.system(st.input, st.span), self.system(st.output, st.span)
            d = EventDef(st.name, TransformationEvent(inp, out, st.cells), (st.input, st.output))
        elif isinstance(st, TestStmt):
            events = []
            for m in st.members:
                md = self.object(m, st.span)
                if not isinstance(md, EventDef):
                    raise _Semantic(f"test member {m!r} is not an event", st.span)
                events.append(md.event)
            d = TestDef(st.name, st.kind, st.members, Test(st.name, st.kind, tuple(events)))
        elif isinstance(st, CircuitStmt):
            d = CircuitDef(st.name, st.expr, self.build(st.expr))
        else:
            cd = self.object(st.circuit, st.span)
            if not isinstance(cd, CircuitDef):
                raise _Semantic(f"{st.circuit!r} is not a circuit", st.span)
            if st.outcomes is not None:
                ids = cd.circuit.test_ids
                if len(st.outcomes) != len(ids):
                    raise _Semantic(f"circuit {st.circuit!r} has {len(ids)} tests but {len(st.outcomes)} outcomes given", st.span)
                for nid, o in zip(ids, st.outcomes):
                    if o >= len(cd.circuit.by_id[nid].payload):
                        raise _Semantic(f"outcome {o} out of range for test {nid.split('.', 1)[1]!r}", st.span)
            self.defs.append(EvalDef(st.circuit, st.outcomes))
            return
        self.declare(st.name, d, st.span, self.objects)

    def build(self, expr: Expr) -> Circuit:
        count = 0
        for leaf in _leaves(expr):
            d = self.object(leaf.name, leaf.span)
            count += len(d.circuit.nodes) if isinstance(d, CircuitDef) else 1
        width = max(2, len(str(count - 1)))
        counter = iter(range(count))

        def go(e: Expr) -> Circuit:
            if isinstance(e, Ref):
                d = self.objects[e.name]
                if isinstance(d, CircuitDef):
                    inner = d.circuit
                    mapping = {n.id: f"{next(counter):0{width}d}.{n.id.split('.', 1)[1]}" for n in inner.nodes}
                    return C.rename(inner, mapping)
                payload = d.test if isinstance(d, TestDef) else d.event
                return C.single(f"{next(counter):0{width}d}.{e.name}", payload)
            parts = [go(p) for p in e.parts]
            out = parts[0]
            for p, sub in zip(parts[1:], e.parts[1:]):
                try:
                    out = C.seq(out, p) if isinstance(e, Seq) else C.par(out, p)
                except C.CircuitError as exc:
                    first = next(_leaves(sub))
                    raise _Semantic(f"cannot wire: {exc}", first.span) from exc
            return out

        return go(expr)


def analyze(unit: SourceUnit) -> Model:
    """Resolve names and build kernel objects; raises :class:`DslError`."""
    return _Analyzer().run(unit)


def load(text: str) -> Model:
    return analyze(parse(text))


# -- printing ----------------------------------------------------------------


def format_expr(e: Expr, inside_par: bool = False) -> str:
    if isinstance(e, Ref):
        return e.name
    if isinstance(e, Seq):
        text = " ; ".join(format_expr(p) for p in e.parts)
        return f"({text})" if inside_par else text
    return " * ".join(format_expr(p, inside_par=True) for p in e.parts)


def _format_def(d: Def) -> str:
    if isinstance(d, SystemDef):
        if d.parts is not None:
            return f"system {d.name} = {d.parts[0]} * {d.parts[1]}"
        return f"system {d.name} = {d.system.n} |> {d.system.m}"
    if isinstance(d, EventDef):
        e = d.event
        if isinstance(e, StateEvent):
            return f"state {d.name} : {d.systems[0]} = {e}"
        if isinstance(e, EffectEvent):
            return f"effect {d.name} : {d.systems[0]} = {e}"
        return f"transform {d.name} : {d.systems[0]} -> {d.systems[1]} = {e}"
    if isinstance(d, TestDef):
        return f"test {d.name} : {d.kind} = {{{', '.join(d.members)}}}"
    if isinstance(d, CircuitDef):
        return f"circuit {d.name} = {format_expr(d.expr)}"
    if d.outcomes is None:
        return f"eval {d.circuit}"
    return f"eval {d.circuit} @ {', '.join(map(str, d.outcomes))}"


def print_model(model: Model) -> str:
    """Canonical source text, LF line endings, one statement per line."""
    return "".join(_format_def(d) + "\n" for d in model.defs)


# -- execution ---------------------------------------------------------------


@dataclass(frozen=True)
class EvalResult:
    circuit: str
    outcomes: tuple[int, ...] | None
    closed: bool
    probability: int | None = None
    distribution: dict | None = None
    event: Event | None = None
    tests: tuple[str, ...] = ()

    def lines(self) -> list[str]:
        head = f"eval {self.circuit}" + ("" if self.outcomes is None else " @ " + ", ".join(map(str, self.outcomes)))
        if self.probability is not None:
            return [f"{head}: {self.probability}"]
        if self.distribution is not None:
            out = [f"{head}: joint distribution over ({', '.join(self.tests)})"]
            out += [f"  {tuple(k)}: {v}" for k, v in self.distribution.items()]
            return out
        return [f"{head}: {self.event}"]

    def to_dict(self) -> dict:
        d = {"circuit": self.circuit, "outcomes": None if self.outcomes is None else list(self.outcomes),
             "closed": self.closed, "tests": list(self.tests)}
        if self.probability is not None:
            d["probability"] = self.probability
        if self.distribution is not None:
            d["distribution"] = [{"outcomes": list(k), "probability": v} for k, v in self.distribution.items()]
        if self.event is not None:
            d["event"] = str(self.event)
        return d


def run_eval(model: Model, ev: EvalDef) -> EvalResult:
    c = model.circuits[ev.circuit]
    ids = c.test_ids
    names = tuple(i.split(".", 1)[1] for i in ids)
    outcomes = None if ev.outcomes is None else dict(zip(ids, ev.outcomes))
    if C.is_closed(c):
        if outcomes is None:
            return EvalResult(ev.circuit, None, True, distribution=C.joint_distribution(c), tests=names)
        return EvalResult(ev.circuit, ev.outcomes, True, probability=C.evaluate_closed(c, outcomes), tests=names)
    if outcomes is None:
        return EvalResult(ev.circuit, None, False, event=C.evaluate_open(C.coarse_grained(c)), tests=names)
    return EvalResult(ev.circuit, ev.outcomes, False, event=C.evaluate_open(c, outcomes), tests=names)


def execute(model: Model) -> list[EvalResult]:
    return [run_eval(model, ev) for ev in model.evals]
