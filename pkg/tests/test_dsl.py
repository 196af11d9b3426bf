import pytest

from optlab import dsl
from optlab import kernel as K
from optlab import oracles as O
from optlab.circuit import OBS
from optlab.demos import QUBIT as A, demo_source

HEADER = "system A = 2 |> 2\nsystem B = 2 |> 3\n"


def test_system_literal():
    m = dsl.load("system A = 2 |> 2")
    assert m.systems["A"] == K.SystemType.of(2, 2)


def test_composite_system():
    m = dsl.load(HEADER + "system C = A * B\n")
    assert m.systems["C"] == A * K.SystemType.of(2, 3)


def test_state_literal():
    m = dsl.load(HEADER + "state r : A = {0 -> 1}")
    assert m.events["r"] == K.StateEvent(A, ((0, 1),))


def test_identity_transform_literal():
    m = dsl.load(HEADER + "transform T : A -> A = {(0,0)->(0,0),(1,0)->(0,1),(0,1)->(1,0),(1,1)->(1,1)}")
    T = m.events["T"]
    for rho in O.enumerate_states(A):
        assert K.apply(T, rho) == rho
    assert T == K.identity(A)


def test_comments_crlf_and_whitespace():
    text = "# header\r\nsystem   A=2|>2   # trailing\r\n\r\nstate r:A={ 0->1 ,1 -> 0 }\r\n"
    m = dsl.load(text)
    assert m.events["r"] == K.deterministic_state(A, (1, 0))
    assert dsl.print_model(m) == "system A = 2 |> 2\nstate r : A = {0 -> 1, 1 -> 0}\n"


def test_alice_demo_file():
    m = dsl.load(demo_source("alice"))
    assert set(m.tests) == {"P", "D0", "D1"}
    assert m.tests["D0"].kind == OBS
    assert m.tests["D0"].events == (K.effect(A, 0, {0}), K.effect(A, 0, {1}))
    assert m.tests["D1"].events == (K.effect(A, 1, {0}), K.effect(A, 1, {1}))
    results = {(r.circuit, r.outcomes): r for r in dsl.execute(m)}
    assert results[("alice0", (0, 1))].probability == 1
    assert results[("alice1", (0, 1))].probability == 0


def test_signaling_demo_file():
    m = dsl.load(demo_source("signaling"))
    out = {r.circuit: r for r in dsl.execute(m)}
    assert out["bob0"].event == K.StateEvent(A, ((0, 0), (1, 0)))
    assert out["bob1"].event == K.StateEvent(A, ((0, 1), (1, 1)))
    # Alice's D0 outcome is the first coordinate, Bob's the second
    assert [k for k, v in out["read0"].distribution.items() if v] == [(0, 0)]
    assert [k for k, v in out["read1"].distribution.items() if v] == [(1, 0)]


def test_circuit_references_are_inlined():
    text = demo_source("alice") + "circuit both = alice0 * alice1\neval both @ 0, 1, 0, 1\n"
    m = dsl.load(text)
    c = m.circuits["both"]
    assert [n.id for n in c.nodes] == ["00.P", "01.D0", "02.P", "03.D1"]
    assert dsl.execute(m)[-1].probability == 0


def test_parentheses_and_flattening():
    text = demo_source("signaling") + "circuit x = ((eps ; (id * id)) ; (D0 * D1))\n"
    m = dsl.load(text)
    assert dsl.print_model(m).splitlines()[-1] == "circuit x = eps ; id * id ; D0 * D1"
    text = demo_source("signaling") + "circuit y = eps ; (id ; id) * D0\n"
    line = dsl.print_model(dsl.load(text)).splitlines()[-1]
    assert line == "circuit y = eps ; (id ; id) * D0"


def test_open_eval_prints_normal_form():
    text = HEADER + "state r : A = {1 -> 0}\ntransform T : A -> A = {(0,0)->(1,1),(1,0)->(1,0)}\ncircuit c = r ; T\neval c\n"
    [res] = dsl.execute(dsl.load(text))
    assert not res.closed and res.event == K.StateEvent(A, ((0, 1),))


def test_print_is_stable():
    src = demo_source("signaling")
    first = dsl.print_model(dsl.load(src))
    assert first == dsl.print_model(dsl.load(src))
    assert dsl.print_model(dsl.load(first)) == first


@pytest.mark.parametrize("name", ["alice", "signaling"])
def test_demo_round_trip(name):
    m = dsl.load(demo_source(name))
    text = dsl.print_model(m)
    assert dsl.parse(text) == dsl.parse(dsl.print_model(dsl.load(text)))
    assert dsl.load(text) == m


def _event_file(system_line, sys_name, events):
    lines = [system_line]
    for k, e in enumerate(events):
        if isinstance(e, K.StateEvent):
            lines.append(f"state x{k} : {sys_name} = {e}")
        elif isinstance(e, K.EffectEvent):
            lines.append(f"effect x{k} : {sys_name} = {e}")
        else:
            lines.append(f"transform x{k} : {sys_name} -> {sys_name} = {e}")
    return "\n".join(lines) + "\n"


@pytest.mark.parametrize("size", [(2, 2), (1, 3)])
def test_every_enumerated_event_round_trips(size):
    s = K.SystemType.of(*size)
    events = O.enumerate_states(s) + O.enumerate_effects(s) + O.enumerate_transformations(s, s)
    text = _event_file(f"system S = {size[0]} |> {size[1]}", "S", events)
    m = dsl.load(text)
    loaded = m.events
    assert [loaded[f"x{k}"] for k in range(len(events))] == events
    assert dsl.print_model(m) == text


# malformed inputs: (source, expected line, fragment of the message)
MALFORMED = [
    ("system A = 2 |>", 1, "number"),
    ("system A = 2 > 2", 1, "unexpected character"),
    ("system = 2 |> 2", 1, "identifier"),
    ("sytem A = 2 |> 2", 1, "start of statement"),
    ("system A = 0 |> 2", 1, "at least 1"),
    ("system A = 2 |> 2\nsystem A = 3 |> 3", 2, "duplicate name"),
    ("system A = 2 |> 2\nsystem C = A * Q", 2, "unknown system 'Q'"),
    ("system A = 2 |> 2\nstate r : A = {0 -> 1, 0 -> 0}", 2, "assigned twice"),
    ("system A = 2 |> 2\nstate r : A = {2 -> 0}", 2, "out of range"),
    ("system A = 2 |> 2\nstate r : A = {0 -> 5}", 2, "out of range"),
    ("system A = 2 |> 2\nstate r : A = {0 -> 1", 2, "end of input"),
    ("system A = 2 |> 2\nstate r : A = {0 1}", 2, "'->'"),
    ("system A = 2 |> 2\nstate r : Z = {0 -> 1}", 2, "unknown system 'Z'"),
    ("system A = 2 |> 2\neffect e : A = [v = 0; E = {0, 0}]", 2, "repeated value"),
    ("system A = 2 |> 2\neffect e : A = [v = 3; E = {0}]", 2, "out of range"),
    ("system A = 2 |> 2\neffect e : A = [w = 0; E = {0}]", 2, "'v'"),
    ("system A = 2 |> 2\neffect e : A = [v = 0, E = {0}]", 2, "';'"),
    ("system A = 2 |> 2\ntransform T : A -> A = {(0,0)->(0,0),(1,0)->(1,1)}", 2, "anchors"),
    ("system A = 2 |> 2\ntransform T : A -> A = {(0,0)->(0,0),(0,0)->(0,1)}", 2, "defined twice"),
    ("system A = 2 |> 2\ntransform T : A -> A = {(0,0)->(0,0)", 2, "end of input"),
    ("system A = 2 |> 2\nstate r : A = {0 -> 1}\ntest P : prep = {r}", 3, "events do not sum to deterministic"),
    ("system A = 2 |> 2\nstate r : A = {0 -> 1, 1 -> 0}\nstate q : A = {0 -> 0, 1 -> 1}\ntest P : prep = {r, q}", 4,
     "in two summands"),
    ("system A = 2 |> 2\nstate r : A = {0 -> 1, 1 -> 0}\ntest P : cook = {r}", 3, "'prep'"),
    ("system A = 2 |> 2\ntest P : prep = {}", 2, "at least one event"),
    ("system A = 2 |> 2\ntest P : prep = {nope}", 2, "unknown name 'nope'"),
    ("system A = 2 |> 2\nstate r : A = {0 -> 1, 1 -> 0}\neffect e : A = [v = 0; E = {0, 1}]\ntest P : prep = {e}", 4,
     "declared prep"),
    ("system A = 2 |> 2\nsystem B = 3 |> 2\nstate r : A = {0 -> 1, 1 -> 0}\neffect e : B = [v = 0; E = {0, 1}]\n"
     "circuit c = r ; e", 5, "cannot wire"),
    ("system A = 2 |> 2\nstate r : A = {0 -> 1, 1 -> 0}\ncircuit c = r ; ", 3, "end of input"),
    ("system A = 2 |> 2\nstate r : A = {0 -> 1, 1 -> 0}\ncircuit c = (r", 3, "')'"),
    ("system A = 2 |> 2\nstate r : A = {0 -> 1, 1 -> 0}\ncircuit c = r * A", 3, "a system, not an event"),
    ("eval nothing", 1, "unknown name 'nothing'"),
    ("system A = 2 |> 2\nstate r : A = {0 -> 1, 1 -> 0}\neval r", 3, "is not a circuit"),
    ("system state = 2 |> 2", 1, "keyword 'state' cannot be used as a name"),
    ("system A = 2 |> 2 $", 1, "unexpected character '$'"),
]


def test_malformed_corpus_size():
    assert len(MALFORMED) >= 20


@pytest.mark.parametrize("source,line,fragment", MALFORMED, ids=[f"case{k:02d}" for k in range(len(MALFORMED))])
def test_malformed_input_yields_located_diagnostic(source, line, fragment):
    with pytest.raises(dsl.DslError) as info:
        dsl.load(source)
    diags = info.value.diagnostics
    assert diags and all(d.line >= 1 and d.col >= 1 for d in diags)
    assert any(d.line == line and fragment in str(d) for d in diags), [str(d) for d in diags]


def test_eval_outcome_checks():
    base = demo_source("alice")
    with pytest.raises(dsl.DslError, match="2 tests but 1 outcomes"):
        dsl.load(base + "eval alice0 @ 0\n")
    with pytest.raises(dsl.DslError, match="out of range"):
        dsl.load(base + "eval alice0 @ 0, 7\n")


def test_parser_recovers_and_reports_several_errors():
    src = "system A = 2 |>\nsystem B = 2 |> 2\nstate r : B = {0 -> }\nstate q : B = {0 -> 0}\n"
    with pytest.raises(dsl.DslError) as info:
        dsl.load(src)
    assert [d.line for d in info.value.diagnostics] == [2, 3]


def test_syntax_error_lists_expected_tokens():
    with pytest.raises(dsl.DslError) as info:
        dsl.parse("system A = 2 |> 2\nstate r : A = {0 -> 1 0 -> 0}")
    d = info.value.diagnostics[0]
    assert (d.line, d.col) == (2, 23)
    assert set(d.expected) == {"','", "'}'"}
