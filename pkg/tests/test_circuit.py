import random
import pytest
from hypothesis import given, settings, strategies as st

from optlab import circuit as C
from optlab import kernel as K
from optlab.circuit import CHAN, OBS, PREP, Circuit, CircuitError, InvalidTest, Node, OutcomeError, Test, Wire
from optlab.demos import QUBIT as A, alice_preparation, bob_state, pointer_test
from optlab.oracles import enumerate_obs_tests, random_circuit

B3 = K.SystemType.of(3, 2)


def det_prep(system, f, label="S"):
    return Test(label, PREP, (K.deterministic_state(system, f),))


def det_obs(system, v=0, label="E"):
    return Test(label, OBS, (K.deterministic_effect(system, v),))


# -- tests and typing --------------------------------------------------------


def test_test_invariants():
    with pytest.raises(InvalidTest, match="events do not sum to deterministic"):
        Test("P", PREP, (K.atomic_state(A, 0, 1),))
    with pytest.raises(InvalidTest):
        Test("P", OBS, (K.atomic_state(A, 0, 1), K.atomic_state(A, 1, 0)))
    with pytest.raises(InvalidTest):
        Test("P", PREP, (K.atomic_state(A, 0, 1), K.atomic_state(A, 0, 1), K.atomic_state(A, 1, 0)))
    with pytest.raises(InvalidTest):
        Test("P", PREP, ())
    P = alice_preparation()
    assert P.coarse == K.deterministic_state(A, (1, 0)) and len(P) == 2


def test_typecheck_ok_and_mismatch():
    assert C.typecheck(C.chain(alice_preparation(), pointer_test(0))) == []
    c = Circuit((Node("p", alice_preparation()), Node("d", pointer_test(0, B3))), (Wire(("p", 0), ("d", 0)),))
    errors = C.typecheck(c)
    assert any("p.0 -> d.0" in e and "type mismatch" in e for e in errors)
    with pytest.raises(CircuitError):
        C.seq(C.single("p", alice_preparation()), C.single("d", pointer_test(0, B3)))


def test_typecheck_cycle_and_reuse():
    ident = K.identity(A)
    cyc = Circuit((Node("x", ident), Node("y", ident)), (Wire(("x", 0), ("y", 0)), Wire(("y", 0), ("x", 0))))
    assert C.typecheck(cyc) == ["wiring has a cycle"]
    with pytest.raises(CircuitError):
        C.topological_order(cyc)
    reuse = Circuit(
        (Node("p", alice_preparation()), Node("d", pointer_test(0)), Node("e", pointer_test(1))),
        (Wire(("p", 0), ("d", 0)), Wire(("p", 0), ("e", 0))),
    )
    assert any("output port used twice" in e for e in C.typecheck(reuse))
    bad = Circuit((Node("p", alice_preparation()),), (Wire(("p", 0), ("q", 0)),))
    assert any("unknown node 'q'" in e for e in C.typecheck(bad))


def _two_sources_one_reader():
    # two sources meet in a two-input box D whose output is read by E
    ab = A * A
    swap = K.channel(ab, A, lambda t: 0, lambda t, s1: s1 // 2)
    nodes = (
        Node("A", alice_preparation()),
        Node("B", det_prep(A, (0, 1), "B")),
        Node("D", Test("D", CHAN, (swap,)), inputs=(A, A), outputs=(A,)),
        Node("E", pointer_test(0)),
    )
    wires = (Wire(("A", 0), ("D", 0)), Wire(("B", 0), ("D", 1)), Wire(("D", 0), ("E", 0)))
    return Circuit(nodes, wires)


def test_precedence_relations():
    c = _two_sources_one_reader()
    assert C.typecheck(c) == []
    assert C.precedes_immediately(c, "A", "D")
    assert not C.precedes_immediately(c, "B", "E")
    assert C.precedes(c, "B", "E")
    assert not C.precedes(c, "E", "B")
    for x in "ABDE":
        assert not C.precedes(c, x, x)
    with pytest.raises(CircuitError, match="unknown node 'Z'"):
        C.precedes(c, "A", "Z")


def test_precedes_is_strict_partial_order():
    rng = random.Random(3)
    for _ in range(30):
        c = random_circuit(rng)
        ids = [n.id for n in c.nodes]
        rel = {(a, b) for a in ids for b in ids if C.precedes(c, a, b)}
        assert all((a, a) not in rel for a in ids)
        assert all((b, a) not in rel for a, b in rel)
        assert all((a, d) in rel for a, b in rel for c2, d in rel if b == c2)


# -- evaluation --------------------------------------------------------------


def test_alice_numbers():
    P = alice_preparation()
    c0 = C.chain(P, pointer_test(0), ids=("P", "D"))
    c1 = C.chain(P, pointer_test(1), ids=("P", "D"))
    # f = (1, 0): pointer 0 holds 1, pointer 1 holds 0
    assert C.evaluate_closed(c0, {"P": 0, "D": 1}) == 1
    assert C.marginal_distribution(c0, "P") == (1, 0)
    assert C.marginal_distribution(c1, "P") == (0, 1)
    assert sum(C.joint_distribution(c0).values()) == 1
    with pytest.raises(OutcomeError):
        C.evaluate_closed(c0, {"P": 2, "D": 0})
    with pytest.raises(CircuitError):
        C.evaluate_closed(C.single("P", P))


def test_zero_event_annihilates():
    zero = K.StateEvent(A, ())
    c = C.chain(zero, pointer_test(0))
    assert all(v == 0 for v in C.joint_distribution(c).values())


def test_singleton_deterministic_circuit():
    c = C.chain(det_prep(A, (0, 0)), det_obs(A))
    assert C.joint_distribution(c) == {(0, 0): 1}


def test_evaluate_open_examples():
    T = K.channel(A, A, lambda t: 1 - t, lambda t, s1: 1 - s1)
    assert C.evaluate_open(C.single("t", T)) == T
    rho = K.deterministic_state(A, (0, 1))
    assert C.evaluate_open(C.chain(rho, T)) == K.apply(T, rho)
    sigma = K.atomic_state(B3, 2, 1)
    assert C.evaluate_open(C.par(C.single("x", rho), C.single("y", sigma))) == K.compose_par(rho, sigma)


def test_parallel_closed_circuits_multiply():
    c1 = C.chain(alice_preparation(), pointer_test(0), ids=("a", "b"))
    c2 = C.chain(alice_preparation(), pointer_test(1), ids=("c", "d"))
    both = C.par(c1, c2)
    j1, j2, j = C.joint_distribution(c1), C.joint_distribution(c2), C.joint_distribution(both)
    for k1, p1 in j1.items():
        for k2, p2 in j2.items():
            assert j[k1 + k2] == p1 * p2


def test_signaling_circuit_fails_no_backward_check():
    eps = bob_state()
    nodes = (Node("eps", eps), Node("alice", pointer_test(0)), Node("bob", pointer_test(0)))
    wires = (Wire(("eps", 0), ("alice", 0)), Wire(("eps", 1), ("bob", 0)))
    c = Circuit(nodes, wires)
    assert C.no_backward_signaling_check(c, "alice", "bob", [pointer_test(1)]) == 0
    # candidate precedes target: nothing to check
    chain = C.chain(alice_preparation(), pointer_test(0), ids=("P", "D"))
    assert C.no_backward_signaling_check(chain, "D", "P", []) == 1


def test_single_pointer_has_no_backward_signaling():
    one = K.SystemType.of(1, 3)
    prep = Test("P", PREP, (K.atomic_state(one, 0, 2),))
    c = C.chain(prep, Test("D", OBS, (K.deterministic_effect(one, 0),)), ids=("P", "D"))
    assert C.no_backward_signaling_check(c, "P", "D", enumerate_obs_tests(one)) == 1


@settings(max_examples=60)
@given(st.integers(0, 10**6))
def test_random_circuits_are_deterministic(seed):
    c = random_circuit(random.Random(seed))
    dist = C.joint_distribution(c)
    assert set(dist.values()) <= {0, 1}
    assert sum(dist.values()) == 1


@settings(max_examples=40)
@given(st.integers(0, 10**6))
def test_marginal_equals_coarse_grained(seed):
    rng = random.Random(seed)
    c = random_circuit(rng)
    target = rng.choice(c.test_ids)
    coarse = C.replace_payload(c, target, c.node(target).payload.coarse)
    rest = [i for i in c.test_ids if i != target]
    k = c.test_ids.index(target)
    summed = {}
    for tup, p in C.joint_distribution(c).items():
        key = tup[:k] + tup[k + 1:]
        summed[key] = summed.get(key, 0) + p
    assert coarse.test_ids == rest
    assert C.joint_distribution(coarse) == summed


@settings(max_examples=40)
@given(st.integers(0, 10**6))
def test_evaluation_ignores_node_naming(seed):
    rng = random.Random(seed)
    c = random_circuit(rng)
    ids = [n.id for n in c.nodes]
    shuffled = ids[:]
    rng.shuffle(shuffled)
    mapping = {a: f"n{b}" for a, b in zip(ids, shuffled)}
    renamed = C.rename(c, mapping)
    d1, d2 = C.joint_distribution(c), C.joint_distribution(renamed)
    order = [renamed.test_ids.index(mapping[i]) for i in c.test_ids]
    assert {tuple(t[j] for j in order): p for t, p in d2.items()} == d1


def test_subdiagram_replaced_by_normal_form():
    rng = random.Random(11)
    from optlab.oracles import random_test

    for _ in range(40):
        P = random_test(rng, PREP, K.TRIVIAL, A)
        T1 = random_test(rng, CHAN, A, A)
        T2 = random_test(rng, CHAN, A, A)
        D = random_test(rng, OBS, A, K.TRIVIAL)
        full = C.chain(P, T1, T2, D, ids=("p", "t1", "t2", "d"))
        for i in range(len(T1)):
            for j in range(len(T2)):
                inner = C.evaluate_open(C.chain(T1, T2, ids=("t1", "t2")), {"t1": i, "t2": j})
                short = C.chain(P, inner, D, ids=("p", "m", "d"))
                for a in range(len(P)):
                    for b in range(len(D)):
                        lhs = C.evaluate_closed(full, {"p": a, "t1": i, "t2": j, "d": b})
                        assert lhs == C.evaluate_closed(short, {"p": a, "d": b})


def test_evaluate_open_matches_compose_seq():
    rng = random.Random(5)
    from optlab.oracles import random_test

    for _ in range(30):
        T1 = random_test(rng, CHAN, A, B3)
        T2 = random_test(rng, CHAN, B3, A)
        c = C.chain(T1, T2, ids=("x", "y"))
        for i, j in [(i, j) for i in range(len(T1)) for j in range(len(T2))]:
            assert C.evaluate_open(c, {"x": i, "y": j}) == K.compose_seq(T1.events[i], T2.events[j])
        assert C.evaluate_open(C.coarse_grained(c)) == K.compose_seq(T1.coarse, T2.coarse)
