"""The two worked examples on ``2 |> 2``: Alice's preparation/observation
choice and Bob's remote influence through a shared deterministic state."""

from __future__ import annotations

from importlib import resources

from .circuit import OBS, PREP, Test
from .kernel import StateEvent, SystemType, atomic_state, compose_par, effect, sum_events

QUBIT = SystemType.of(2, 2)

# any f works for Alice; this is the one the shipped demo file uses
ALICE_F = (1, 0)


def alice_preparation(system: SystemType = QUBIT, f=ALICE_F) -> Test:
    """``{alpha_{f,{i}}}_i``: one outcome per pointer."""
    return Test("P", PREP, tuple(StateEvent(system, ((i, f[i]),)) for i in range(system.n)))


def pointer_test(v: int, system: SystemType = QUBIT) -> Test:
    """``D_v = {a_{v,{j}}}_j``: read the value stored at pointer ``v``."""
    return Test(f"D{v}", OBS, tuple(effect(system, v, {j}) for j in range(system.m)))


def bob_state() -> StateEvent:
    """``sum_{s,t} alpha_{s,t} (x) alpha_{t,s}`` on ``(2|>2)(2|>2)``."""
    parts = [compose_par(atomic_state(QUBIT, s, t), atomic_state(QUBIT, t, s)) for s in range(2) for t in range(2)]
    return sum_events(parts)


def constant_state(value: int, system: SystemType = QUBIT) -> StateEvent:
    return StateEvent(system, tuple((i, value) for i in range(system.n)))


def demo_source(name: str) -> str:
    """Text of a shipped ``.opt`` file (``alice`` or ``signaling``)."""
    return resources.files("optlab.data").joinpath(f"{name}.opt").read_text(encoding="utf-8")
