import os

import pytest
from hypothesis import HealthCheck, settings, strategies as st

from optlab.kernel import EffectEvent, StateEvent, SystemType, TransformationEvent

settings.register_profile("default", max_examples=150, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=40, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@st.composite
def systems(draw, max_n=3, max_m=3):
    return SystemType.of(draw(st.integers(1, max_n)), draw(st.integers(1, max_m)))


@st.composite
def states(draw, system):
    choice = draw(st.lists(st.one_of(st.none(), st.integers(0, system.m - 1)),
                           min_size=system.n, max_size=system.n))
    return StateEvent(system, tuple((i, v) for i, v in enumerate(choice) if v is not None))


@st.composite
def effects(draw, system):
    values = draw(st.frozensets(st.integers(0, system.m - 1)))
    v = draw(st.integers(0, system.n - 1)) if values else 0
    return EffectEvent(system, v, values)


@st.composite
def transformations(draw, inp, out, full=False):
    cells = []
    for t in range(out.n):
        if not full and draw(st.booleans()) and draw(st.booleans()):
            continue
        a = draw(st.integers(0, inp.n - 1))
        for s1 in range(inp.m):
            w = draw(st.integers(0, out.m - 1)) if full else draw(st.one_of(st.none(), st.integers(0, out.m - 1)))
            if w is not None:
                cells.append(((s1, t), (a, w)))
    return TransformationEvent(inp, out, tuple(cells))


# acceptance bookkeeping: one line per criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


class _Criterion:
    def __init__(self, number: int, title: str):
        self.number, self.title = number, title

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        verdict = "PASS" if exc_type is None else "FAIL"
        line = f"criterion {self.number:2d} {verdict}: {self.title}"
        ACCEPTANCE.append(line)
        print(line)
        return False


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
