import pytest

from clonemarks.identity import EntityId
from clonemarks.synth import FIXTURES, generate
from clonemarks.trace import DAY, ContactEvent, ContactTrace, split


def N(name: str) -> EntityId:
    return EntityId.node(name)


def trace_of(events, span=None) -> ContactTrace:
    """Build a trace from (a, b, start, end) tuples of node names."""
    evs = [ContactEvent.make(N(a), N(b), s, e) for a, b, s, e in events]
    return ContactTrace.from_events(evs, span=span)


def day(d: float, offset: int = 0) -> int:
    return int(d * DAY) + offset


@pytest.fixture(scope="session")
def small50_trace():
    return generate(FIXTURES["small50"])


@pytest.fixture(scope="session")
def small50_parts(small50_trace):
    return split(small50_trace, 0.25)


@pytest.fixture(scope="session")
def tiny20_trace():
    return generate(FIXTURES["tiny20"])


# -- acceptance reporting -----------------------------------------------------------

_ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


class _Criterion:
    def __init__(self, number: int, title: str):
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        _ACCEPTANCE[self.number] = (self.title, exc_type is None, self.detail)
        return False


@pytest.fixture
def criterion():
    """``with criterion(n, title) as c:`` records a pass/fail line for the run summary."""
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, ok, detail = _ACCEPTANCE[n]
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
