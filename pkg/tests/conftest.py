import time

import numpy as np
import pytest
from hypothesis import strategies as st

from mdagar.graph import ArealGraph


@st.composite
def random_graph(draw, min_k=1, max_k=12):
    k = draw(st.integers(min_k, max_k))
    pairs = [(a, b) for a in range(k) for b in range(a + 1, k)]
    keep = draw(st.lists(st.booleans(), min_size=len(pairs), max_size=len(pairs)))
    return ArealGraph.from_pairs(range(k), [p for p, t in zip(pairs, keep) if t])


def erdos_renyi(rng, k, p=0.3):
    pairs = [(a, b) for a in range(k) for b in range(a + 1, k) if rng.random() < p]
    return ArealGraph.from_pairs(range(k), pairs)


@pytest.fixture
def path2():
    return ArealGraph.from_pairs(["1", "2"], [(0, 1)])


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# -- acceptance summary --------------------------------------------------------

ACCEPTANCE = {}


class Criterion:
    """Context manager that records one acceptance line, PASS or FAIL."""

    def __init__(self, number: int, title: str, max_seconds: float):
        self.number, self.title, self.max_seconds = number, title, max_seconds
        self.notes = []

    def note(self, text: str) -> None:
        self.notes.append(text)

    def __enter__(self):
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        secs = time.perf_counter() - self._t0
        ok = exc_type is None and secs < self.max_seconds
        detail = "; ".join(self.notes)
        if exc_type is not None:
            detail = (detail + "; " if detail else "") + f"{exc_type.__name__}: {exc}".splitlines()[0]
        elif not ok:
            detail += f"; runtime over {self.max_seconds:.0f} s"
        ACCEPTANCE[self.number] = (ok, self.title, secs, detail)
        if exc_type is None and not ok:
            raise AssertionError(f"criterion {self.number} took {secs:.0f} s "
                                 f"(limit {self.max_seconds:.0f} s)")
        return False


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, title, secs, detail = ACCEPTANCE[n]
        terminalreporter.write_line(
            f"{'PASS' if ok else 'FAIL'}  {n:>2}. {title} ({secs:.1f} s){': ' + detail if detail else ''}")
