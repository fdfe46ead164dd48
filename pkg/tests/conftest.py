import sys
import numpy as np
import pytest
from hypothesis import settings
from hypothesis import strategies as st

from kep.core import Instance
from kep.gen import GenConfig, edge_capacity, generate

settings.register_profile("kep", deadline=None, max_examples=60)
settings.load_profile("kep")


def small(n, e, seed, type_consistent=True, fractions=None):
    """Random instance with at most ``e`` edges (capped at capacity)."""
    kw = {} if fractions is None else dict(zip(("frac_pdp", "frac_ndd", "frac_p"), fractions))
    cfg = GenConfig(n_nodes=n, n_edges=0, seed=seed, type_consistent=type_consistent, **kw)
    cap = edge_capacity(cfg)
    cfg = GenConfig(n_nodes=n, n_edges=min(e, cap), seed=seed,
                    type_consistent=type_consistent, **kw)
    return generate(cfg)


@st.composite
def instances(draw, min_nodes=1, max_nodes=9, max_edges=24):
    """Arbitrary typed digraphs, including type-inconsistent edges."""
    n = draw(st.integers(min_nodes, max_nodes))
    types = draw(st.lists(st.sampled_from(["NDD", "PDP", "P"]), min_size=n, max_size=n))
    pairs = [(a, b) for a in range(n) for b in range(n) if a != b]
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=max_edges)) if pairs else []
    ws = draw(st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=len(chosen),
                       max_size=len(chosen)))
    return Instance.from_edges(types, [(a, b, w) for (a, b), w in zip(chosen, ws)])


@pytest.fixture
def two_cycle():
    return Instance.from_edges(["PDP", "PDP"], [(0, 1, 0.4), (1, 0, 0.6)])


@pytest.fixture
def three_cycle():
    return Instance.from_edges(["PDP"] * 3, [(0, 1, 0.5), (1, 2, 0.5), (2, 0, 0.5)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
