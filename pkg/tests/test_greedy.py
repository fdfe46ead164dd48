import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kep.core import Instance, ContractError, score, validate
from kep.greedy import greedy_cycles, greedy_paths

from conftest import instances, small


@pytest.fixture
def fork():
    # n=0 NDD, p1=1, p2=2 PDP, q=3 P
    return Instance.from_edges(["NDD", "PDP", "PDP", "P"],
                               [(0, 1, 0.3), (0, 2, 0.8), (2, 3, 0.5)])


def test_paths_no_ndd():
    inst = Instance.from_edges(["PDP", "PDP", "P"], [(0, 1, 0.5), (1, 2, 0.5)])
    assert not greedy_paths(inst).any()


def test_paths_hand_trace(fork):
    sel = greedy_paths(fork)
    assert np.flatnonzero(sel).tolist() == [1, 2]
    assert score(fork, sel) == pytest.approx(1.3, abs=1e-12)


def test_paths_rank_separate_from_weight(fork):
    sel = greedy_paths(fork, rank=np.array([0.9, 0.1, 0.0]))
    assert np.flatnonzero(sel).tolist() == [0]
    assert score(fork, sel) == pytest.approx(0.3, abs=1e-12)


def test_paths_single_edge_donation():
    inst = Instance.from_edges(["NDD", "P"], [(0, 1, 0.2)])
    assert greedy_paths(inst).tolist() == [True]


def test_paths_length_cap():
    inst = Instance.from_edges(["NDD", "PDP", "PDP", "PDP"], [(0, 1, 1), (1, 2, 1), (2, 3, 1)])
    assert greedy_paths(inst).sum() == 3
    assert np.flatnonzero(greedy_paths(inst, k=2)).tolist() == [0, 1]


def test_paths_tie_smallest_index():
    inst = Instance.from_edges(["NDD", "PDP", "PDP"], [(0, 2, 0.5), (0, 1, 0.5)])
    assert np.flatnonzero(greedy_paths(inst)).tolist() == [0]


def test_cycles_no_pdp_edges(fork):
    inst = Instance.from_edges(["NDD", "P"], [(0, 1, 0.5)])
    assert not greedy_cycles(inst).any()


def test_cycles_two_cycle():
    inst = Instance.from_edges(["PDP", "PDP"], [(0, 1, 0.6), (1, 0, 0.4)])
    assert greedy_cycles(inst).tolist() == [True, True]


def test_cycles_dead_end_stops():
    # a->b is ranked first but b has nowhere to go; c<->d is disjoint
    inst = Instance.from_edges(["PDP"] * 4, [(0, 1, 0.9), (2, 3, 0.5), (3, 2, 0.4)])
    assert not greedy_cycles(inst).any()
    assert greedy_cycles(inst, restart=True).tolist() == [False, True, True]


def test_cycles_trim():
    # walk 0->1->2->1 re-enters 1, keeping 1->2->1
    inst = Instance.from_edges(["PDP"] * 3, [(0, 1, 0.9), (1, 2, 0.8), (2, 1, 0.7), (2, 0, 0.1)])
    assert np.flatnonzero(greedy_cycles(inst)).tolist() == [1, 2]
    assert not greedy_cycles(inst, trim=False).any()


def test_cycles_length_cap(three_cycle):
    assert greedy_cycles(three_cycle).sum() == 3
    assert not greedy_cycles(three_cycle, k=2).any()


def test_rank_length_checked(fork):
    with pytest.raises(ContractError):
        greedy_paths(fork, rank=np.zeros(2))
    with pytest.raises(ContractError):
        greedy_cycles(fork, rank=np.array([0.0, np.inf, 0.0]))


@given(instances(max_nodes=9, max_edges=30), st.sampled_from([None, 1, 2, 3]))
def test_outputs_always_valid(inst, k):
    assert validate(inst, greedy_paths(inst, k=k), k).valid
    assert validate(inst, greedy_cycles(inst, k=k), k).valid
    assert validate(inst, greedy_cycles(inst, k=k, restart=True), k).valid
    assert validate(inst, greedy_cycles(inst, k=k, trim=False), k).valid


@pytest.mark.parametrize("seed", range(5))
def test_valid_at_scale(seed):
    inst = small(300, 5500, seed)
    assert validate(inst, greedy_paths(inst)).valid
    assert validate(inst, greedy_cycles(inst)).valid


def test_deterministic():
    inst = small(120, 1500, 3)
    assert np.array_equal(greedy_paths(inst), greedy_paths(inst))
    assert np.array_equal(greedy_cycles(inst), greedy_cycles(inst))


@given(instances(max_nodes=9, max_edges=30), st.integers(0, 2 ** 20))
def test_global_monotone_transform_invariant(inst, seed):
    rank = np.random.default_rng(seed).random(inst.n_edges)
    for f in (np.exp, lambda x: 3 * x - 1, np.arctan):
        assert np.array_equal(greedy_paths(inst, f(rank)), greedy_paths(inst, rank))
        assert np.array_equal(greedy_cycles(inst, f(rank)), greedy_cycles(inst, rank))


@given(st.integers(0, 2 ** 20))
def test_per_source_transform_single_ndd(seed):
    # with one NDD every argmax compares edges of a single source
    rng = np.random.default_rng(seed)
    inst = small(12, 60, seed, fractions=(0.84, 0.08, 0.08))
    if (inst.types == 0).sum() != 1:
        return
    rank = rng.random(inst.n_edges)
    scale = rng.uniform(0.1, 10, inst.n_nodes)
    shift = rng.uniform(-5, 5, inst.n_nodes)
    moved = rank * scale[inst.src] + shift[inst.src]
    assert np.array_equal(greedy_paths(inst, moved), greedy_paths(inst, rank))
