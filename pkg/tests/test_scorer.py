import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kep.core import ContractError, Instance
from kep.gen import permute_nodes
from kep.greedy import greedy_paths
from kep.scorer import (
    EdgeScores,
    ScorerConfig,
    ScorerParams,
    backward,
    forward,
    init,
    load_checkpoint,
    node_wise_softmax,
    param_shapes,
    save_checkpoint,
    score_edges,
    threshold_predict,
)

from conftest import instances, small
from gradcheck import block_errors

CFG = ScorerConfig()


def perturbed(config=CFG, seed=0, scale=0.3):
    """Params with every block nonzero, so every gradient path carries signal."""
    p = init(config, seed)
    rng = np.random.default_rng(seed + 1)
    for t in p.tensors.values():
        t += rng.normal(0, scale, t.shape)
    return p


def test_init_deterministic():
    a, b = init(CFG, 3), init(CFG, 3)
    assert all(np.array_equal(a[k], b[k]) for k in a.tensors)


def test_shapes():
    p = init(ScorerConfig(hidden_dim=5))
    assert {k: v.shape for k, v in p.items()} == param_shapes(ScorerConfig(hidden_dim=5))
    assert p["edge_W1"].shape == (11, 5)


@pytest.mark.parametrize("bad", [dict(hidden_dim=0), dict(mp_rounds=2), dict(dropout_rate=1.0),
                                 dict(softmax_sign="up"), dict(node_feature_mode="degree")])
def test_config_checked(bad):
    with pytest.raises(ContractError):
        ScorerConfig(**bad).check()


@given(instances(max_nodes=8))
def test_fresh_raw_equals_weights(inst):
    if inst.n_edges == 0:
        return
    s = score_edges(init(CFG, 1), inst)
    assert np.array_equal(s.raw, inst.w)


@pytest.mark.parametrize("seed", range(5))
def test_fresh_scorer_reproduces_greedy(seed):
    inst = small(80, 900, seed)
    s = score_edges(init(CFG, seed), inst)
    assert np.array_equal(greedy_paths(inst, s.raw), greedy_paths(inst))


@given(instances(max_nodes=8), st.integers(0, 100))
def test_prob_sums_per_source(inst, seed):
    if inst.n_edges == 0:
        return
    prob = score_edges(perturbed(seed=seed), inst).prob
    sums = np.bincount(inst.src, weights=prob, minlength=inst.n_nodes)
    has_out = np.bincount(inst.src, minlength=inst.n_nodes) > 0
    assert np.all(np.abs(sums[has_out] - 1.0) <= 1e-9)
    assert np.all(prob > 0)


def test_single_edge_prob_one():
    inst = Instance.from_edges(["NDD", "P"], [(0, 1, 0.3)])
    assert score_edges(perturbed(), inst).prob.tolist() == [1.0]


def test_softmax_examples():
    inst = Instance.from_edges(["PDP"] * 3, [(0, 1, 0.1), (0, 2, 0.1)])
    assert np.allclose(node_wise_softmax([0.7, 0.7], inst), [0.5, 0.5], atol=1e-15)
    one = Instance.from_edges(["PDP"] * 2, [(0, 1, 0.1)])
    assert node_wise_softmax([4.0], one).tolist() == [1.0]
    p = node_wise_softmax([0.0, math.log(3.0)], inst, sign="paper_negative")
    assert abs(p[0] - 0.75) < 1e-12 and abs(p[1] - 0.25) < 1e-12


def test_softmax_destination_groups():
    inst = Instance.from_edges(["PDP"] * 3, [(0, 2, 0.1), (1, 2, 0.1), (0, 1, 0.5)])
    p = node_wise_softmax([0.0, math.log(3.0), 2.0], inst, group_by="destination")
    assert np.allclose(p, [0.25, 0.75, 1.0], atol=1e-12)


def test_softmax_rejects_bad_input():
    inst = Instance.from_edges(["PDP"] * 2, [(0, 1, 0.1)])
    with pytest.raises(ContractError):
        node_wise_softmax([1.0, 2.0], inst)
    with pytest.raises(ContractError):
        node_wise_softmax([np.nan], inst)


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=6, unique=True))
def test_sign_ordering(raw):
    n = len(raw)
    inst = Instance.from_edges(["PDP"] * (n + 1), [(0, i + 1, 0.5) for i in range(n)])
    keep = node_wise_softmax(raw, inst, sign="order_preserving")
    flip = node_wise_softmax(raw, inst, sign="paper_negative")
    order = np.argsort(raw, kind="stable")
    assert np.all(np.diff(keep[order]) >= 0)
    assert np.all(np.diff(flip[order]) <= 0)


def test_threshold_examples():
    inst = Instance.from_edges(["PDP"] * 4, [(0, 1, 0.1), (0, 2, 0.1), (0, 3, 0.1), (1, 2, 0.4)])
    prob = node_wise_softmax(np.zeros(4), inst)
    s = EdgeScores(np.zeros(4), prob)
    assert threshold_predict(s, 0.5).tolist() == [False, False, False, True]
    assert threshold_predict(s, 0.0).all()


@pytest.mark.parametrize("seed", range(3))
def test_permutation_equivariance(seed):
    inst = small(20, 90, seed)
    perm = np.random.default_rng(seed).permutation(inst.n_nodes)
    p = perturbed(seed=seed)
    a = score_edges(p, inst)
    b = score_edges(p, permute_nodes(inst, perm))
    assert np.allclose(a.raw, b.raw, atol=1e-12) and np.allclose(a.prob, b.prob, atol=1e-12)


def test_eval_mode_deterministic_and_dropout_varies():
    inst = small(20, 90, 1)
    p = perturbed()
    assert np.array_equal(score_edges(p, inst).raw, score_edges(p, inst).raw)
    r1 = forward(p, inst, training=True, dropout_seed=1)[0].raw
    r2 = forward(p, inst, training=True, dropout_seed=2)[0].raw
    r1b = forward(p, inst, training=True, dropout_seed=1)[0].raw
    assert not np.array_equal(r1, r2) and np.array_equal(r1, r1b)


@pytest.mark.parametrize("training", [False, True])
def test_backward_matches_finite_differences(training):
    cfg = ScorerConfig(hidden_dim=4)
    inst = small(8, 20, 3, fractions=(0.6, 0.2, 0.2))
    p = perturbed(cfg, seed=2)
    coeff = np.random.default_rng(0).normal(size=inst.n_edges)
    errs = block_errors(p, inst, coeff, training, seed=5)
    assert max(errs.values()) < 1e-4, errs


def test_zero_upstream_gradient():
    inst = small(10, 30, 0)
    p = perturbed()
    _, cache = forward(p, inst)
    grads = backward(p, inst, cache, np.zeros(inst.n_edges))
    assert all(not g.any() for g in grads.values())


def test_edgeless_graph_zero_gradient():
    inst = Instance.from_edges(["PDP"] * 3, [])
    p = perturbed()
    s, cache = forward(p, inst)
    assert s.raw.size == 0
    grads = backward(p, inst, cache, np.zeros(0))
    assert all(not g.any() for g in grads.values())


def test_backward_rejects_foreign_cache():
    a, b = small(10, 30, 0), small(10, 30, 1)
    p = perturbed()
    _, cache = forward(p, a)
    with pytest.raises(ContractError):
        backward(p, b, cache, np.zeros(b.n_edges))


def test_checkpoint_round_trip(tmp_path):
    inst = small(30, 200, 4)
    p = perturbed(seed=9)
    save_checkpoint(p, tmp_path / "c.json", step=17)
    q, step = load_checkpoint(tmp_path / "c.json")
    assert step == 17 and q.config == p.config
    assert np.array_equal(score_edges(p, inst).raw, score_edges(q, inst).raw)
    assert np.array_equal(score_edges(p, inst).prob, score_edges(q, inst).prob)


def test_checkpoint_format_checked(tmp_path):
    data = init(CFG).to_dict()
    data["format"] = "other"
    with pytest.raises(ContractError):
        ScorerParams.from_dict(data)
