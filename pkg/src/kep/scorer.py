"""Message-passing edge scorer with hand-written reverse mode.

Architecture, per instance:

1. node features: one-hot node type (NDD, PDP, P);
2. a multi-aggregator round (mean/max/min/sum of linearly transformed
   neighbour features, projected back to ``hidden_dim``);
3. two GATv2-style attention rounds;
4. a node MLP;
5. an edge MLP over ``[h_src, h_dst, w]`` whose output is added to ``w``;
6. a node-wise softmax over each source node's outgoing edges.

Every message-passing round runs twice, along the edges and against
them ("counter-edge" twin, separate weights), and the two outputs are
concatenated, then passed through ReLU and dropout.
"""

from __future__ import annotations

import json
import os
import weakref
from collections import OrderedDict
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .core import ContractError, Instance

CHECKPOINT_FORMAT = "kep-scorer-v1"
N_FEATURES = 3
LEAKY_SLOPE = 0.2
SIGNS = {"order_preserving": 1.0, "paper_negative": -1.0}


@dataclass(frozen=True)
class ScorerConfig:
    hidden_dim: int = 16
    mp_rounds: int = 3
    dropout_rate: float = 0.1
    softmax_sign: str = "order_preserving"
    node_feature_mode: str = "one_hot_type"

    def check(self) -> None:
        if self.hidden_dim < 1:
            raise ContractError("hidden_dim must be >= 1")
        if self.mp_rounds != 3:
            raise ContractError("mp_rounds is fixed at 3")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ContractError("dropout_rate must lie in [0, 1)")
        if self.softmax_sign not in SIGNS:
            raise ContractError(f"softmax_sign must be one of {sorted(SIGNS)}")
        if self.node_feature_mode != "one_hot_type":
            raise ContractError("only one_hot_type node features are supported")


@dataclass(frozen=True)
class EdgeScores:
    raw: np.ndarray
    prob: np.ndarray


class ScorerParams:
    """Named parameter tensors plus the config that fixes their shapes."""

    def __init__(self, config: ScorerConfig, tensors: "OrderedDict[str, np.ndarray]"):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def copy(self) -> "ScorerParams":
        return ScorerParams(self.config, OrderedDict((k, v.copy()) for k, v in self.items()))

    def zeros_like(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, np.zeros_like(v)) for k, v in self.items())

    def to_dict(self, step: int = 0) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "config": asdict(self.config),
            "step": step,
            "tensors": [
                {"name": k, "shape": list(v.shape), "values": v.ravel().tolist()}
                for k, v in self.items()
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScorerParams":
        if data.get("format") != CHECKPOINT_FORMAT:
            raise ContractError(f"unsupported checkpoint format {data.get('format')!r}")
        config = ScorerConfig(**data["config"])
        tensors = OrderedDict(
            (t["name"], np.array(t["values"], dtype=np.float64).reshape(t["shape"]))
            for t in data["tensors"]
        )
        expected = param_shapes(config)
        if {k: v.shape for k, v in tensors.items()} != expected:
            raise ContractError("checkpoint tensor shapes do not match its config")
        return cls(config, tensors)


def save_checkpoint(params: ScorerParams, path, step: int = 0) -> None:
    with open(os.fspath(path), "w") as fh:
        json.dump(params.to_dict(step), fh, separators=(",", ":"))


def load_checkpoint(path) -> tuple:
    """Return ``(params, step)``."""
    with open(os.fspath(path)) as fh:
        data = json.load(fh)
    return ScorerParams.from_dict(data), int(data.get("step", 0))


def param_shapes(config: ScorerConfig) -> "OrderedDict[str, tuple]":
    h = config.hidden_dim
    shapes = OrderedDict()
    for d in ("fwd", "rev"):
        shapes[f"agg_{d}_W"] = (N_FEATURES, h)
        shapes[f"agg_{d}_b"] = (h,)
        shapes[f"agg_{d}_P"] = (N_FEATURES + 4 * h, h)
        shapes[f"agg_{d}_c"] = (h,)
    for r in (2, 3):
        for d in ("fwd", "rev"):
            shapes[f"att{r}_{d}_Ws"] = (2 * h, h)
            shapes[f"att{r}_{d}_Wd"] = (2 * h, h)
            shapes[f"att{r}_{d}_a"] = (h,)
            shapes[f"att{r}_{d}_bias"] = (h,)
    shapes["node_W"] = (2 * h, h)
    shapes["node_b"] = (h,)
    shapes["edge_W1"] = (2 * h + 1, h)
    shapes["edge_b1"] = (h,)
    shapes["edge_w2"] = (h,)
    shapes["edge_b2"] = (1,)
    return shapes


def init(config: ScorerConfig, seed: int = 0) -> ScorerParams:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, zero final edge layer."""
    config.check()
    rng = np.random.default_rng(seed)
    tensors = OrderedDict()
    for name, shape in param_shapes(config).items():
        if name in ("edge_w2", "edge_b2") or len(shape) == 1 and not name.endswith("_a"):
            tensors[name] = np.zeros(shape)
        else:
            fan_in = shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            tensors[name] = rng.uniform(-bound, bound, size=shape)
    return ScorerParams(config, tensors)


# --------------------------------------------------------------------------- #
# Segment helpers
# --------------------------------------------------------------------------- #


class _Segments:
    """Group ``L`` items into ``n`` segments given a segment id per item."""

    def __init__(self, seg: np.ndarray, n: int):
        self.seg = seg
        self.n = n
        L = seg.size
        self.count = np.bincount(seg, minlength=n)
        self.order = np.argsort(seg, kind="stable")
        self.nonempty = np.flatnonzero(self.count)
        starts = np.concatenate([[0], np.cumsum(self.count)[:-1]])
        self.starts = starts[self.nonempty]
        self.S = sp.csr_matrix((np.ones(L), (seg, np.arange(L))), shape=(n, L))

    def sum(self, v):
        return self.S @ v

    def _reduce(self, ufunc, v):
        out = np.zeros((self.n,) + v.shape[1:])
        if self.nonempty.size:
            out[self.nonempty] = ufunc.reduceat(v[self.order], self.starts, axis=0)
        return out

    def max(self, v):
        return self._reduce(np.maximum, v)

    def min(self, v):
        return self._reduce(np.minimum, v)

    def softmax(self, logits):
        shift = self.max(logits)[self.seg]
        ex = np.exp(logits - shift)
        return ex / self.sum(ex)[self.seg]

    def softmax_backward(self, p, g):
        return p * (g - self.sum(p * g)[self.seg])


class _Structure:
    def __init__(self, instance: Instance):
        n = instance.n_nodes
        src, dst = instance.src, instance.dst
        loops = np.arange(n)
        self.n = n
        self.src, self.dst = src, dst
        # (sender, receiver) per direction
        self.agg = {"fwd": (src, dst), "rev": (dst, src)}
        self.att = {
            "fwd": (np.concatenate([src, loops]), np.concatenate([dst, loops])),
            "rev": (np.concatenate([dst, loops]), np.concatenate([src, loops])),
        }
        self.agg_seg = {d: _Segments(r, n) for d, (_, r) in self.agg.items()}
        self.att_seg = {d: _Segments(r, n) for d, (_, r) in self.att.items()}
        self.agg_send = {d: _Segments(s, n) for d, (s, _) in self.agg.items()}
        self.att_send = {d: _Segments(s, n) for d, (s, _) in self.att.items()}
        self.by_src = _Segments(src, n)
        self.by_dst = _Segments(dst, n)
        features = np.zeros((n, N_FEATURES))
        features[np.arange(n), instance.types] = 1.0
        self.features = features


_STRUCTURES: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _structure(instance: Instance) -> _Structure:
    s = _STRUCTURES.get(instance)
    if s is None:
        s = _Structure(instance)
        _STRUCTURES[instance] = s
    return s


def node_wise_softmax(raw, instance: Instance, group_by: str = "source",
                      sign="order_preserving") -> np.ndarray:
    """Independent softmax of ``sign * raw`` over edges sharing a source (or destination)."""
    sigma = SIGNS[sign] if isinstance(sign, str) else float(sign)
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (instance.n_edges,):
        raise ContractError("raw length does not match edge count")
    if not np.all(np.isfinite(raw)):
        raise ContractError("raw scores must be finite")
    st = _structure(instance)
    seg = {"source": st.by_src, "destination": st.by_dst}[group_by]
    return seg.softmax(sigma * raw)


def threshold_predict(scores: EdgeScores, tau: float = 0.5) -> np.ndarray:
    return np.asarray(scores.prob) >= tau


# --------------------------------------------------------------------------- #
# Forward / backward
# --------------------------------------------------------------------------- #


def _relu(x):
    return np.maximum(x, 0.0)


def _aggregate_forward(p, d, X, st):
    send, _ = st.agg[d]
    seg = st.agg_seg[d]
    M = X @ p[f"agg_{d}_W"] + p[f"agg_{d}_b"]
    Mj = M[send]
    total = seg.sum(Mj)
    cnt = np.maximum(seg.count, 1)[:, None]
    mx, mn = seg.max(Mj), seg.min(Mj)
    Q = np.concatenate([X, total / cnt, mx, mn, total], axis=1)
    O = Q @ p[f"agg_{d}_P"] + p[f"agg_{d}_c"]
    return O, {"X": X, "Mj": Mj, "mx": mx, "mn": mn, "Q": Q, "cnt": cnt}


def _aggregate_backward(p, d, c, gO, st, grads):
    send, recv = st.agg[d]
    seg = st.agg_seg[d]
    h = gO.shape[1]
    grads[f"agg_{d}_P"] += c["Q"].T @ gO
    grads[f"agg_{d}_c"] += gO.sum(0)
    gQ = gO @ p[f"agg_{d}_P"].T
    gX = gQ[:, :N_FEATURES].copy()
    g_mean, g_max, g_min, g_sum = (gQ[:, N_FEATURES + i * h:N_FEATURES + (i + 1) * h]
                                   for i in range(4))
    Mj = c["Mj"]
    gMj = (g_sum + g_mean / c["cnt"])[recv]
    for ext, g in ((c["mx"], g_max), (c["mn"], g_min)):
        hit = (Mj == ext[recv]).astype(np.float64)
        ties = seg.sum(hit)
        gMj += hit * (g / np.maximum(ties, 1.0))[recv]
    gM = st.agg_send[d].sum(gMj)
    grads[f"agg_{d}_W"] += c["X"].T @ gM
    grads[f"agg_{d}_b"] += gM.sum(0)
    return gX + gM @ p[f"agg_{d}_W"].T


def _attention_forward(p, r, d, X, st):
    send, recv = st.att[d]
    seg = st.att_seg[d]
    pre = f"att{r}_{d}_"
    A = X @ p[pre + "Ws"]
    B = X @ p[pre + "Wd"]
    Z = A[send] + B[recv]
    Lk = np.where(Z > 0, Z, LEAKY_SLOPE * Z)
    alpha = seg.softmax(Lk @ p[pre + "a"])
    O = seg.sum(alpha[:, None] * A[send]) + p[pre + "bias"]
    return O, {"X": X, "A": A, "Z": Z, "Lk": Lk, "alpha": alpha}


def _attention_backward(p, r, d, c, gO, st, grads):
    send, recv = st.att[d]
    seg = st.att_seg[d]
    pre = f"att{r}_{d}_"
    A, alpha = c["A"], c["alpha"]
    grads[pre + "bias"] += gO.sum(0)
    gOr = gO[recv]
    gAj = alpha[:, None] * gOr
    g_alpha = np.einsum("lh,lh->l", gOr, A[send])
    g_logit = seg.softmax_backward(alpha, g_alpha)
    grads[pre + "a"] += c["Lk"].T @ g_logit
    gZ = np.outer(g_logit, p[pre + "a"]) * np.where(c["Z"] > 0, 1.0, LEAKY_SLOPE)
    gA = st.att_send[d].sum(gAj + gZ)
    gB = seg.sum(gZ)
    grads[pre + "Ws"] += c["X"].T @ gA
    grads[pre + "Wd"] += c["X"].T @ gB
    return gA @ p[pre + "Ws"].T + gB @ p[pre + "Wd"].T


class ForwardCache:
    def __init__(self, instance, params, layers, masks, edge):
        self.instance = instance
        self.params = params
        self.layers = layers
        self.masks = masks
        self.edge = edge


def _dropout_masks(config: ScorerConfig, n: int, training: bool, seed: int):
    q = config.dropout_rate
    if not training or q == 0.0:
        return [None, None, None]
    rng = np.random.default_rng(seed)
    shape = (n, 2 * config.hidden_dim)
    return [(rng.random(shape) >= q) / (1.0 - q) for _ in range(3)]


def forward(params: ScorerParams, instance: Instance, training: bool = False,
            dropout_seed: int = 0):
    """Score every edge.  Returns ``(EdgeScores, ForwardCache)``."""
    if instance.n_nodes == 0:
        raise ContractError("instance has no nodes")
    p = params.tensors
    st = _structure(instance)
    masks = _dropout_masks(params.config, instance.n_nodes, training, dropout_seed)
    X = st.features
    layers = []
    for i in range(3):
        outs, caches = [], []
        for d in ("fwd", "rev"):
            if i == 0:
                O, c = _aggregate_forward(p, d, X, st)
            else:
                O, c = _attention_forward(p, i + 1, d, X, st)
            outs.append(O)
            caches.append(c)
        pre = np.concatenate(outs, axis=1)
        H = _relu(pre)
        if masks[i] is not None:
            H = H * masks[i]
        layers.append({"pre": pre, "caches": caches})
        X = H
    preG = X @ p["node_W"] + p["node_b"]
    G = _relu(preG)
    w = instance.w
    Zin = np.concatenate([G[st.src], G[st.dst], w[:, None]], axis=1)
    preU = Zin @ p["edge_W1"] + p["edge_b1"]
    U = _relu(preU)
    raw = U @ p["edge_w2"] + p["edge_b2"][0] + w
    sigma = SIGNS[params.config.softmax_sign]
    prob = st.by_src.softmax(sigma * raw)
    edge = {"H3": X, "preG": preG, "Zin": Zin, "preU": preU, "U": U, "prob": prob}
    return EdgeScores(raw, prob), ForwardCache(instance, params, layers, masks, edge)


def score_edges(params: ScorerParams, instance: Instance) -> EdgeScores:
    """Eval-mode forward pass."""
    return forward(params, instance, training=False)[0]


def backward(params: ScorerParams, instance: Instance, cache: ForwardCache,
             g_prob) -> "OrderedDict[str, np.ndarray]":
    """Gradient of a scalar objective w.r.t. every parameter, given d/d prob."""
    if cache.instance is not instance or cache.params is not params:
        raise ContractError("forward cache does not belong to these params/instance")
    g_prob = np.asarray(g_prob, dtype=np.float64)
    if g_prob.shape != (instance.n_edges,):
        raise ContractError("upstream gradient length does not match edge count")
    p = params.tensors
    st = _structure(instance)
    grads = params.zeros_like()
    h = params.config.hidden_dim
    e = cache.edge
    sigma = SIGNS[params.config.softmax_sign]

    g_raw = sigma * st.by_src.softmax_backward(e["prob"], g_prob)
    grads["edge_w2"] += e["U"].T @ g_raw
    grads["edge_b2"] += g_raw.sum(keepdims=True)
    g_preU = np.outer(g_raw, p["edge_w2"]) * (e["preU"] > 0)
    grads["edge_W1"] += e["Zin"].T @ g_preU
    grads["edge_b1"] += g_preU.sum(0)
    gZin = g_preU @ p["edge_W1"].T
    gG = st.by_src.sum(gZin[:, :h]) + st.by_dst.sum(gZin[:, h:2 * h])
    g_preG = gG * (e["preG"] > 0)
    grads["node_W"] += e["H3"].T @ g_preG
    grads["node_b"] += g_preG.sum(0)
    gX = g_preG @ p["node_W"].T

    for i in (2, 1, 0):
        layer = cache.layers[i]
        if cache.masks[i] is not None:
            gX = gX * cache.masks[i]
        g_pre = gX * (layer["pre"] > 0)
        gX = None
        for j, d in enumerate(("fwd", "rev")):
            gO = g_pre[:, j * h:(j + 1) * h]
            c = layer["caches"][j]
            if i == 0:
                gx = _aggregate_backward(p, d, c, gO, st, grads)
            else:
                gx = _attention_backward(p, i + 1, d, c, gO, st, grads)
            gX = gx if gX is None else gX + gx
    return grads
