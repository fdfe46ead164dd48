"""Instance and solution data model for the kidney exchange problem.

An instance is a directed weighted graph whose nodes are typed as
non-directed donors (NDD), patient-donor pairs (PDP) or patients (P).
A solution is a boolean vector over edge indices.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional, Sequence

import numpy as np

FORMAT = "kep-v1"


class ContractError(ValueError):
    """Raised when an argument breaks an operation's preconditions."""


class NodeType(str, Enum):
    NDD = "NDD"
    PDP = "PDP"
    P = "P"

    @property
    def code(self) -> int:
        return _TYPE_CODES[self]


_TYPE_CODES = {NodeType.NDD: 0, NodeType.PDP: 1, NodeType.P: 2}
NDD, PDP, P = 0, 1, 2
TYPE_NAMES = ("NDD", "PDP", "P")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Instance:
    """Directed weighted graph with typed nodes.

    Edge order is canonical: edge ``i`` is ``(src[i], dst[i], w[i])``.
    ``out_adj[v]`` / ``in_adj[v]`` hold edge indices in ascending order.
    """

    nodes: tuple
    src: np.ndarray
    dst: np.ndarray
    w: np.ndarray
    id: str = ""
    types: np.ndarray = field(init=False, repr=False)
    out_adj: tuple = field(init=False, repr=False)
    in_adj: tuple = field(init=False, repr=False)

    def __post_init__(self):
        nodes = tuple(NodeType(t) for t in self.nodes)
        src = np.asarray(self.src, dtype=np.int64).copy()
        dst = np.asarray(self.dst, dtype=np.int64).copy()
        w = np.asarray(self.w, dtype=np.float64).copy()
        if not (src.shape == dst.shape == w.shape) or src.ndim != 1:
            raise ContractError("src, dst and w must be 1-D arrays of equal length")
        n = len(nodes)
        if src.size:
            if src.min() < 0 or dst.min() < 0 or src.max() >= n or dst.max() >= n:
                raise ContractError("edge endpoint out of range")
            if np.any(src == dst):
                raise ContractError("self-loops are not allowed")
            keys = src * n + dst
            if np.unique(keys).size != keys.size:
                raise ContractError("duplicated (src, dst) pair")
            if not np.all(np.isfinite(w)):
                raise ContractError("edge weights must be finite")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "src", _frozen(src))
        object.__setattr__(self, "dst", _frozen(dst))
        object.__setattr__(self, "w", _frozen(w))
        object.__setattr__(
            self, "types", _frozen(np.array([t.code for t in nodes], dtype=np.int8))
        )
        object.__setattr__(self, "out_adj", _adjacency(src, n))
        object.__setattr__(self, "in_adj", _adjacency(dst, n))

    @classmethod
    def from_edges(cls, nodes: Sequence, edges: Sequence, id: str = "") -> "Instance":
        edges = list(edges)
        src = [int(e[0]) for e in edges]
        dst = [int(e[1]) for e in edges]
        w = [float(e[2]) for e in edges]
        return cls(tuple(nodes), np.array(src, dtype=np.int64),
                   np.array(dst, dtype=np.int64), np.array(w, dtype=np.float64), id)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return int(self.src.size)

    @property
    def edges(self) -> list:
        return [(int(s), int(d), float(x)) for s, d, x in zip(self.src, self.dst, self.w)]

    def with_id(self, id: str) -> "Instance":
        return Instance(self.nodes, self.src, self.dst, self.w, id)


def _adjacency(endpoint: np.ndarray, n: int) -> tuple:
    order = np.argsort(endpoint, kind="stable")
    counts = np.bincount(endpoint, minlength=n) if endpoint.size else np.zeros(n, int)
    splits = np.split(order, np.cumsum(counts)[:-1]) if n else []
    return tuple(_frozen(s.astype(np.int64)) for s in splits)


# --------------------------------------------------------------------------- #
# Selections
# --------------------------------------------------------------------------- #


class FlowProfile(NamedTuple):
    f_in: np.ndarray
    f_out: np.ndarray


@dataclass(frozen=True)
class ValidityReport:
    valid: bool
    invalid_edge_count: int
    violations: tuple = ()


@dataclass(frozen=True)
class Decomposition:
    cycles: list
    chains: list
    unassigned: list


def as_selection(instance: Instance, sel) -> np.ndarray:
    """Coerce ``sel`` to a boolean vector of the instance's edge count."""
    y = np.asarray(sel)
    if y.ndim != 1 or y.size != instance.n_edges:
        raise ContractError(
            f"selection length {y.size} does not match edge count {instance.n_edges}"
        )
    if y.dtype != bool:
        if y.size and not np.all((y == 0) | (y == 1)):
            raise ContractError("selection entries must be 0 or 1")
        y = y.astype(bool)
    return y


def selection_from_indices(instance: Instance, indices) -> np.ndarray:
    y = np.zeros(instance.n_edges, dtype=bool)
    idx = np.asarray(list(indices), dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= instance.n_edges):
        raise ContractError("edge index out of range")
    y[idx] = True
    return y


def compute_flow(instance: Instance, sel) -> FlowProfile:
    y = as_selection(instance, sel)
    n = instance.n_nodes
    f_in = np.bincount(instance.dst[y], minlength=n).astype(np.int64)
    f_out = np.bincount(instance.src[y], minlength=n).astype(np.int64)
    return FlowProfile(f_in, f_out)


def score(instance: Instance, sel) -> float:
    """Total weight of the chosen edges, summed in edge order."""
    y = as_selection(instance, sel)
    total = 0.0
    for x in instance.w[y].tolist():
        total += x
    return total


def decompose(instance: Instance, sel) -> Decomposition:
    """Split chosen edges into chains, cycles and leftovers.

    A chosen edge joins the walkable structure only if it is the
    lowest-index chosen edge out of its source and into its destination;
    everything else is ``unassigned``.  Chains start at nodes without a
    kept incoming edge.  Chains precede cycles, and each list is ordered
    by the smallest node index it contains.
    """
    y = as_selection(instance, sel)
    chosen = np.flatnonzero(y)
    n = instance.n_nodes
    first_out = np.full(n, -1, dtype=np.int64)
    first_in = np.full(n, -1, dtype=np.int64)
    for e in chosen[::-1]:
        first_out[instance.src[e]] = e
        first_in[instance.dst[e]] = e
    kept = [int(e) for e in chosen
            if first_out[instance.src[e]] == e and first_in[instance.dst[e]] == e]
    unassigned = sorted(set(chosen.tolist()) - set(kept))

    succ = {}
    has_in = set()
    for e in kept:
        succ[int(instance.src[e])] = e
        has_in.add(int(instance.dst[e]))

    seen = set()
    chains = []
    for v in sorted(succ):
        if v in has_in:
            continue
        walk, nodes = [], [v]
        u = v
        while u in succ:
            e = succ[u]
            walk.append(e)
            seen.add(e)
            u = int(instance.dst[e])
            nodes.append(u)
        chains.append((min(nodes), walk))

    cycles = []
    for v in sorted(succ):
        if succ[v] in seen:
            continue
        walk, u = [], v
        while succ[u] not in seen:
            e = succ[u]
            walk.append(e)
            seen.add(e)
            u = int(instance.dst[e])
        # v is the first unseen node in index order, hence the smallest on its cycle
        cycles.append((v, walk))

    chains.sort(key=lambda t: t[0])
    cycles.sort(key=lambda t: t[0])
    return Decomposition(
        cycles=[c for _, c in cycles],
        chains=[c for _, c in chains],
        unassigned=unassigned,
    )


def validate(instance: Instance, sel, k: Optional[int] = None) -> ValidityReport:
    """Check a selection against the KEP constraints.

    Degree rules come first: at most one chosen edge in and out of any
    node, nothing into an NDD, nothing out of a P.  The surviving edges
    must then form PDP cycles or NDD-rooted chains, each with at most
    ``k`` edges when ``k`` is given.  Each offending edge is counted once.
    """
    if k is not None and k < 1:
        raise ContractError("k must be a positive integer")
    y = as_selection(instance, sel)
    types = instance.types
    src, dst = instance.src, instance.dst
    chosen = np.flatnonzero(y)
    violations = []
    flagged = set()

    out_by, in_by = {}, {}
    for e in chosen:
        out_by.setdefault(int(src[e]), []).append(int(e))
        in_by.setdefault(int(dst[e]), []).append(int(e))

    for v in sorted(set(out_by) | set(in_by)):
        outs, ins = out_by.get(v, []), in_by.get(v, [])
        t = types[v]
        if t == NDD and ins:
            violations.append(("ndd_in", v))
            flagged.update(ins)
        if t == P and outs:
            violations.append(("p_out", v))
            flagged.update(outs)
        if len(ins) > 1 and t != NDD:
            violations.append(("in_degree", v))
            flagged.update(ins[1:])
        if len(outs) > 1 and t != P:
            violations.append(("out_degree", v))
            flagged.update(outs[1:])
        if t == PDP and len(outs) > len(ins):
            violations.append(("pdp_out_exceeds_in", v))

    rest = y.copy()
    rest[list(flagged)] = False
    dec = decompose(instance, rest)
    flagged.update(dec.unassigned)
    for i, chain in enumerate(dec.chains):
        if types[src[chain[0]]] != NDD:
            violations.append(("chain_origin", i))
            flagged.update(chain)
        elif k is not None and len(chain) > k:
            violations.append(("length", i))
            flagged.update(chain[k:])
    for i, cycle in enumerate(dec.cycles):
        if any(types[src[e]] != PDP for e in cycle):
            violations.append(("cycle_type", i))
            flagged.update(cycle)
        elif k is not None and len(cycle) > k:
            violations.append(("length", len(dec.chains) + i))
            flagged.update(cycle)

    return ValidityReport(
        valid=not violations,
        invalid_edge_count=len(flagged),
        violations=tuple(violations),
    )


# --------------------------------------------------------------------------- #
# Serialization
# --------------------------------------------------------------------------- #


def instance_to_dict(instance: Instance) -> dict:
    return {
        "format": FORMAT,
        "id": instance.id,
        "nodes": [t.value for t in instance.nodes],
        "edges": [[s, d, x] for s, d, x in instance.edges],
    }


def instance_from_dict(data: dict) -> Instance:
    if data.get("format") != FORMAT:
        raise ContractError(f"unsupported instance format {data.get('format')!r}")
    return Instance.from_edges(data["nodes"], data["edges"], data.get("id", ""))


def dumps_instance(instance: Instance) -> str:
    return json.dumps(instance_to_dict(instance), separators=(",", ":"))


def save_instance(instance: Instance, path) -> None:
    path = os.fspath(path)
    with open(path, "w") as fh:
        fh.write(dumps_instance(instance))


def load_instance(path) -> Instance:
    with open(os.fspath(path)) as fh:
        return instance_from_dict(json.load(fh))
