"""Exact solving by cycle/chain enumeration and branch-and-bound packing."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import NDD, PDP, P, ContractError, Instance, score, validate

DEFAULT_MAX_COMPONENTS = 250_000
BRUTE_FORCE_MAX_EDGES = 22


class ComponentOverflow(RuntimeError):
    """The instance has more cycles/chains than the configured ceiling."""


class SolveTimeout(RuntimeError):
    pass


@dataclass(frozen=True)
class Component:
    kind: str
    edge_ids: tuple
    node_ids: tuple
    weight: float
    mask: int = field(repr=False, compare=False)


@dataclass
class ExactResult:
    selection: np.ndarray
    score: float
    status: str
    explored_nodes: int = 0
    elapsed: float = 0.0
    components: Optional[list] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "selection": np.flatnonzero(self.selection).tolist(),
            "score": self.score,
            "status": self.status,
            "explored_nodes": self.explored_nodes,
            "elapsed": self.elapsed,
        }


def _make(kind, edges, nodes, instance):
    weight = 0.0
    for e in edges:
        weight += float(instance.w[e])
    mask = 0
    for v in nodes:
        mask |= 1 << v
    return Component(kind, tuple(edges), tuple(nodes), weight, mask)


def enumerate_components(
    instance: Instance,
    k: Optional[int] = None,
    max_components: int = DEFAULT_MAX_COMPONENTS,
    deadline: Optional[float] = None,
) -> list:
    """All simple PDP cycles and NDD-rooted chains with at most ``k`` edges.

    A cycle is reported once, rotated to start at its smallest node.
    Every nonempty prefix of a chain is a chain of its own.
    """
    if k is not None and k < 1:
        raise ContractError("k must be a positive integer")
    limit = instance.n_nodes if k is None else k
    types, dst = instance.types, instance.dst
    out = [[int(e) for e in adj] for adj in instance.out_adj]
    comps = []

    def push(kind, edges, nodes):
        if len(comps) >= max_components:
            raise ComponentOverflow(
                f"more than {max_components} components; raise max_components or set k"
            )
        if deadline is not None and len(comps) % 4096 == 0 and time.monotonic() > deadline:
            raise SolveTimeout
        comps.append(_make(kind, edges, nodes, instance))

    # cycles: start at s, visit only PDP nodes larger than s
    for s in range(instance.n_nodes):
        if types[s] != PDP:
            continue
        stack = [(s, [], [s], {s})]
        while stack:
            v, edges, nodes, on = stack.pop()
            for e in reversed(out[v]):
                t = int(dst[e])
                if t == s:
                    push("cycle", edges + [e], nodes)
                elif t > s and types[t] == PDP and t not in on and len(edges) + 1 < limit:
                    stack.append((t, edges + [e], nodes + [t], on | {t}))

    for s in range(instance.n_nodes):
        if types[s] != NDD:
            continue
        stack = [(s, [], [s], {s})]
        while stack:
            v, edges, nodes, on = stack.pop()
            for e in reversed(out[v]):
                t = int(dst[e])
                if t in on or types[t] == NDD:
                    continue
                ce, cn = edges + [e], nodes + [t]
                push("chain", ce, cn)
                if types[t] == PDP and len(ce) < limit:
                    stack.append((t, ce, cn, on | {t}))
    return comps


def solve_exact(
    instance: Instance,
    k: Optional[int] = None,
    time_limit: Optional[float] = None,
    max_components: int = DEFAULT_MAX_COMPONENTS,
    node_limit: Optional[int] = None,
) -> ExactResult:
    """Maximum-weight node-disjoint packing of cycles and chains.

    Depth-first branch-and-bound over components sorted by decreasing
    weight: include the heaviest compatible component, then exclude it.
    The bound adds, over still-free nodes, the best per-node share of any
    remaining component, where a component's weight is split evenly over
    its nodes or credited to the node each edge enters; the smaller of the
    two totals is used.  On timeout the incumbent is returned with status
    ``time_limit``.  ``node_limit`` caps explored search nodes instead; unlike
    the clock it stops at the same point on every run (status ``node_limit``).
    """
    t0 = time.monotonic()
    deadline = None if time_limit is None else t0 + time_limit
    empty = np.zeros(instance.n_edges, dtype=bool)
    if instance.n_edges == 0:
        return ExactResult(empty, 0.0, "infeasible_empty", 0, time.monotonic() - t0, [])
    try:
        comps = enumerate_components(instance, k, max_components, deadline)
    except SolveTimeout:
        return ExactResult(empty, 0.0, "time_limit", 0, time.monotonic() - t0, None)

    comps.sort(key=lambda c: (-c.weight, c.kind, c.edge_ids))
    m, n = len(comps), instance.n_nodes
    share = np.zeros((m + 1, n))
    credit = np.zeros((m + 1, n))
    for j in range(m - 1, -1, -1):
        c = comps[j]
        share[j] = share[j + 1]
        credit[j] = credit[j + 1]
        per = c.weight / len(c.node_ids)
        for v in c.node_ids:
            if per > share[j, v]:
                share[j, v] = per
        for e in c.edge_ids:
            v = int(instance.dst[e])
            if instance.w[e] > credit[j, v]:
                credit[j, v] = instance.w[e]
    share_rows = share.tolist()
    credit_rows = credit.tolist()
    masks = [c.mask for c in comps]
    weights = [c.weight for c in comps]
    full = (1 << n) - 1

    best = [0.0, []]
    explored = 0
    timed_out = False
    capped = False

    def bound(j, used):
        free = [v for v in range(n) if not used >> v & 1]
        a = sum(share_rows[j][v] for v in free)
        b = sum(credit_rows[j][v] for v in free)
        return a if a < b else b

    # include-branches recurse (depth <= |V|); exclude-branches iterate
    def dfs(j, used, value, chosen):
        nonlocal explored, timed_out, capped
        while j < m and used != full:
            if masks[j] & used:
                j += 1
                continue
            explored += 1
            if deadline is not None and explored % 512 == 0 and time.monotonic() > deadline:
                timed_out = True
            if node_limit is not None and explored > node_limit:
                capped = True
            if timed_out or capped or value + bound(j, used) <= best[0] + 1e-12:
                return
            nv = value + weights[j]
            chosen.append(j)
            if nv > best[0]:
                best[0], best[1] = nv, list(chosen)
            dfs(j + 1, used | masks[j], nv, chosen)
            chosen.pop()
            j += 1

    dfs(0, 0, 0.0, [])
    sel = empty.copy()
    for j in best[1]:
        sel[list(comps[j].edge_ids)] = True
    status = "time_limit" if timed_out else "node_limit" if capped else "optimal"
    return ExactResult(sel, score(instance, sel), status, explored,
                       time.monotonic() - t0, [comps[j] for j in best[1]])


def brute_force(instance: Instance, k: Optional[int] = None, chunk: int = 1 << 15) -> ExactResult:
    """Best valid edge subset by exhaustive enumeration (test oracle).

    Subsets failing the cheap flow checks are discarded in bulk; the rest,
    best score first, go through :func:`kep.core.validate`.  Ties resolve
    to the lexicographically smallest bit vector.
    """
    E = instance.n_edges
    if E > BRUTE_FORCE_MAX_EDGES:
        raise ContractError(f"brute force refuses {E} edges (max {BRUTE_FORCE_MAX_EDGES})")
    t0 = time.monotonic()
    n = instance.n_nodes
    types = instance.types
    if E == 0:
        return ExactResult(np.zeros(0, dtype=bool), 0.0, "optimal", 1, time.monotonic() - t0)
    into = np.zeros((E, n), dtype=np.int32)
    outof = np.zeros((E, n), dtype=np.int32)
    into[np.arange(E), instance.dst] = 1
    outof[np.arange(E), instance.src] = 1
    shifts = np.arange(E, dtype=np.int64)
    is_ndd, is_p, is_pdp = types == NDD, types == P, types == PDP

    cand_masks, cand_scores = [], []
    total = 1 << E
    for lo in range(0, total, chunk):
        masks = np.arange(lo, min(total, lo + chunk), dtype=np.int64)
        bits = ((masks[:, None] >> shifts) & 1).astype(np.int32)
        f_in = bits @ into
        f_out = bits @ outof
        ok = (f_in <= 1).all(1) & (f_out <= 1).all(1)
        ok &= (f_in[:, is_ndd] == 0).all(1) & (f_out[:, is_p] == 0).all(1)
        ok &= (f_out[:, is_pdp] <= f_in[:, is_pdp]).all(1)
        cand_masks.append(masks[ok])
        cand_scores.append(bits[ok] @ instance.w)
    masks = np.concatenate(cand_masks)
    approx = np.concatenate(cand_scores)
    order = np.argsort(-approx, kind="stable")

    best_score, best_bits = None, None
    for i in order:
        if best_score is not None and approx[i] < best_score - 1e-9:
            break
        y = ((int(masks[i]) >> np.arange(E)) & 1).astype(bool)
        if not validate(instance, y, k).valid:
            continue
        s = score(instance, y)
        key = tuple(int(b) for b in y)
        if best_score is None or s > best_score or (s == best_score and key < best_bits):
            best_score, best_bits = s, key
    sel = np.array(best_bits, dtype=bool)
    return ExactResult(sel, best_score, "optimal", int(masks.size), time.monotonic() - t0)
