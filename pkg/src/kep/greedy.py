"""Greedy-Paths and Greedy-Cycles construction heuristics.

Both take an arbitrary per-edge ranking vector.  Plain heuristics rank by
edge weight; the two-stage method passes learned edge scores instead.
Argmax ties go to the smallest edge index.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .core import NDD, PDP, P, ContractError, Instance


def _check_rank(instance: Instance, rank) -> np.ndarray:
    r = instance.w if rank is None else np.asarray(rank, dtype=np.float64)
    if r.shape != (instance.n_edges,):
        raise ContractError(f"rank length {r.size} does not match edge count {instance.n_edges}")
    if not np.all(np.isfinite(r)):
        raise ContractError("rank values must be finite")
    return r


def _ranked(instance: Instance, rank: np.ndarray, mask: np.ndarray) -> list:
    idx = np.flatnonzero(mask)
    return idx[np.lexsort((idx, -rank[idx]))].tolist()


def _ranked_out_lists(instance: Instance, rank: np.ndarray, keep: np.ndarray) -> list:
    """Per node, its admissible outgoing edges by decreasing rank."""
    idx = np.flatnonzero(keep)
    order = idx[np.lexsort((idx, -rank[idx], instance.src[idx]))]
    counts = np.bincount(instance.src[order], minlength=instance.n_nodes)
    return [a.tolist() for a in np.split(order, np.cumsum(counts)[:-1])]


def greedy_paths(instance: Instance, rank=None, k: Optional[int] = None) -> np.ndarray:
    """Grow chains from NDD nodes, always following the best-ranked edge.

    Each round starts from the best-ranked edge leaving an unused NDD and
    extends from its target until no admissible edge remains or the chain
    has ``k`` edges.  Chains stop at P nodes and never enter an NDD or a
    node already on the chain.  Committed nodes are removed from the graph.
    """
    r = _check_rank(instance, rank)
    types, src, dst = instance.types, instance.src, instance.dst
    sel = np.zeros(instance.n_edges, dtype=bool)
    if instance.n_edges == 0:
        return sel
    enter_ok = types[dst] != NDD
    starts = _ranked(instance, r, (types[src] == NDD) & enter_ok)
    out = _ranked_out_lists(instance, r, (types[src] == PDP) & enter_ok)
    removed = np.zeros(instance.n_nodes, dtype=bool)

    pos = 0
    while True:
        while pos < len(starts) and (removed[src[starts[pos]]] or removed[dst[starts[pos]]]):
            pos += 1
        if pos == len(starts):
            break
        e = starts[pos]
        path = [e]
        on_path = {int(src[e]), int(dst[e])}
        cur = int(dst[e])
        while (k is None or len(path) < k) and types[cur] == PDP:
            nxt = None
            for f in out[cur]:
                t = int(dst[f])
                if not removed[t] and t not in on_path:
                    nxt = f
                    break
            if nxt is None:
                break
            path.append(nxt)
            cur = int(dst[nxt])
            on_path.add(cur)
        sel[path] = True
        removed[list(on_path)] = True
    return sel


def greedy_cycles(
    instance: Instance,
    rank=None,
    k: Optional[int] = None,
    trim: bool = True,
    restart: bool = False,
) -> np.ndarray:
    """Close PDP cycles by following best-ranked edges.

    Each attempt starts from the best-ranked PDP->PDP edge and walks until
    it re-enters a node on the walk.  With ``trim`` the cycle from that
    node onward is committed and the lead-in is discarded; without it only
    walks that return to their first node count.  A dead end or a walk of
    ``k`` nodes that cannot close fails the attempt.  The first failure
    stops the heuristic unless ``restart`` is set, in which case the failed
    start edge is skipped and the next one is tried.
    """
    r = _check_rank(instance, rank)
    types, src, dst = instance.types, instance.src, instance.dst
    sel = np.zeros(instance.n_edges, dtype=bool)
    if instance.n_edges == 0:
        return sel
    pdp_edge = (types[src] == PDP) & (types[dst] == PDP)
    starts = _ranked(instance, r, pdp_edge)
    out = _ranked_out_lists(instance, r, pdp_edge)
    removed = np.zeros(instance.n_nodes, dtype=bool)
    skipped = set()

    while True:
        e = next((s for s in starts if s not in skipped
                  and not removed[src[s]] and not removed[dst[s]]), None)
        if e is None:
            break
        cycle = _walk_cycle(e, out, src, dst, removed, k, trim)
        if cycle is None:
            if not restart:
                break
            skipped.add(e)
            continue
        sel[cycle] = True
        removed[src[cycle]] = True
    return sel


def _walk_cycle(e, out, src, dst, removed, k, trim):
    walk_nodes = [int(src[e])]
    where = {walk_nodes[0]: 0}
    walk_edges = []
    cur_edge = e
    while True:
        t = int(dst[cur_edge])
        walk_edges.append(cur_edge)
        if t in where:
            if where[t] != 0 and not trim:
                return None
            return walk_edges[where[t]:]
        if k is not None and len(walk_nodes) >= k:
            return None
        nxt = next((f for f in out[t] if not removed[dst[f]]), None)
        if nxt is None:
            return None
        where[t] = len(walk_nodes)
        walk_nodes.append(t)
        cur_edge = nxt
