"""Seeded random instance generation and Weisfeiler-Lehman instance hashing."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .core import NDD, PDP, P, TYPE_NAMES, ContractError, Instance, dumps_instance

LOGGER = logging.getLogger(__name__)

HASH_DIGEST = "blake2b-128"
MANIFEST_FORMAT = "kep-manifest-v1"


class CapacityError(ContractError):
    """Requested more edges than there are admissible ordered pairs."""


@dataclass(frozen=True)
class GenConfig:
    n_nodes: int = 300
    n_edges: int = 5500
    frac_pdp: float = 0.90
    frac_ndd: float = 0.05
    frac_p: float = 0.05
    seed: int = 0
    type_consistent: bool = True
    weight_precision: int = 6

    def check(self) -> None:
        if self.n_nodes < 1:
            raise ContractError("n_nodes must be positive")
        if self.n_edges < 0:
            raise ContractError("n_edges must be nonnegative")
        fracs = (self.frac_pdp, self.frac_ndd, self.frac_p)
        if min(fracs) < 0 or abs(sum(fracs) - 1.0) > 1e-9:
            raise ContractError("type fractions must be nonnegative and sum to 1")
        cap = edge_capacity(self)
        if self.n_edges > cap:
            raise CapacityError(
                f"{self.n_edges} edges requested but only {cap} ordered pairs are admissible"
            )


def type_counts(n: int, fracs) -> tuple:
    """Largest-remainder rounding of ``n * fracs``; ties go to the earlier entry.

    ``fracs`` and the result are ordered (PDP, NDD, P).
    """
    quotas = [n * f for f in fracs]
    counts = [int(np.floor(q)) for q in quotas]
    left = n - sum(counts)
    order = sorted(range(len(fracs)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:left]:
        counts[i] += 1
    return tuple(counts)


def _node_counts(cfg: GenConfig) -> dict:
    n_pdp, n_ndd, n_p = type_counts(cfg.n_nodes, (cfg.frac_pdp, cfg.frac_ndd, cfg.frac_p))
    return {PDP: n_pdp, NDD: n_ndd, P: n_p}


def edge_capacity(cfg: GenConfig) -> int:
    n = cfg.n_nodes
    if not cfg.type_consistent:
        return n * (n - 1)
    c = _node_counts(cfg)
    n_src = c[PDP] + c[NDD]
    n_dst = c[PDP] + c[P]
    return n_src * n_dst - c[PDP]


def generate(cfg: GenConfig) -> Instance:
    """Draw one instance: shuffled node types, distinct random edges, U[0,1) weights."""
    cfg.check()
    rng = np.random.default_rng(cfg.seed)
    counts = _node_counts(cfg)
    types = np.array([PDP] * counts[PDP] + [NDD] * counts[NDD] + [P] * counts[P],
                     dtype=np.int64)
    rng.shuffle(types)
    n = cfg.n_nodes
    if cfg.type_consistent:
        sources = np.flatnonzero(types != P)
        targets = np.flatnonzero(types != NDD)
    else:
        sources = targets = np.arange(n)

    seen = set()
    src, dst = [], []
    need = cfg.n_edges
    while len(src) < need:
        batch = max(64, 2 * (need - len(src)))
        a = sources[rng.integers(0, sources.size, batch)]
        b = targets[rng.integers(0, targets.size, batch)]
        for s, d in zip(a.tolist(), b.tolist()):
            if s == d or (s, d) in seen:
                continue
            seen.add((s, d))
            src.append(s)
            dst.append(d)
            if len(src) == need:
                break
    w = rng.random(need)
    inst = Instance(tuple(TYPE_NAMES[t] for t in types), np.array(src, dtype=np.int64),
                    np.array(dst, dtype=np.int64), w)
    return inst.with_id(wl_hash(inst, weight_precision=cfg.weight_precision))


def wl_hash(instance: Instance, iterations: int = 3, weight_precision: int = 6) -> str:
    """Weight-aware Weisfeiler-Lehman digest of an instance (hex, 128 bits).

    Node labels start as node types and are refined with the sorted
    multiset of (direction, rounded weight, neighbour label) over incident
    edges.  The digest covers the sorted multiset of final labels, so it
    does not depend on node numbering.
    """
    if iterations < 1:
        raise ContractError("iterations must be positive")
    labels = [TYPE_NAMES[t] for t in instance.types.tolist()]
    src = instance.src.tolist()
    dst = instance.dst.tolist()
    wtxt = [f"{x:.{weight_precision}f}" for x in instance.w.tolist()]
    for _ in range(iterations):
        incident = [[] for _ in labels]
        for s, d, x in zip(src, dst, wtxt):
            incident[s].append(f">{x}:{labels[d]}")
            incident[d].append(f"<{x}:{labels[s]}")
        labels = [_digest(lab + "|" + ",".join(sorted(inc))) for lab, inc in zip(labels, incident)]
    return _digest(";".join(sorted(labels)) + f"#{len(src)}")


def _digest(text: str) -> str:
    return hashlib.blake2b(text.encode("ascii"), digest_size=16).hexdigest()


def derive_seed(master: int, ordinal: int, attempt: int = 0) -> int:
    """Per-instance seed: master seed XOR a 64-bit hash of (ordinal, attempt)."""
    h = hashlib.blake2b(f"{ordinal}:{attempt}".encode(), digest_size=8).digest()
    return (int(master) ^ int.from_bytes(h, "little")) & ((1 << 64) - 1)


MAX_ATTEMPTS = 100


def _generate_one(args):
    cfg, ordinal, attempt = args
    seed = derive_seed(cfg.seed, ordinal, attempt)
    inst = generate(replace(cfg, seed=seed))
    return ordinal, attempt, seed, inst


def generate_dataset(cfg: GenConfig, count: int, out_dir, workers: int = 1) -> dict:
    """Write ``count`` instances as ``<hash>.json`` plus ``manifest.json``.

    Instance ``i`` uses ``derive_seed(cfg.seed, i, attempt)``; a hash
    collision bumps ``attempt`` until the id is fresh.
    """
    cfg.check()
    if count < 0:
        raise ContractError("count must be nonnegative")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out}: {exc}") from exc

    first = [(cfg, i, 0) for i in range(count)]
    if workers > 1 and count > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_generate_one, first, chunksize=8))
    else:
        results = [_generate_one(a) for a in first]

    ids = set()
    entries = []
    for ordinal, attempt, seed, inst in results:
        while inst.id in ids:
            LOGGER.info("hash collision for instance %d, regenerating", ordinal)
            attempt += 1
            if attempt > MAX_ATTEMPTS:
                raise ContractError(
                    f"instance {ordinal}: no fresh graph after {MAX_ATTEMPTS} attempts; "
                    "the configuration admits too few distinct graphs")
            _, _, seed, inst = _generate_one((cfg, ordinal, attempt))
        ids.add(inst.id)
        path = out / f"{inst.id}.json"
        try:
            path.write_text(dumps_instance(inst))
        except OSError as exc:
            raise OSError(f"cannot write instance file {path}: {exc}") from exc
        entries.append({"ordinal": ordinal, "id": inst.id, "seed": seed, "attempt": attempt})

    manifest = {
        "format": MANIFEST_FORMAT,
        "hash": HASH_DIGEST,
        "config": asdict(cfg),
        "count": count,
        "instances": entries,
    }
    mpath = out / "manifest.json"
    try:
        mpath.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    except OSError as exc:
        raise OSError(f"cannot write manifest {mpath}: {exc}") from exc
    return manifest


def generate_splits(cfg: GenConfig, counts: dict, root, workers: int = 1) -> dict:
    """Build ``<root>/{split}/`` datasets, one derived master seed per split."""
    manifests = {}
    for i, (split, count) in enumerate(counts.items()):
        split_cfg = replace(cfg, seed=derive_seed(cfg.seed, -1 - i))
        manifests[split] = generate_dataset(split_cfg, count, Path(root) / split, workers)
    return manifests


def instance_files(data_dir) -> list:
    """Instance files of a dataset directory, in canonical (name) order."""
    d = Path(data_dir)
    if not d.is_dir():
        return []
    return sorted(p for p in d.glob("*.json") if p.name != "manifest.json")


def permute_nodes(instance: Instance, perm) -> Instance:
    """Relabel node ``v`` as ``perm[v]``; edge order is preserved."""
    perm = np.asarray(perm, dtype=np.int64)
    nodes = [None] * instance.n_nodes
    for v, t in enumerate(instance.nodes):
        nodes[perm[v]] = t
    return Instance(tuple(nodes), perm[instance.src], perm[instance.dst], instance.w, instance.id)
