"""Unsupervised training of the edge scorer."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import Instance, load_instance, score
from .gen import derive_seed, instance_files
from .greedy import greedy_cycles, greedy_paths
from .scorer import (
    EdgeScores,
    ScorerConfig,
    ScorerParams,
    backward,
    forward,
    init,
    load_checkpoint,
    save_checkpoint,
    score_edges,
    threshold_predict,
)

LOGGER = logging.getLogger(__name__)

METHODS = ("two_stage_paths", "two_stage_cycles", "unsupervised_gnn")
HISTORY_COLUMNS = ("step", "train_loss", "val_mean_score", "val_std_score",
                   "val_mean_loss", "checkpoint")


class DegenerateSelection(ValueError):
    """The predicted selection carries no weighted score mass."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3
    validate_every: int = 500
    batch_size: int = 1
    learning_rate: float = 1e-2
    optimizer: str = "plain_sgd"
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    reg_coefficient: float = 0.0
    method: str = "two_stage_paths"
    seed: int = 0
    k: Optional[int] = None
    rank_key: str = "raw"
    tau: float = 0.5

    def check(self) -> None:
        if self.validate_every < 1:
            raise ValueError("validate_every must be >= 1")
        if self.batch_size != 1:
            raise ValueError("batch_size is fixed at 1")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.optimizer not in ("plain_sgd", "adaptive_moment"):
            raise ValueError("optimizer must be plain_sgd or adaptive_moment")
        if self.reg_coefficient < 0:
            raise ValueError("reg_coefficient must be >= 0")
        if self.rank_key not in ("raw", "prob"):
            raise ValueError("rank_key must be raw or prob")


@dataclass
class TrainHistory:
    steps: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    validations: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    skipped: int = 0
    best_step: Optional[int] = None
    best_checkpoint: Optional[str] = None
    best_params: Optional[ScorerParams] = field(default=None, repr=False)

    def rows(self) -> list:
        """History rows; validation results sit on the step they followed."""
        by_step = {v["step"]: v for v in self.validations}
        rows = []
        if 0 in by_step:
            rows.append(_row(0, None, by_step[0]))
        for s, loss in zip(self.steps, self.train_loss):
            rows.append(_row(s, loss, by_step.get(s)))
        return rows


def _row(step, loss, val):
    return {
        "step": step,
        "train_loss": "" if loss is None or not math.isfinite(loss) else repr(loss),
        "val_mean_score": "" if val is None else repr(val["mean_score"]),
        "val_std_score": "" if val is None else repr(val["std_score"]),
        "val_mean_loss": "" if val is None or val["mean_loss"] is None else repr(val["mean_loss"]),
        "checkpoint": "" if val is None else val["checkpoint"],
    }


# --------------------------------------------------------------------------- #
# Loss terms
# --------------------------------------------------------------------------- #


def kep_loss(instance: Instance, sel, scores) -> tuple:
    """``log(sum w / sum w*pred*s)`` and its gradient w.r.t. ``s``.

    ``sel`` is treated as a constant.  Raises :class:`DegenerateSelection`
    when the denominator is not positive.
    """
    s = scores.prob if isinstance(scores, EdgeScores) else np.asarray(scores, dtype=np.float64)
    pred = np.asarray(sel, dtype=np.float64)
    w = instance.w
    wp = w * pred
    denom = float(wp @ s)
    if not denom > 0.0:
        raise DegenerateSelection("selection has no weighted score mass")
    loss = math.log(float(w.sum()) / denom)
    return loss, -wp / denom


def constraint_regularizer(instance: Instance, sel, lam: float) -> float:
    """``lam * (log(m/u_src) + log(m/u_dst))`` over the ``m`` chosen edges."""
    y = np.asarray(sel, dtype=bool)
    m = int(y.sum())
    if m == 0:
        return 0.0
    u_src = np.unique(instance.src[y]).size
    u_dst = np.unique(instance.dst[y]).size
    return lam * (math.log(m / u_src) + math.log(m / u_dst))


def ranking(scores: EdgeScores, key: str = "raw") -> np.ndarray:
    return scores.raw if key == "raw" else scores.prob


def predict(method: str, instance: Instance, scores: EdgeScores, k=None,
            rank_key: str = "raw", tau: float = 0.5) -> np.ndarray:
    """Selection the given learned method derives from edge scores."""
    if method == "two_stage_paths":
        return greedy_paths(instance, ranking(scores, rank_key), k)
    if method == "two_stage_cycles":
        return greedy_cycles(instance, ranking(scores, rank_key), k)
    if method == "unsupervised_gnn":
        return threshold_predict(scores, tau)
    raise ValueError(f"unknown method {method!r}")


# --------------------------------------------------------------------------- #
# Optimizers
# --------------------------------------------------------------------------- #


class Adam:
    def __init__(self, params: ScorerParams, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.t = 0

    def step(self, params: ScorerParams, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            params.tensors[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, params: ScorerParams, lr: float):
        self.lr = lr

    def step(self, params: ScorerParams, grads) -> None:
        for name, g in grads.items():
            params.tensors[name] -= self.lr * g


# --------------------------------------------------------------------------- #
# Training loop
# --------------------------------------------------------------------------- #


def _load_all(source) -> list:
    if isinstance(source, (str, Path)):
        out = []
        for path in instance_files(source):
            try:
                out.append(load_instance(path))
            except (OSError, ValueError, KeyError) as exc:
                LOGGER.warning("skipping unreadable instance %s: %s", path, exc)
        return out
    return list(source)


def evaluate_params(params: ScorerParams, instances: Sequence, cfg: TrainConfig) -> dict:
    """Eval-mode mean/std score and mean loss of ``cfg.method`` over ``instances``."""
    scores, losses = [], []
    for inst in instances:
        s = score_edges(params, inst)
        pred = predict(cfg.method, inst, s, cfg.k, cfg.rank_key, cfg.tau)
        scores.append(score(inst, pred))
        try:
            loss, _ = kep_loss(inst, pred, s)
        except DegenerateSelection:
            continue
        if cfg.method == "unsupervised_gnn":
            loss += constraint_regularizer(inst, pred, cfg.reg_coefficient)
        losses.append(loss)
    return {
        "mean_score": float(np.mean(scores)) if scores else 0.0,
        "std_score": float(np.std(scores)) if scores else 0.0,
        "mean_loss": float(np.mean(losses)) if losses else None,
    }


def train(train_cfg: TrainConfig, scorer_cfg: ScorerConfig, train_data, val_data,
          out_dir=None) -> TrainHistory:
    """Train with batch size 1, validating and checkpointing every ``validate_every`` steps.

    ``train_data`` / ``val_data`` are dataset directories or sequences of
    instances.  A validation phase also runs before the first update.  With
    ``out_dir`` set, checkpoints, ``history.csv``, ``config.json`` and
    ``best.json`` (highest validation mean score) are written there.
    """
    train_cfg.check()
    scorer_cfg.check()
    train_set = _load_all(train_data)
    val_set = _load_all(val_data)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(
            {"train": asdict(train_cfg), "scorer": asdict(scorer_cfg)}, indent=1, sort_keys=True))

    params = init(scorer_cfg, seed=train_cfg.seed)
    if train_cfg.optimizer == "adaptive_moment":
        opt = Adam(params, train_cfg.learning_rate, train_cfg.betas, train_cfg.eps)
    else:
        opt = SGD(params, train_cfg.learning_rate)
    history = TrainHistory()
    snapshots = {}

    def validation(step):
        result = evaluate_params(params, val_set, train_cfg)
        name = f"step_{step:07d}.json"
        if out is not None:
            save_checkpoint(params, out / "checkpoints" / name, step)
        else:
            snapshots[name] = params.copy()
        result.update(step=step, checkpoint=name)
        history.validations.append(result)
        history.checkpoints.append(name)
        LOGGER.info("step %d: val mean %.4f std %.4f", step, result["mean_score"],
                    result["std_score"])

    validation(0)
    rng = np.random.default_rng(train_cfg.seed)
    step = 0
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(len(train_set))
        for i in order:
            inst = train_set[i]
            step += 1
            loss = _train_step(params, opt, inst, train_cfg, derive_seed(train_cfg.seed, step))
            if loss is None:
                history.skipped += 1
                loss = float("nan")
            history.steps.append(step)
            history.train_loss.append(loss)
            if step % train_cfg.validate_every == 0:
                validation(step)

    best = max(history.validations, key=lambda v: (v["mean_score"], -v["step"]))
    history.best_step = best["step"]
    history.best_checkpoint = best["checkpoint"]
    if out is not None:
        (out / "best.json").write_bytes((out / "checkpoints" / best["checkpoint"]).read_bytes())
        write_history_csv(history, out / "history.csv")
        history.best_params = load_checkpoint(out / "best.json")[0]
    else:
        history.best_params = snapshots[best["checkpoint"]]
    return history


def _train_step(params, opt, inst, cfg: TrainConfig, dropout_seed: int):
    if inst.n_edges == 0:
        LOGGER.info("skipping instance %s without edges", inst.id)
        return None
    scores, cache = forward(params, inst, training=True, dropout_seed=dropout_seed)
    pred = predict(cfg.method, inst, scores, cfg.k, cfg.rank_key, cfg.tau)
    try:
        loss, g = kep_loss(inst, pred, scores)
    except DegenerateSelection:
        LOGGER.info("degenerate selection on %s, step skipped", inst.id)
        return None
    if cfg.method == "unsupervised_gnn":
        loss += constraint_regularizer(inst, pred, cfg.reg_coefficient)
    if not math.isfinite(loss):
        LOGGER.warning("non-finite loss on %s, step skipped", inst.id)
        return None
    grads = backward(params, inst, cache, g)
    opt.step(params, grads)
    return loss


def write_history_csv(history: TrainHistory, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS)
        writer.writeheader()
        writer.writerows(history.rows())


def moving_average(values, window: int) -> np.ndarray:
    v = np.asarray([x for x in values if math.isfinite(x)], dtype=np.float64)
    if v.size < window:
        return v.copy()
    c = np.cumsum(np.concatenate([[0.0], v]))
    return (c[window:] - c[:-window]) / window
