"""``kep`` command line: gen, exact, greedy, train, eval, bench-solver, hash, validate."""

from __future__ import annotations

import argparse
import difflib
import json
import logging
import os
import re
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .core import load_instance, score, selection_from_indices, validate
from .exact import solve_exact
from .gen import GenConfig, generate_dataset, generate_splits, wl_hash
from .greedy import greedy_cycles, greedy_paths
from .harness import (
    METHODS,
    evaluate_methods,
    make_method,
    aggregate,
    solver_scaling,
    write_outputs,
    write_scaling,
)
from .scorer import ScorerConfig
from .train import TrainConfig, train

LOGGER = logging.getLogger("kep")

COMMANDS = ("gen", "exact", "greedy", "train", "eval", "bench-solver", "hash", "validate")
TRAIN_METHODS = {"two-stage-paths": "two_stage_paths",
                 "two-stage-cycles": "two_stage_cycles",
                 "unsupervised": "unsupervised_gnn"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse with close-match suggestions, raising instead of exiting."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}{_hint(message, self)}")


def _hint(message: str, parser: argparse.ArgumentParser) -> str:
    m = re.search(r"invalid choice: '([^']*)'", message)
    if m:
        word, candidates = m.group(1), list(COMMANDS)
        for a in parser._actions:
            if a.choices and m.group(1) not in COMMANDS:
                candidates += [str(c) for c in a.choices]
    else:
        m = re.search(r"unrecognized arguments: (\S+)", message)
        if not m:
            return ""
        word = m.group(1).split("=")[0]
        candidates = [o for a in parser._actions for o in a.option_strings]
    close = difflib.get_close_matches(word, candidates, n=1)
    return f" (did you mean {close[0]}?)" if close else ""


def _check_options(parser: argparse.ArgumentParser, argv) -> None:
    """Report misspelled options before argparse complains about missing ones."""
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    name = next((t for t in argv if t in sub.choices), None)
    if name is None:
        return
    known = {o for a in sub.choices[name]._actions for o in a.option_strings}
    for tok in argv:
        opt = tok.split("=")[0]
        if opt.startswith("--") and opt not in known:
            p = sub.choices[name]
            p.error(f"unrecognized arguments: {opt}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    g.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    g.add_argument("--json-logs", action="store_true", default=argparse.SUPPRESS)
    g.add_argument("--workers", type=int, default=argparse.SUPPRESS)
    g.add_argument("--no-timing", action="store_true", default=argparse.SUPPRESS,
                   help="write 0.0 for wall-clock fields so reruns are byte-identical")
    return p


def _sizes(text: str) -> list:
    if "-" in text and "," not in text:
        lo, hi = text.split("-")
        return list(range(int(lo), int(hi) + 1))
    return [int(x) for x in text.split(",")]


def _splits(text: str) -> dict:
    out = {}
    for part in text.split(","):
        name, count = part.split("=")
        out[name.strip()] = int(count)
    return out


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="kep", description="Kidney exchange toolkit", parents=[common])
    parser.add_argument("--version", action="version", version=f"kep {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen", parents=[common], help="generate a random dataset")
    p.add_argument("--nodes", type=int, default=300)
    p.add_argument("--edges", type=int, default=5500)
    p.add_argument("--count", type=int, default=None, help="required unless --splits is given")
    p.add_argument("--out", required=True)
    p.add_argument("--no-type-consistent", action="store_true")
    p.add_argument("--splits", type=_splits, default=None,
                   help="e.g. train=10000,val=100,test=10000 (overrides --count)")

    p = sub.add_parser("exact", parents=[common], help="solve one instance exactly")
    p.add_argument("--instance", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--time-limit", type=float, default=None)
    p.add_argument("--node-limit", type=int, default=None,
                   help="cap on explored search nodes; reproducible, unlike --time-limit")
    p.add_argument("--out", required=True)

    p = sub.add_parser("greedy", parents=[common], help="run a greedy heuristic")
    p.add_argument("--method", choices=("paths", "cycles"), required=True)
    p.add_argument("--instance", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--scores", default=None, help="JSON array of per-edge ranking scores")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", parents=[common], help="train the edge scorer")
    p.add_argument("--method", choices=tuple(TRAIN_METHODS), required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--validate-every", type=int, default=500)
    p.add_argument("--optimizer", choices=("adaptive_moment", "plain_sgd"),
                   default=TrainConfig.optimizer)
    p.add_argument("--hidden-dim", type=int, default=16)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--softmax-sign", choices=("order_preserving", "paper_negative"),
                   default="order_preserving")
    p.add_argument("--rank-key", choices=("raw", "prob"), default="raw")
    p.add_argument("--k", type=int, default=None)

    p = sub.add_parser("eval", parents=[common], help="evaluate methods on a dataset")
    p.add_argument("--method", action="append", required=True, choices=METHODS)
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--time-limit", type=float, default=None)
    p.add_argument("--rank-key", choices=("raw", "prob"), default="raw")
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--node-limit", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("bench-solver", parents=[common], help="exact-solver scaling experiment")
    p.add_argument("--sizes", type=_sizes, default=_sizes("5-12"))
    p.add_argument("--per-size", type=int, default=20)
    p.add_argument("--time-limit", type=float, default=120.0)
    p.add_argument("--k", type=int, default=3, help="length cap; 0 means unlimited")
    p.add_argument("--out", required=True)

    p = sub.add_parser("hash", parents=[common], help="print an instance's WL hash")
    p.add_argument("--instance", required=True)
    p.add_argument("--iterations", type=int, default=3)

    p = sub.add_parser("validate", parents=[common], help="check a solution")
    p.add_argument("--instance", required=True)
    p.add_argument("--solution", required=True,
                   help="JSON with a 'selection' edge-index list, or a bare list")
    p.add_argument("--k", type=int, default=None)
    return parser


def _config(args) -> dict:
    skip = {"quiet", "json_logs", "workers"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _write_json(path, data) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(data, indent=1, sort_keys=True))


def _summary(command: str, **fields) -> str:
    parts = [f"kep {command}"]
    for k, v in fields.items():
        if isinstance(v, bool):
            v = str(v).lower()
        parts.append(f"{k}={v}")
    return " ".join(parts)


def _cmd_gen(args) -> str:
    cfg = GenConfig(n_nodes=args.nodes, n_edges=args.edges, seed=args.seed,
                    type_consistent=not args.no_type_consistent)
    if args.splits:
        manifests = generate_splits(cfg, args.splits, args.out, args.workers)
        counts = ",".join(f"{k}:{m['count']}" for k, m in manifests.items())
        return _summary("gen", status="ok", splits=counts, out=args.out)
    if args.count is None:
        raise UsageError("kep gen: one of --count or --splits is required")
    manifest = generate_dataset(cfg, args.count, args.out, args.workers)
    return _summary("gen", status="ok", count=manifest["count"], out=args.out)


def _cmd_exact(args) -> str:
    inst = load_instance(args.instance)
    res = solve_exact(inst, args.k, args.time_limit, node_limit=args.node_limit)
    data = dict(res.to_dict(), format="kep-exact-v1", instance_id=inst.id, config=_config(args))
    if args.no_timing:
        data["elapsed"] = 0.0
    _write_json(args.out, data)
    return _summary("exact", status=res.status, score=repr(res.score),
                    edges=int(res.selection.sum()), out=args.out)


def _cmd_greedy(args) -> str:
    inst = load_instance(args.instance)
    rank = inst.w
    if args.scores:
        rank = np.asarray(json.loads(Path(args.scores).read_text()), dtype=np.float64)
    fn = greedy_paths if args.method == "paths" else greedy_cycles
    t0 = time.perf_counter()
    sel = fn(inst, rank, args.k)
    elapsed = 0.0 if args.no_timing else time.perf_counter() - t0
    rep = validate(inst, sel, args.k)
    data = {"format": "kep-greedy-v1", "instance_id": inst.id,
            "selection": np.flatnonzero(sel).tolist(), "score": score(inst, sel),
            "valid": rep.valid, "elapsed": elapsed, "config": _config(args)}
    _write_json(args.out, data)
    return _summary("greedy", status="ok", score=repr(data["score"]), valid=rep.valid,
                    out=args.out)


def _cmd_train(args) -> str:
    tcfg = TrainConfig(epochs=args.epochs, validate_every=args.validate_every,
                       learning_rate=args.lr, optimizer=args.optimizer,
                       reg_coefficient=args.lam, method=TRAIN_METHODS[args.method],
                       seed=args.seed, k=args.k, rank_key=args.rank_key)
    scfg = ScorerConfig(hidden_dim=args.hidden_dim, dropout_rate=args.dropout,
                        softmax_sign=args.softmax_sign)
    hist = train(tcfg, scfg, args.train, args.val, args.out)
    return _summary("train", status="ok", steps=len(hist.steps), skipped=hist.skipped,
                    best_step=hist.best_step, best=str(Path(args.out) / "best.json"))


def _cmd_eval(args) -> str:
    specs = [make_method(m, args.k, args.checkpoint, args.time_limit, args.rank_key, args.tau,
                         args.node_limit)
             for m in args.method]
    results = evaluate_methods(specs, args.data, args.workers, timing=not args.no_timing)
    records = [r for m in args.method for r in results[m]]
    report = aggregate(records)
    write_outputs(records, report, args.out, _config(args))
    means = ",".join(
        f"{m}:{report['methods'][m]['score']['mean']:.4f}" for m in args.method
        if m in report["methods"] and report["methods"][m]["score"]
    )
    return _summary("eval", status="ok", instances=len(records) // max(len(specs), 1),
                    mean_score=means or "none", out=args.out)


def _cmd_bench(args) -> str:
    k = None if args.k == 0 else args.k
    runs, table = solver_scaling(args.sizes, args.per_size, args.time_limit, args.seed, k,
                                 timing=not args.no_timing)
    write_scaling(runs, table, args.out, _config(args))
    return _summary("bench-solver", status="ok", sizes=len(table), runs=len(runs), out=args.out)


def _cmd_hash(args) -> str:
    inst = load_instance(args.instance)
    return _summary("hash", status="ok", hash=wl_hash(inst, args.iterations))


def _cmd_validate(args) -> str:
    inst = load_instance(args.instance)
    data = json.loads(Path(args.solution).read_text())
    indices = data["selection"] if isinstance(data, dict) else data
    sel = selection_from_indices(inst, indices)
    rep = validate(inst, sel, args.k)
    return _summary("validate", status="ok", valid=rep.valid,
                    invalid_edges=rep.invalid_edge_count, score=repr(score(inst, sel)))


HANDLERS = {"gen": _cmd_gen, "exact": _cmd_exact, "greedy": _cmd_greedy, "train": _cmd_train,
            "eval": _cmd_eval, "bench-solver": _cmd_bench, "hash": _cmd_hash,
            "validate": _cmd_validate}


def _setup_logging(quiet: bool, json_logs: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    if json_logs:
        class _Json(logging.Formatter):
            def format(self, record):
                return json.dumps({"level": record.levelname, "logger": record.name,
                                   "message": record.getMessage()})
        handler.setFormatter(_Json())
    else:
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("kep")
    root.handlers[:] = [handler]
    root.setLevel(logging.WARNING if quiet else logging.INFO)


def dispatch(argv=None) -> int:
    """Run one command; returns 0 on success, 2 on usage errors, 1 on failures."""
    parser = build_parser()
    try:
        argv = list(sys.argv[1:] if argv is None else argv)
        _check_options(parser, argv)
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("kep: a command is required (" + ", ".join(COMMANDS) + ")")
    except UsageError as exc:
        print(f"kep status=usage_error message={json.dumps(str(exc))}")
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    for name, default in (("seed", 0), ("quiet", False), ("json_logs", False),
                          ("workers", os.cpu_count() or 1), ("no_timing", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    _setup_logging(args.quiet, args.json_logs)
    try:
        line = HANDLERS[args.command](args)
    except UsageError as exc:
        print(_summary(args.command, status="usage_error", message=json.dumps(str(exc))))
        return 2
    except Exception as exc:
        LOGGER.debug("command failed", exc_info=True)
        print(_summary(args.command, status="error", message=json.dumps(f"{type(exc).__name__}: {exc}")))
        return 1
    print(line)
    return 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
