"""Command-line entry point: ``lrnn {learn,train,eval,xval,gen-synthetic,stats}``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

from . import data
from .logic import HeadKind
from .network import build_network, to_dot
from .structure import IterationRecord, SearchConfig, structure_learn
from .training import NothingToTrain, TrainConfig, evaluate, train_weights

def _search_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--d", type=int, default=3, help="latent dimension (soft clusters per layer)")
    p.add_argument("--beam", type=int, default=5, help="beam width; 0 for unbounded")
    p.add_argument("--max-rule-len", type=int, default=4)
    p.add_argument("--max-vars", type=int, default=4)
    p.add_argument("--max-iters", type=int, default=8)
    p.add_argument("--k", type=int, default=1, help="arity of invented latent predicates")
    p.add_argument("--min-improvement", type=float, default=1e-3)
    p.add_argument("--no-cache", action="store_true", help="score candidates on full networks")
    p.add_argument("--score-lr", type=float, default=0.05, help="learning rate while scoring candidates")
    _train_args(p)
    p.add_argument("--threads", type=int, default=1)


def _train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lr", type=float, default=0.3)
    p.add_argument("--epochs", type=int, default=400)
    p.add_argument("--batch", type=int, default=1, help="minibatch size")
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)


def _train_cfg(args, loss: str = "squared") -> TrainConfig:
    return TrainConfig(args.lr, args.epochs, args.batch, args.restarts, args.seed, loss)


def _search_cfg(args) -> SearchConfig:
    train = _train_cfg(args)
    return SearchConfig(
        d=args.d, max_rule_length=args.max_rule_len, max_variables=args.max_vars,
        beam_width=args.beam or None, max_iterations=args.max_iters, latent_arity=args.k,
        min_score_improvement=args.min_improvement, seed=args.seed, train=train,
        score=dataclasses.replace(train, learning_rate=args.score_lr, loss="logistic"), use_cache=not args.no_cache, threads=args.threads,
    )


def _write_dot(template, examples, path: str, name: str | None) -> None:
    ex = next((e for e in examples if e.name == name), None) if name else (examples[0] if examples else None)
    if ex is None:
        raise data.DataError(f"no example {name!r} for DOT export")
    net = build_network(template.clauses, ex.facts, [q for q, _ in ex.queries])
    Path(path).write_text(to_dot(net, "lrnn"), encoding="utf-8")


def cmd_learn(args) -> int:
    examples = data.parse_examples(args.examples, strict_unary=args.strict_unary)
    cfg = _search_cfg(args)
    if args.emit_embeddings:
        Path(args.emit_embeddings).write_text("", encoding="utf-8")
    callback = (lambda it, t, s: data.export_embeddings(t, s, it, args.emit_embeddings)) if args.emit_embeddings else None
    records: list[IterationRecord] = []
    history: list | None = [] if args.train_log else None
    template, store = structure_learn(examples, cfg, callback, records, history)
    Path(args.out).write_text(data.serialize_template(template, store), encoding="utf-8")
    if args.train_log:
        with open(args.train_log, "w", encoding="utf-8", newline="") as fh:
            data.write_history_csv(history, fh)
    if args.metrics:
        with open(args.metrics, "w", encoding="utf-8", newline="") as fh:
            data.write_iterations_csv(records, fh)
    if args.emit_dot:
        _write_dot(template, examples, args.emit_dot, args.dot_example)
    m = evaluate(template.clauses, store, examples, cfg.params)
    print(f"rules={len(template)} train_accuracy={m.accuracy:.4f} train_loss={m.loss:.6f}")
    return 0


def cmd_train(args) -> int:
    template, store = data.load_template(args.template)
    examples = data.parse_examples(args.examples)
    frozen = set()
    if args.freeze_latent:
        frozen = {wc.key for wc in template if wc.kind == HeadKind.LATENT}
    history: list | None = [] if args.train_log else None
    try:
        store = train_weights(template.clauses, examples, _train_cfg(args, args.loss), frozen, store, history=history)
    except NothingToTrain as exc:
        raise data.DataError(str(exc)) from None
    Path(args.out).write_text(data.serialize_template(template, store), encoding="utf-8")
    if args.train_log:
        with open(args.train_log, "w", encoding="utf-8", newline="") as fh:
            data.write_history_csv(history, fh)
    if args.emit_dot:
        _write_dot(template, examples, args.emit_dot, args.dot_example)
    m = evaluate(template.clauses, store, examples)
    print(f"train_accuracy={m.accuracy:.4f} train_loss={m.loss:.6f}")
    return 0


def cmd_eval(args) -> int:
    template, store = data.load_template(args.template)
    examples = data.parse_examples(args.examples)
    m = evaluate(template.clauses, store, examples)
    out = open(args.out, "w", encoding="utf-8", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["n", "accuracy", "loss", "log_loss"])
        w.writerow([m.n, f"{m.accuracy:.6f}", f"{m.loss:.10g}", f"{m.log_loss:.10g}"])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_xval(args) -> int:
    examples = data.parse_examples(args.examples, strict_unary=args.strict_unary)
    results = data.cross_validate(examples, args.folds, _search_cfg(args))
    out = open(args.out, "w", encoding="utf-8", newline="") if args.out else sys.stdout
    try:
        data.write_folds_csv(results, out)
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_gen(args) -> int:
    examples = data.generate_planted_dataset(args.seed, args.n, args.pattern, args.target, args.shuffle_labels)
    header = f"planted pattern: {args.target} iff {args.pattern}; seed={args.seed} n={args.n}"
    if args.shuffle_labels:
        header += " (labels shuffled)"
    Path(args.out).write_text(data.format_examples(examples, header), encoding="utf-8")
    return 0


def cmd_stats(args) -> int:
    template, _ = data.load_template(args.template)
    s = data.template_stats(template)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["rules", "patterns", "avg_pattern_length", "depth"])
    w.writerow([s.rules, s.patterns, f"{s.avg_pattern_length:.4f}", s.depth])
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lrnn", description=__doc__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("learn", help="structure learning from examples")
    p.add_argument("examples")
    p.add_argument("-o", "--out", required=True, help="learned template file")
    _search_args(p)
    p.add_argument("--emit-embeddings", metavar="CSV", help="append layer-1 embeddings after every iteration")
    p.add_argument("--emit-dot", metavar="DOT", help="write the ground network of one example")
    p.add_argument("--dot-example", metavar="NAME")
    p.add_argument("--train-log", metavar="CSV", help="per-epoch training loss/accuracy")
    p.add_argument("--metrics", metavar="CSV", help="per-iteration search metrics")
    p.add_argument("--strict-unary", action="store_true", help="reject attribute-value facts")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("train", help="train the weights of a given template")
    p.add_argument("template")
    p.add_argument("examples")
    p.add_argument("-o", "--out", required=True)
    _train_args(p)
    p.add_argument("--loss", choices=["squared", "logistic"], default="squared")
    p.add_argument("--freeze-latent", action="store_true")
    p.add_argument("--train-log", metavar="CSV")
    p.add_argument("--emit-dot", metavar="DOT")
    p.add_argument("--dot-example", metavar="NAME")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy and loss of a template on examples")
    p.add_argument("template")
    p.add_argument("examples")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("xval", help="stratified cross-validation of structure learning")
    p.add_argument("examples")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("-o", "--out")
    p.add_argument("--strict-unary", action="store_true")
    _search_args(p)
    p.set_defaults(func=cmd_xval)

    p = sub.add_parser("gen-synthetic", help="generate a planted-pattern molecule dataset")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pattern", default=data.DEFAULT_PATTERN)
    p.add_argument("--target", default="pos")
    p.add_argument("--shuffle-labels", action="store_true")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("stats", help="rule count, learned patterns, mean pattern length, depth")
    p.add_argument("template")
    p.set_defaults(func=cmd_stats)
    return ap


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except data.DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
