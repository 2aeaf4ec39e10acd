"""Planted-pattern experiment: structure learning, 5-fold cross-validation, embedding snapshots.

    python scripts/run_planted.py --out runs/planted
"""

import argparse
import logging
import time
from pathlib import Path

from lrnn import data
from lrnn.structure import SearchConfig, structure_learn
from lrnn.training import evaluate


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/planted")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--folds", type=int, default=5)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    examples = data.generate_planted_dataset(args.seed, args.n)
    (out / "planted.txt").write_text(data.format_examples(examples), encoding="utf-8")
    cfg = SearchConfig(seed=args.seed, threads=args.threads)

    emb = out / "embeddings.csv"
    emb.write_text("", encoding="utf-8")
    records = []
    t0 = time.perf_counter()
    template, store = structure_learn(examples, cfg, lambda it, t, s: data.export_embeddings(t, s, it, emb), records)
    t_learn = time.perf_counter() - t0
    (out / "template.txt").write_text(data.serialize_template(template, store), encoding="utf-8")
    with open(out / "iterations.csv", "w", encoding="utf-8", newline="") as fh:
        data.write_iterations_csv(records, fh)
    m = evaluate(template.clauses, store, examples)
    print(f"learn: {len(records)} iterations, train accuracy {m.accuracy:.3f}, {t_learn:.1f}s")
    for r in records:
        print(f"  {r.iteration}: {r.rule}  score={r.score:.4f} baseline={r.baseline:.4f} acc={r.train_accuracy:.3f}")

    t0 = time.perf_counter()
    folds = data.cross_validate(examples, args.folds, cfg)
    with open(out / "folds.csv", "w", encoding="utf-8", newline="") as fh:
        data.write_folds_csv(folds, fh)
    mean = sum(f.test_accuracy for f in folds) / len(folds)
    print(f"xval: mean test accuracy {mean:.3f} over {len(folds)} folds, {time.perf_counter() - t0:.1f}s")
    s = data.template_stats(template)
    print(f"stats: rules={s.rules} patterns={s.patterns} avg_len={s.avg_pattern_length:.2f} depth={s.depth}")


if __name__ == "__main__":
    main()
