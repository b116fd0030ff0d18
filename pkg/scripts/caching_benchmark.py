#!/usr/bin/env python3
"""Throughput benchmark: cold first epoch vs memoized later epochs.

The first epoch reads token-level records from disk, validates them and
pools sentence vectors on demand; later epochs hit the in-process cache.
Prints batches/sec per epoch and the warm/cold ratio.

Usage:
    python3 scripts/caching_benchmark.py --out /tmp/bench [--epochs 4]
"""

import argparse
from pathlib import Path

from sentrank.data import load_pool, load_qrels
from sentrank.synthetic import SyntheticConfig, generate_files
from sentrank.tokrep import LazyTokrepSource, MemoizingCache
from sentrank.training import TrainConfig, train


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True, help="working directory")
    ap.add_argument("--epochs", type=int, default=4)
    ap.add_argument("--queries", type=int, default=32)
    ap.add_argument("--enc-dim", type=int, default=256)
    ap.add_argument("--tokens-per-sentence", type=int, default=256)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = SyntheticConfig(n_train_queries=args.queries, n_dev_queries=2,
                          enc_dim=args.enc_dim, query_tokens=4, sentences=4,
                          tokens_per_sentence=args.tokens_per_sentence,
                          seed=args.seed)
    paths = generate_files(cfg, Path(args.out))
    size = paths["tokrep"].stat().st_size / 1e6
    print(f"dataset: {cfg.n_train_queries * cfg.candidates_per_query} train records, "
          f"{size:.0f} MB on disk", flush=True)

    cache = MemoizingCache(LazyTokrepSource(paths["tokrep"]))
    tcfg = TrainConfig(lr=3e-3, warmup_steps=32, batch_size=64,
                       epochs=args.epochs, hidden_dim=8, episodes=1,
                       dropout=0.0, seed=args.seed, pairs_per_query=64)
    result = train(tcfg, cache, load_qrels(paths["qrels"]),
                   load_pool(paths["train_pool"]))

    bps = [entry["batches_per_sec"] for entry in result.log]
    print("\nepoch  batches/sec")
    for i, b in enumerate(bps, 1):
        print(f"{i:>5d}  {b:10.1f}")
    if len(bps) > 1:
        print(f"\nwarm/cold ratio: {min(bps[1:]) / bps[0]:.2f}")


if __name__ == "__main__":
    main()
