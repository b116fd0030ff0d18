"""Command-line surface: validate / train / rerank / eval / diffusion.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
Every command writes a JSON run manifest next to its outputs recording the
resolved configuration, seed, input digests, artifact paths, and timestamps,
so a run can be reconstructed from its artifacts alone. Data artifacts
(checkpoints, run files, reports) are byte-deterministic for fixed inputs
and seed; only the manifest carries timestamps.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import hashlib
import json
import os
import sys
from pathlib import Path

from . import __version__
from .analysis import diffusion
from .data import load_pool, load_qrels, read_run, write_run
from .errors import DataError
from .evaluation import evaluate, rerank
from .model import ClsHeadParams, ModelParams, load_checkpoint, save_checkpoint
from .tokrep import (CacheStore, LazyTokrepSource, MemoizingCache, pool_sentences,
                     read_tokrep)
from .training import TrainConfig, train, write_log_jsonl


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; this tool reserves 2 for data errors
    def error(self, message):
        raise UsageError(message)


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _utcnow() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


@dataclasses.dataclass
class RunManifest:
    command: str
    config: dict
    seed: object
    inputs: dict  # name -> {"path": ..., "sha256": ...}
    artifacts: dict  # name -> path
    started: str
    finished: str
    version: str = __version__

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"


def _write_manifest(out_path, command, args, inputs, artifacts, started) -> None:
    config = {k: (str(v) if isinstance(v, Path) else v)
              for k, v in vars(args).items() if k != "func"}
    manifest = RunManifest(
        command, config, config.get("seed"),
        {name: {"path": str(p), "sha256": _sha256(p)} for name, p in inputs.items()},
        {name: str(p) for name, p in artifacts.items()},
        started, _utcnow())
    with open(out_path, "w", encoding="utf-8") as f:
        f.write(manifest.to_json())


def _load_cache(args):
    """Resolve --cache/--tokrep into a record store for training/reranking.

    An existing cache file wins; a missing cache path plus --tokrep pools
    every record eagerly and saves the cache there; --tokrep alone reads
    records lazily, memoizing in process.
    """
    cache_path = getattr(args, "cache", None)
    tokrep_path = getattr(args, "tokrep", None)
    if cache_path and Path(cache_path).is_file():
        return CacheStore.load(cache_path), {"cache": Path(cache_path)}
    if tokrep_path:
        tokrep = _require_file(tokrep_path, "tokrep file")
        if cache_path:
            store = CacheStore()
            for rec in read_tokrep(tokrep):
                store.add(pool_sentences(rec))
            store.save(cache_path)
            return store, {"tokrep": tokrep}
        return MemoizingCache(LazyTokrepSource(tokrep)), {"tokrep": tokrep}
    if cache_path:
        raise UsageError(f"cache file not found: {cache_path} (pass --tokrep to build it)")
    raise UsageError("one of --cache or --tokrep is required")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_validate(args) -> int:
    path = _require_file(args.tokrep, "tokrep file")
    count = 0
    enc_dim = None
    for rec in read_tokrep(path):
        enc_dim = rec.enc_dim
        count += 1
    print(f"ok: {count} records, enc_dim {enc_dim if count else 'n/a'}")
    return 0


def cmd_train(args) -> int:
    started = _utcnow()
    qrels_path = _require_file(args.qrels, "qrels file")
    pool_path = _require_file(args.train_pool, "train pool file")
    cache, inputs = _load_cache(args)
    inputs["qrels"] = qrels_path
    inputs["train_pool"] = pool_path
    qrels = load_qrels(qrels_path, args.relevance_threshold)
    pools = load_pool(pool_path)
    dev_pools = None
    if args.dev_pool:
        dev_path = _require_file(args.dev_pool, "dev pool file")
        inputs["dev_pool"] = dev_path
        dev_pools = load_pool(dev_path)

    cfg = TrainConfig(
        margin=args.margin, lr=args.lr, warmup_steps=args.warmup_steps,
        batch_size=args.batch_size, episodes=args.episodes,
        hidden_dim=args.hidden_dim, dropout=args.dropout, epochs=args.epochs,
        seed=args.seed, weight_decay=args.weight_decay,
        pairs_per_query=args.pairs_per_query, hidden_g=args.hidden_gate)
    result = train(cfg, cache, qrels, pools, dev_pools=dev_pools, head=args.head)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "checkpoint.dmnw"
    log = out_dir / "train_log.jsonl"
    save_checkpoint(ckpt, result.params)
    write_log_jsonl(result.log, log)
    _write_manifest(out_dir / "manifest.json", "train", args, inputs,
                    {"checkpoint": ckpt, "log": log}, started)
    best = "n/a" if result.best_dev_map is None else f"{result.best_dev_map:.6f}"
    print(f"checkpoint: {ckpt}")
    print(f"best_epoch: {result.best_epoch}  best_dev_map: {best}")
    return 0


def _head_params(params, requested):
    """Pick the scoring head; a dmn checkpoint's answer layer embeds a
    cls-only baseline (its cls slice), the reverse direction does not exist."""
    is_dmn = isinstance(params, ModelParams)
    if requested is None or requested == ("dmn" if is_dmn else "cls"):
        return params
    if requested == "cls" and is_dmn:
        return ClsHeadParams(params.enc_dim, params.w_a[:, :params.enc_dim].copy(),
                             params.b_a.copy())
    raise UsageError("--head dmn requires a dmn checkpoint")


def cmd_rerank(args) -> int:
    started = _utcnow()
    ckpt_path = _require_file(args.checkpoint, "checkpoint")
    pool_path = _require_file(args.pool, "pool file")
    cache, inputs = _load_cache(args)
    inputs["checkpoint"] = ckpt_path
    inputs["pool"] = pool_path
    params = _head_params(load_checkpoint(ckpt_path), args.head)
    run = rerank(params, load_pool(pool_path), cache)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_run(run, args.tag, out)
    _write_manifest(out.with_name(out.name + ".manifest.json"), "rerank", args,
                    inputs, {"run": out}, started)
    print(f"run: {out} ({len(run.entries)} queries)")
    return 0


def cmd_eval(args) -> int:
    started = _utcnow()
    run_path = _require_file(args.run, "run file")
    qrels_path = _require_file(args.qrels, "qrels file")
    report = evaluate(read_run(run_path), load_qrels(qrels_path, args.relevance_threshold))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as f:
        f.write(report.to_json())
    _write_manifest(out.with_name(out.name + ".manifest.json"), "eval", args,
                    {"run": run_path, "qrels": qrels_path}, {"report": out}, started)
    sys.stdout.write(report.summary_text())
    return 0


def cmd_diffusion(args) -> int:
    started = _utcnow()
    path = _require_file(args.tokrep, "tokrep file")
    report = diffusion(read_tokrep(path), args.sample, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as f:
        f.write(report.to_json())
    artifacts = {"report": out}
    if args.csv:
        csv_path = Path(args.csv)
        with open(csv_path, "w", encoding="utf-8") as f:
            f.write(report.histogram_csv())
        artifacts["histogram_csv"] = csv_path
    _write_manifest(out.with_name(out.name + ".manifest.json"), "diffusion", args,
                    {"tokrep": path}, artifacts, started)
    print(f"report: {out} ({report.pair_count} pairs sampled)")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="sentrank",
                     description="sentence-memory passage re-ranking over "
                                 "cached encoder representations")
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="upper bound on worker parallelism (execution "
                             "never exceeds it; current pipeline is sequential)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a tokrep file's invariants")
    p.add_argument("--tokrep", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("train", help="train a re-ranking head")
    p.add_argument("--tokrep", help="token representation file (records pooled on demand)")
    p.add_argument("--cache", help="sentence-vector cache file; built from "
                                   "--tokrep and saved here when absent")
    p.add_argument("--qrels", required=True)
    p.add_argument("--train-pool", required=True)
    p.add_argument("--dev-pool")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--head", choices=("dmn", "cls"), default="dmn")
    p.add_argument("--margin", type=float, default=0.2)
    p.add_argument("--lr", type=float, default=3e-5)
    p.add_argument("--warmup-steps", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--episodes", type=int, default=4)
    p.add_argument("--hidden-dim", type=int, default=256)
    p.add_argument("--hidden-gate", type=int, default=None,
                   help="gate MLP width (default: hidden-dim)")
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--pairs-per-query", type=int, default=1)
    p.add_argument("--relevance-threshold", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rerank", help="score a candidate pool with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tokrep")
    p.add_argument("--cache")
    p.add_argument("--pool", required=True)
    p.add_argument("--out", required=True, help="run file path")
    p.add_argument("--head", choices=("dmn", "cls"), default=None,
                   help="scoring head (default: the checkpoint's own)")
    p.add_argument("--tag", default="sentrank")
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("eval", help="score a run file against qrels")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--out", required=True, help="JSON report path")
    p.add_argument("--relevance-threshold", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("diffusion", help="token-similarity report over a tokrep file")
    p.add_argument("--tokrep", required=True)
    p.add_argument("--out", required=True, help="JSON report path")
    p.add_argument("--sample", type=float, default=0.1,
                   help="fraction of records to sample")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", help="also write the histogram table here")
    p.set_defaults(func=cmd_diffusion)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (KeyboardInterrupt, SystemExit):
        raise
    except Exception as exc:  # noqa: BLE001 - boundary translation to exit code
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


def entrypoint() -> None:
    sys.exit(main())
