"""Pairwise max-margin training with AdamW and dev-MAP checkpoint selection.

Each step scores a batch of (positive, negative) record pairs with the
batched forward, takes the mean of max(0, margin - s_pos + s_neg) and applies
one AdamW update. The learning rate ramps linearly over the warmup steps and
stays constant afterwards. After every epoch the model re-ranks the dev pools
and the checkpoint with the highest dev MAP (earliest on ties) wins.

The encoder side is frozen throughout: training reads representations from
the cache and never writes to it.
"""

from __future__ import annotations

import copy
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import model as model_mod
from .errors import ShapeError
from .evaluation import evaluate, rerank


@dataclass
class TrainConfig:
    margin: float = 0.2
    lr: float = 3e-5
    warmup_steps: int = 1000
    batch_size: int = 32
    episodes: int = 4
    hidden_dim: int = 256
    dropout: float = 0.1
    epochs: int = 1
    seed: int = 0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    pairs_per_query: int = 1
    hidden_g: int | None = None

    def __post_init__(self):
        if self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1 or self.epochs < 0 or self.pairs_per_query < 1:
            raise ValueError("batch_size and pairs_per_query must be >= 1, epochs >= 0")


@dataclass(eq=False)
class TrainPair:
    qid: str
    pid_pos: str
    pid_neg: str


def pair_loss(score_pos: float, score_neg: float, margin: float) -> float:
    """max(0, margin - score_pos + score_neg)"""
    return max(0.0, margin - score_pos + score_neg)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to cfg.lr, constant afterwards; step counts from 1."""
    if step < 1:
        raise ValueError(f"step counts from 1, got {step}")
    if cfg.warmup_steps <= 0:
        return cfg.lr
    return cfg.lr * min(1.0, step / cfg.warmup_steps)


# ---------------------------------------------------------------------------
# AdamW
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)  # name -> first moment
    v: dict = field(default_factory=dict)  # name -> second moment


def _is_bias(name: str) -> bool:
    return name.rsplit(".", 1)[-1].startswith("b")


def adamw_step(weights, grads: dict, state: AdamState, lr_t: float, cfg: TrainConfig) -> None:
    """One decoupled-weight-decay Adam update, in place.

    ``weights`` is (name, array) pairs; decay skips bias vectors. The state's
    step counter feeds the bias correction and increments here.
    """
    state.step += 1
    c1 = 1.0 - cfg.beta1 ** state.step
    c2 = 1.0 - cfg.beta2 ** state.step
    for name, arr in weights:
        g = grads[name]
        if g.shape != arr.shape:
            raise ShapeError(f"adamw_step: grad shape {g.shape} != param shape {arr.shape} for {name}")
        m = state.m.setdefault(name, np.zeros_like(arr))
        v = state.v.setdefault(name, np.zeros_like(arr))
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        arr -= lr_t * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        if cfg.weight_decay > 0.0 and not _is_bias(name):
            arr -= lr_t * cfg.weight_decay * arr


# ---------------------------------------------------------------------------
# pair sampling
# ---------------------------------------------------------------------------


def sample_pairs(qrels, pool, rng, pairs_per_query: int = 1):
    """Uniform (positive, negative) picks per query; returns (pairs, skipped).

    Queries whose pool lacks a relevant or an irrelevant candidate contribute
    nothing and are counted in ``skipped``.
    """
    pairs = []
    skipped = 0
    for qid in pool.qids():
        candidates = pool.candidates[qid]
        positives = [p for p in candidates if qrels.is_relevant(qid, p)]
        negatives = [p for p in candidates if not qrels.is_relevant(qid, p)]
        if not positives or not negatives:
            skipped += 1
            continue
        for _ in range(pairs_per_query):
            pos = positives[rng.integers(len(positives))]
            neg = negatives[rng.integers(len(negatives))]
            pairs.append(TrainPair(qid, pos, neg))
    return pairs, skipped


# ---------------------------------------------------------------------------
# batched loss graph
# ---------------------------------------------------------------------------


def _batch_loss_graph(bound, head_kind, pair_records, margin, rate, rng):
    """Scalar loss tensor for one batch of (pos record, neg record) pairs."""
    row_of = {}
    records = []
    for pos, neg in pair_records:
        for rec in (pos, neg):
            key = (rec.qid, rec.pid)
            if key not in row_of:
                row_of[key] = len(records)
                records.append(rec)
    groups = {}
    for i, rec in enumerate(records):
        shape = (rec.query_tokens.shape[0], rec.sentence_vectors.shape[0])
        groups.setdefault(shape, []).append(i)
    chunks = []
    final_row = {}
    offset = 0
    for indices in groups.values():
        batch = model_mod.RecordBatch.stack([records[i] for i in indices])
        if head_kind == "cls":
            chunks.append(model_mod.cls_score_graph(bound, batch))
        else:
            chunks.append(model_mod.score_graph(bound, batch, training=True,
                                                dropout_rate=rate, rng=rng))
        for local, i in enumerate(indices):
            rec = records[i]
            final_row[(rec.qid, rec.pid)] = offset + local
        offset += len(indices)
    scores = chunks[0] if len(chunks) == 1 else ad.vstack(chunks)
    pos_rows = [final_row[(pos.qid, pos.pid)] for pos, _ in pair_records]
    neg_rows = [final_row[(neg.qid, neg.pid)] for _, neg in pair_records]
    s_pos = ad.take_rows(scores, pos_rows)
    s_neg = ad.take_rows(scores, neg_rows)
    margin_block = ad.constant(np.full((len(pair_records), 1), margin))
    return ad.mean_all(ad.relu(ad.add(ad.sub(s_neg, s_pos), margin_block)))


# ---------------------------------------------------------------------------
# the training loop
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class TrainResult:
    params: object  # checkpoint with the best dev MAP (final params without dev)
    log: list  # one dict per epoch
    best_epoch: int | None
    best_dev_map: float | None


def _infer_enc_dim(cache, pools) -> int:
    for qid, pid in pools.pairs():
        return cache.get(qid, pid).enc_dim
    raise ValueError("cannot infer enc_dim from an empty candidate pool")


def init_params(cfg: TrainConfig, enc_dim: int, head: str, rng):
    if head == "cls":
        return model_mod.ClsHeadParams.init(rng, enc_dim)
    if head == "dmn":
        return model_mod.ModelParams.init(
            rng, enc_dim, cfg.hidden_dim, cfg.episodes, cfg.hidden_g)
    raise ValueError(f"unknown head {head!r}")


def train(cfg: TrainConfig, cache, qrels, pools, dev_pools=None, head: str = "dmn") -> TrainResult:
    """Train from scratch on sampled pairs; returns the best checkpoint + log."""
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    init_rng = np.random.default_rng(seeds[0])
    pair_rng = np.random.default_rng(seeds[1])
    dropout_rng = np.random.default_rng(seeds[2])

    params = init_params(cfg, _infer_enc_dim(cache, pools), head, init_rng)
    state = AdamState()
    log = []
    best = (None, None)  # (dev_map, epoch)
    best_params = None
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        pairs, skipped = sample_pairs(qrels, pools, pair_rng, cfg.pairs_per_query)
        started = time.perf_counter()
        loss_sum = 0.0
        n_batches = 0
        for lo in range(0, len(pairs), cfg.batch_size):
            batch = pairs[lo:lo + cfg.batch_size]
            pair_records = [
                (cache.get(p.qid, p.pid_pos), cache.get(p.qid, p.pid_neg)) for p in batch]
            bound, tensors = model_mod.bind(params, trainable=True)
            loss = _batch_loss_graph(bound, head, pair_records, cfg.margin,
                                     cfg.dropout, dropout_rng)
            ad.backward(loss)
            step += 1
            grads = {name: t.grad for name, t in tensors.items()}
            adamw_step(model_mod.trainable_weights(params), grads, state, lr_at(step, cfg), cfg)
            loss_sum += float(loss.data) * len(batch)
            n_batches += 1
        wall = time.perf_counter() - started
        entry = {
            "epoch": epoch,
            "mean_loss": loss_sum / len(pairs) if pairs else 0.0,
            "dev_map": None,
            "wall_seconds": wall,
            "batches_per_sec": n_batches / wall if wall > 0 else 0.0,
            "skipped_queries": skipped,
        }
        if dev_pools is not None and dev_pools.candidates:
            run = rerank(params, dev_pools, cache)
            entry["dev_map"] = evaluate(run, qrels).map
            if best[0] is None or entry["dev_map"] > best[0]:
                best = (entry["dev_map"], epoch)
                best_params = copy.deepcopy(params)
        log.append(entry)
    if best_params is None:
        best_params = params
    return TrainResult(best_params, log, best[1], best[0])


def write_log_jsonl(log, path) -> None:
    """One JSON object per epoch, key order fixed for reproducible files."""
    with open(path, "w", encoding="utf-8") as f:
        for entry in log:
            f.write(json.dumps(entry, sort_keys=True) + "\n")
