"""Synthetic separable re-ranking tasks with a known perfect solution.

Relevance is carried entirely by one designated sentence: its mean token
vector points along a hidden unit direction ``u`` for relevant passages and
against it for irrelevant ones. All other token content (including every
classification vector) is noise orthogonal to ``u`` or independent of the
label, so a head reading only the cls vector cannot beat random ranking,
while the sentence-level model can separate the classes perfectly.

``reference_params`` hand-builds model weights that solve the task without
any training; generated datasets are verified learnable by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import CandidatePool, Qrels
from .model import GateNetParams, GruParams, ModelParams
from .tokrep import TokenReprRecord, write_tokrep


@dataclass
class SyntheticConfig:
    n_train_queries: int = 64
    n_dev_queries: int = 16
    candidates_per_query: int = 20
    relevant_per_query: int = 4
    enc_dim: int = 64
    query_tokens: int = 8
    sentences: int = 6
    tokens_per_sentence: int = 16
    signal_sentence: int = 2  # 1-based sentence index carrying the label
    signal: float = 1.0
    noise: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.signal_sentence <= self.sentences:
            raise ValueError(
                f"signal_sentence {self.signal_sentence} outside 1..{self.sentences}")
        if not 0 < self.relevant_per_query < self.candidates_per_query:
            raise ValueError("need at least one relevant and one irrelevant candidate")

    @property
    def passage_tokens(self) -> int:
        return self.sentences * self.tokens_per_sentence


@dataclass(eq=False)
class SyntheticDataset:
    config: SyntheticConfig
    records: list  # TokenReprRecord per (query, candidate)
    qrels: Qrels
    train_pool: CandidatePool
    dev_pool: CandidatePool
    direction: np.ndarray  # the hidden unit vector u


def _orthogonal_noise(rng, rows: int, u: np.ndarray, scale: float) -> np.ndarray:
    eps = rng.normal(size=(rows, u.shape[0]))
    eps -= np.outer(eps @ u, u)
    return eps * scale


def _record_stream(cfg: SyntheticConfig, rng, u, entries, train_pool, dev_pool):
    ends = np.asarray(
        [(k + 1) * cfg.tokens_per_sentence for k in range(cfg.sentences)], dtype=np.uint32)
    signal_rows = slice(
        (cfg.signal_sentence - 1) * cfg.tokens_per_sentence,
        cfg.signal_sentence * cfg.tokens_per_sentence)
    splits = (("t", cfg.n_train_queries, train_pool), ("d", cfg.n_dev_queries, dev_pool))
    for prefix, n_queries, pool in splits:
        for qi in range(n_queries):
            qid = f"{prefix}q{qi:03d}"
            relevant = set(rng.choice(cfg.candidates_per_query,
                                      size=cfg.relevant_per_query, replace=False).tolist())
            query = rng.normal(size=(cfg.query_tokens, cfg.enc_dim))
            for ci in range(cfg.candidates_per_query):
                pid = f"{qid}-c{ci:03d}"
                label = ci in relevant
                passage = _orthogonal_noise(rng, cfg.passage_tokens, u, cfg.noise)
                sign = 1.0 if label else -1.0
                passage[signal_rows] += sign * cfg.signal * u
                entries[(qid, pid)] = int(label)
                pool.add(qid, pid)
                yield TokenReprRecord(
                    qid, pid,
                    rng.normal(size=cfg.enc_dim).astype(np.float32),
                    query.astype(np.float32),
                    passage.astype(np.float32),
                    ends.copy(),
                )


def _direction(cfg: SyntheticConfig):
    rng = np.random.default_rng(cfg.seed)
    u = rng.normal(size=cfg.enc_dim)
    u /= np.linalg.norm(u)
    return rng, u


def generate(cfg: SyntheticConfig) -> SyntheticDataset:
    rng, u = _direction(cfg)
    entries = {}
    train_pool = CandidatePool()
    dev_pool = CandidatePool()
    records = list(_record_stream(cfg, rng, u, entries, train_pool, dev_pool))
    return SyntheticDataset(cfg, records, Qrels(entries, 1), train_pool, dev_pool, u)


def reference_params(cfg: SyntheticConfig, direction: np.ndarray,
                     hidden_dim: int = 8, episodes: int = 2) -> ModelParams:
    """Weights that solve a generated dataset exactly, without training.

    The input GRU is forced into a memoryless projection (update gate pinned
    open): fact coordinate 0 becomes tanh(4 * <token mean, u>), which is
    close to +/-1 on the signal sentence and ~0 elsewhere. Plain 0.5 gates
    then leak a known fraction of that coordinate into each episode memory,
    the memory GRU amplifies it back to saturation, and the answer row reads
    it off. Scores land near sigmoid(+/-4 * 0.96).
    """
    b, d, e = cfg.enc_dim, hidden_dim, episodes

    def quiet(input_dim):
        z = lambda *shape: np.zeros(shape)
        return GruParams(input_dim, d,
                         z(d, input_dim), z(d, d), z(d),
                         z(d, input_dim), z(d, d), z(d),
                         z(d, input_dim), z(d, d), z(d))

    input_gru = quiet(b)
    input_gru.b_z[:] = 20.0  # update gate ~1: state tracks the candidate
    input_gru.w_h[0, :] = 4.0 * direction

    episodic = quiet(2 * d)
    episodic.w_h[0, 0] = 4.0  # read fact coordinate 0, ignore the memory half

    # each fixed 0.5-gate pass scales the signal by 0.5^(M - k + 1)
    leak = 0.5 ** (cfg.sentences - cfg.signal_sentence + 1)
    memory = quiet(d)
    memory.b_z[:] = 20.0
    memory.w_h[0, 0] = 2.0 / (leak * np.tanh(4.0))

    gate = GateNetParams(d, np.zeros((d, 4 * d)), np.zeros(d), np.zeros((1, d)), np.zeros(1))
    w_a = np.zeros((1, b + 2 * d))
    w_a[0, b + d] = 4.0  # final-memory coordinate 0
    return ModelParams(b, d, e, input_gru, quiet(b), episodic, gate, memory, w_a, np.zeros(1))


def _dataset_paths(outdir):
    from pathlib import Path

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    return {
        "tokrep": outdir / "records.tokrep",
        "qrels": outdir / "qrels.txt",
        "train_pool": outdir / "train_pool.tsv",
        "dev_pool": outdir / "dev_pool.tsv",
    }


def _write_sidecars(paths, qrels: Qrels, train_pool, dev_pool) -> None:
    with open(paths["qrels"], "w", encoding="utf-8") as f:
        for (qid, pid), grade in sorted(qrels.entries.items()):
            f.write(f"{qid} 0 {pid} {grade}\n")
    for name, pool in (("train_pool", train_pool), ("dev_pool", dev_pool)):
        with open(paths[name], "w", encoding="utf-8") as f:
            for qid, pid in pool.pairs():
                f.write(f"{qid}\t{pid}\n")


def write_dataset(ds: SyntheticDataset, outdir) -> dict:
    """Materialize tokrep + qrels + pools as the CLI consumes them."""
    paths = _dataset_paths(outdir)
    write_tokrep(iter(ds.records), paths["tokrep"])
    _write_sidecars(paths, ds.qrels, ds.train_pool, ds.dev_pool)
    return paths


def generate_files(cfg: SyntheticConfig, outdir) -> dict:
    """Stream records straight to disk; never holds the dataset in memory.

    Returns the same path dict as ``write_dataset``. Byte-identical to
    ``write_dataset(generate(cfg), outdir)`` for equal config.
    """
    rng, u = _direction(cfg)
    entries = {}
    train_pool = CandidatePool()
    dev_pool = CandidatePool()
    paths = _dataset_paths(outdir)
    write_tokrep(_record_stream(cfg, rng, u, entries, train_pool, dev_pool),
                 paths["tokrep"])
    _write_sidecars(paths, Qrels(entries, 1), train_pool, dev_pool)
    return paths
