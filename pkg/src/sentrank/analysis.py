"""Similarity diffusion over token representations, plus gate inspection.

Diffusion summarizes how mutually similar the encoder's outputs are, as
cosine-similarity distributions in three views: cls against query tokens,
cls against passage tokens, and all distinct unordered passage-token pairs.
Records are subsampled by a stable per-record hash so the selection depends
only on (qid, pid, seed), never on file order; aggregation folds per-record
partials in sorted key order, so reports are byte-identical for any input
order.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from . import model as model_mod
from .errors import DataError

_BINS = 50
_EDGES = np.linspace(-1.0, 1.0, _BINS + 1)


def cosine(a, b) -> float:
    """a.b / (|a||b|); zero-length inputs are a data problem."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise DataError("cosine similarity of a zero vector is undefined")
    return float(a @ b) / (na * nb)


@dataclass(eq=False)
class DistSummary:
    count: int
    mean: float
    stddev: float
    histogram: list  # 50 bins over [-1, 1]

    def to_dict(self) -> dict:
        return {"count": self.count, "mean": self.mean, "stddev": self.stddev,
                "histogram": list(self.histogram)}


@dataclass(eq=False)
class DiffusionReport:
    cls_query: DistSummary
    cls_passage: DistSummary
    innerpassage: DistSummary
    pair_count: int  # records measured

    def to_dict(self) -> dict:
        return {
            "pair_count": self.pair_count,
            "cls_query": self.cls_query.to_dict(),
            "cls_passage": self.cls_passage.to_dict(),
            "innerpassage": self.innerpassage.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def histogram_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["bin_lo", "bin_hi", "cls_query", "cls_passage", "innerpassage"])
        for i in range(_BINS):
            writer.writerow([
                f"{_EDGES[i]:.2f}", f"{_EDGES[i + 1]:.2f}",
                self.cls_query.histogram[i],
                self.cls_passage.histogram[i],
                self.innerpassage.histogram[i],
            ])
        return out.getvalue()


def keep_record(qid: str, pid: str, seed: int, fraction: float) -> bool:
    """Stable inclusion test: hash of (qid, pid, seed) under the fraction."""
    digest = hashlib.sha256(f"{qid}\t{pid}\t{seed}".encode("utf-8")).digest()
    value = int.from_bytes(digest[:8], "big") / 2.0 ** 64
    return value < fraction


def _sims_to_partial(values: np.ndarray):
    values = np.clip(values, -1.0, 1.0)
    hist, _ = np.histogram(values, bins=_BINS, range=(-1.0, 1.0))
    return values.size, float(values.sum()), float((values * values).sum()), hist


def _record_partials(rec) -> dict:
    cls_vec = np.asarray(rec.cls, dtype=np.float64)
    query = np.asarray(rec.query_tokens, dtype=np.float64)
    passage = np.asarray(rec.passage_tokens, dtype=np.float64)
    cls_norm = float(np.linalg.norm(cls_vec))
    q_norms = np.linalg.norm(query, axis=1)
    p_norms = np.linalg.norm(passage, axis=1)
    if cls_norm == 0.0 or np.any(q_norms == 0.0) or np.any(p_norms == 0.0):
        raise DataError(f"record ({rec.qid}, {rec.pid}) contains a zero token vector")
    cq = (query @ cls_vec) / (q_norms * cls_norm)
    cp = (passage @ cls_vec) / (p_norms * cls_norm)
    unit = passage / p_norms[:, None]
    gram = unit @ unit.T
    iu = np.triu_indices(passage.shape[0], k=1)  # distinct unordered pairs
    inner = gram[iu]
    return {
        "cls_query": _sims_to_partial(cq),
        "cls_passage": _sims_to_partial(cp),
        "innerpassage": _sims_to_partial(inner),
    }


def _reduce(partials: list) -> DistSummary:
    count = sum(p[0] for p in partials)
    total = sum(p[1] for p in partials)
    total_sq = sum(p[2] for p in partials)
    hist = np.zeros(_BINS, dtype=np.int64)
    for p in partials:
        hist += p[3]
    if count == 0:
        return DistSummary(0, 0.0, 0.0, hist.tolist())
    mean = total / count
    var = max(0.0, total_sq / count - mean * mean)
    return DistSummary(count, mean, math.sqrt(var), hist.tolist())


def diffusion(records, sample_fraction: float, seed: int) -> DiffusionReport:
    """Fold the three similarity views over a stable record subsample."""
    if not 0.0 < sample_fraction <= 1.0:
        raise ValueError(f"sample_fraction must be in (0, 1], got {sample_fraction}")
    by_key = {}
    for rec in records:
        if sample_fraction < 1.0 and not keep_record(rec.qid, rec.pid, seed, sample_fraction):
            continue
        by_key[(rec.qid, rec.pid)] = _record_partials(rec)
    if not by_key:
        raise DataError("diffusion sample selected no records")
    ordered = [by_key[k] for k in sorted(by_key)]
    return DiffusionReport(
        _reduce([p["cls_query"] for p in ordered]),
        _reduce([p["cls_passage"] for p in ordered]),
        _reduce([p["innerpassage"] for p in ordered]),
        len(ordered),
    )


def gate_heatmap(params, record) -> np.ndarray:
    """Episode-by-sentence attention gates from one inference pass."""
    _, state = model_mod.score_with_state(params, record)
    return state.gates
