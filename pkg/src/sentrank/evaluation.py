"""Re-ranking of candidate pools and rank-quality metrics (MRR, MAP).

Metrics use the binarized qrels: a pid is relevant when its grade reaches the
qrels threshold. MRR has no cutoff. The AP normalizer counts every judged
relevant passage for the query, retrieved or not. Queries without any
relevant judged passage are excluded from the aggregate means and reported by
count; a query entirely missing from the qrels is an error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from . import autodiff as ad
from . import model as model_mod
from .data import RankedRun
from .errors import DataError


def reciprocal_rank(ranking, relevant) -> float:
    """1/rank of the first relevant pid; 0.0 when none appears."""
    for rank, pid in enumerate(ranking, start=1):
        if pid in relevant:
            return 1.0 / rank
    return 0.0


def average_precision(ranking, relevant) -> float:
    """Mean of precision-at-k over relevant ranks, normalized by |relevant|."""
    if not relevant:
        raise ValueError("average_precision needs at least one relevant pid")
    hits = 0
    total = 0.0
    for rank, pid in enumerate(ranking, start=1):
        if pid in relevant:
            hits += 1
            total += hits / rank
    return total / len(relevant)


@dataclass(eq=False)
class MetricReport:
    per_query: dict  # qid -> {"reciprocal_rank": float, "average_precision": float}
    mrr: float
    map: float
    evaluated_queries: int
    queries_without_relevant: list

    def to_dict(self) -> dict:
        return {
            "MAP": self.map,
            "MRR": self.mrr,
            "evaluated_queries": self.evaluated_queries,
            "queries_without_relevant": list(self.queries_without_relevant),
            "per_query": self.per_query,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def summary_text(self) -> str:
        return f"MAP {self.map:.6f}\nMRR {self.mrr:.6f}\n"


def evaluate(run: RankedRun, qrels) -> MetricReport:
    """Per-query RR and AP plus their means over evaluable queries."""
    judged = qrels.judged_qids()
    unjudged = sorted(q for q in run.entries if q not in judged)
    if unjudged:
        raise DataError(f"run contains queries without judgments: {', '.join(unjudged)}")
    per_query = {}
    skipped = []
    for qid in sorted(run.entries):
        relevant = qrels.relevant_pids(qid)
        if not relevant:
            skipped.append(qid)
            continue
        ranking = run.ranking(qid)
        per_query[qid] = {
            "reciprocal_rank": reciprocal_rank(ranking, relevant),
            "average_precision": average_precision(ranking, relevant),
        }
    n = len(per_query)
    mrr = sum(v["reciprocal_rank"] for v in per_query.values()) / n if n else 0.0
    mean_ap = sum(v["average_precision"] for v in per_query.values()) / n if n else 0.0
    return MetricReport(per_query, mrr, mean_ap, n, skipped)


# ---------------------------------------------------------------------------
# bulk scoring
# ---------------------------------------------------------------------------

_MAX_ROWS = 256  # cap on rows per stacked forward


def score_pairs(params, pairs, cache) -> dict:
    """Score (qid, pid) pairs with the batched forward; returns pair -> float.

    Records are grouped by (token count, sentence count) so each group stacks
    into one graph; groups larger than the row cap are chunked.
    """
    records = [cache.get(qid, pid) for qid, pid in pairs]
    groups = {}
    for i, rec in enumerate(records):
        key = (rec.query_tokens.shape[0], rec.sentence_vectors.shape[0])
        groups.setdefault(key, []).append(i)
    is_cls = isinstance(params, model_mod.ClsHeadParams)
    bound, _ = model_mod.bind(params)
    scores = [0.0] * len(records)
    with ad.no_grad():
        for indices in groups.values():
            for lo in range(0, len(indices), _MAX_ROWS):
                chunk = indices[lo:lo + _MAX_ROWS]
                batch = model_mod.RecordBatch.stack([records[i] for i in chunk])
                if is_cls:
                    out = model_mod.cls_score_graph(bound, batch)
                else:
                    out = model_mod.score_graph(bound, batch)
                for i, value in zip(chunk, out.data[:, 0]):
                    scores[i] = float(value)
    return {pair: s for pair, s in zip(pairs, scores)}


def rerank(params, pools, cache) -> RankedRun:
    """Score every pool candidate (inference mode) and sort per query."""
    pairs = list(pools.pairs())
    scored = score_pairs(params, pairs, cache)
    by_query = {}
    for (qid, pid), s in scored.items():
        by_query.setdefault(qid, []).append((pid, s))
    return RankedRun.from_scores(by_query)
