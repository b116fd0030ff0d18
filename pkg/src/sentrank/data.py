"""Text-format ingestion: collections, qrels, candidate pools, run files.

All formats are line-oriented UTF-8. Collections are ``id<TAB>text``; qrels
are TREC ``qid 0 pid grade``; candidate pools are either TREC run files or
``qid<TAB>pid`` pairs (auto-detected); runs are ``qid Q0 pid rank score tag``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ParseError


@dataclass(eq=False)
class QueryRecord:
    qid: str
    text: str


@dataclass(eq=False)
class PassageRecord:
    pid: str
    text: str


@dataclass(eq=False)
class Qrels:
    """Graded judgments with a binarization threshold (grade >= threshold)."""

    entries: dict  # (qid, pid) -> int grade
    threshold: int = 1

    def __post_init__(self):
        if self.threshold < 1:
            raise ValueError(f"threshold must be >= 1, got {self.threshold}")

    def grade(self, qid: str, pid: str) -> int:
        return self.entries.get((qid, pid), 0)

    def is_relevant(self, qid: str, pid: str) -> bool:
        return self.grade(qid, pid) >= self.threshold

    def relevant_pids(self, qid: str) -> set:
        return {p for (q, p), g in self.entries.items() if q == qid and g >= self.threshold}

    def judged_qids(self) -> set:
        return {q for q, _ in self.entries}


@dataclass(eq=False)
class CandidatePool:
    """Ordered candidate pids per query, as delivered by first-stage retrieval."""

    candidates: dict = field(default_factory=dict)  # qid -> list of pid

    def add(self, qid: str, pid: str, source: str = "pool", line_no: int = 0) -> None:
        pids = self.candidates.setdefault(qid, [])
        if pid in pids:
            raise ParseError(source, line_no, f"duplicate candidate {pid!r} for query {qid!r}")
        pids.append(pid)

    def qids(self) -> list:
        return list(self.candidates)

    def pairs(self):
        for qid, pids in self.candidates.items():
            for pid in pids:
                yield qid, pid


@dataclass(eq=False)
class RankedRun:
    """Scored rankings per query: qid -> list of (pid, score), best first."""

    entries: dict

    @classmethod
    def from_scores(cls, scores: dict) -> "RankedRun":
        # Descending score; ties broken by ascending pid so output is
        # deterministic regardless of insertion order.
        ordered = {}
        for qid, pairs in scores.items():
            ordered[qid] = sorted(pairs, key=lambda ps: (-ps[1], ps[0]))
        return cls(ordered)

    def ranking(self, qid: str) -> list:
        return [pid for pid, _ in self.entries[qid]]


def _lines(path):
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if line:
                yield line_no, line


def load_tsv_collection(path, kind: str):
    """Load ``id<TAB>text`` lines into Query/Passage records, order preserved."""
    if kind not in ("query", "passage"):
        raise ValueError(f"kind must be 'query' or 'passage', got {kind!r}")
    make = QueryRecord if kind == "query" else PassageRecord
    records = []
    seen = set()
    for line_no, line in _lines(path):
        if "\t" not in line:
            raise ParseError(path, line_no, "expected id<TAB>text")
        ident, text = line.split("\t", 1)
        if not ident:
            raise ParseError(path, line_no, "empty identifier")
        if not text:
            raise ParseError(path, line_no, f"empty text for {ident!r}")
        if ident in seen:
            raise ParseError(path, line_no, f"duplicate identifier {ident!r}")
        seen.add(ident)
        records.append(make(ident, text))
    return records


def load_qrels(path, threshold: int = 1) -> Qrels:
    """Load TREC qrels; grades are kept, binarization happens at query time."""
    entries = {}
    for line_no, line in _lines(path):
        parts = line.split()
        if len(parts) != 4:
            raise ParseError(path, line_no, f"expected 'qid 0 pid grade', got {len(parts)} fields")
        qid, _, pid, grade_text = parts
        try:
            grade = int(grade_text)
        except ValueError:
            raise ParseError(path, line_no, f"non-integer grade {grade_text!r}") from None
        if grade < 0:
            raise ParseError(path, line_no, f"negative grade {grade}")
        if (qid, pid) in entries:
            raise ParseError(path, line_no, f"duplicate judgment for ({qid}, {pid})")
        entries[(qid, pid)] = grade
    return Qrels(entries, threshold)


def load_pool(path) -> CandidatePool:
    """Load candidates from a TREC run file or ``qid<TAB>pid`` pairs."""
    pool = CandidatePool()
    expected = None
    for line_no, line in _lines(path):
        parts = line.split()
        if expected is None:
            if len(parts) == 2:
                expected = 2
            elif len(parts) == 6:
                expected = 6
            else:
                raise ParseError(path, line_no,
                                 f"expected 'qid pid' or a 6-field run line, got {len(parts)} fields")
        if len(parts) != expected:
            raise ParseError(path, line_no,
                             f"inconsistent field count {len(parts)}, file started with {expected}")
        if expected == 2:
            qid, pid = parts
        else:
            qid, _, pid = parts[:3]
        pool.add(qid, pid, source=str(path), line_no=line_no)
    return pool


def write_run(run: RankedRun, tag: str, path) -> None:
    """Emit ``qid Q0 pid rank score tag`` lines, queries in ascending qid order."""
    if not tag:
        raise ValueError("run tag must be non-empty")
    with open(path, "w", encoding="utf-8") as f:
        for qid in sorted(run.entries):
            for rank, (pid, score) in enumerate(run.entries[qid], start=1):
                f.write(f"{qid} Q0 {pid} {rank} {score:.6f} {tag}\n")


def read_run(path) -> RankedRun:
    """Read a run file back; per-query order follows the rank column."""
    rows = {}
    seen = set()
    for line_no, line in _lines(path):
        parts = line.split()
        if len(parts) != 6:
            raise ParseError(path, line_no, f"expected 6 fields, got {len(parts)}")
        qid, _, pid, rank_text, score_text, _ = parts
        try:
            rank = int(rank_text)
            score = float(score_text)
        except ValueError:
            raise ParseError(path, line_no, f"bad rank/score in {line!r}") from None
        if (qid, pid) in seen:
            raise ParseError(path, line_no, f"duplicate entry for ({qid}, {pid})")
        seen.add((qid, pid))
        rows.setdefault(qid, []).append((rank, pid, score))
    entries = {}
    for qid, triples in rows.items():
        triples.sort(key=lambda t: t[0])
        entries[qid] = [(pid, score) for _, pid, score in triples]
    return RankedRun(entries)
