"""Readers for the text inputs: id<TAB>text collections and pair files.

Pair files are either two tab-separated columns ``qid<TAB>pid`` or
six-column TREC run lines (``qid Q0 pid rank score tag``); the two forms
may not be mixed within a file.
"""

from .config import Pair
from .errors import ParseError


def load_collection(path) -> dict:
    """Read an ``id<TAB>text`` file into an ordered id -> text mapping."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if "\t" not in line:
                raise ParseError(path, line_no, f"expected id<TAB>text, got {line!r}")
            ident, text = line.split("\t", 1)
            if not ident:
                raise ParseError(path, line_no, "empty id")
            if ident in out:
                raise ParseError(path, line_no, f"duplicate id {ident!r}")
            out[ident] = text
    return out


def _pair_ids(path, line_no, line):
    if "\t" in line:
        fields = line.split("\t")
        if len(fields) != 2:
            raise ParseError(path, line_no, f"expected qid<TAB>pid, got {len(fields)} fields")
        return fields[0], fields[1]
    fields = line.split()
    if len(fields) == 6 and fields[1] == "Q0":
        return fields[0], fields[2]
    raise ParseError(path, line_no, f"expected qid<TAB>pid or a TREC run line, got {line!r}")


def load_pairs(path, queries: dict, passages: dict) -> list:
    """Resolve a pair file against loaded collections, preserving file order.

    Unknown ids and duplicate (qid, pid) pairs are rejected with their
    line number.
    """
    pairs = []
    seen = set()
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            qid, pid = _pair_ids(path, line_no, line)
            if not qid or not pid:
                raise ParseError(path, line_no, "empty qid or pid")
            if qid not in queries:
                raise ParseError(path, line_no, f"unknown qid {qid!r}")
            if pid not in passages:
                raise ParseError(path, line_no, f"unknown pid {pid!r}")
            if (qid, pid) in seen:
                raise ParseError(path, line_no, f"duplicate pair ({qid!r}, {pid!r})")
            seen.add((qid, pid))
            pairs.append(Pair(qid, pid, queries[qid], passages[pid]))
    return pairs
