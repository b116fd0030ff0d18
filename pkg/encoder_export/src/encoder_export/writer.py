"""Streaming writer for the tokrep binary format.

Wire layout, all little-endian: header ``TOKR`` + version u32 (=1) +
enc_dim u32 + record_count u64; each record is qid_len u32 + qid bytes +
pid_len u32 + pid bytes + N u32 + T u32 + M u32 + sentence_ends M*u32 +
cls enc_dim*f32 + query_tokens N*enc_dim*f32 + passage_tokens
T*enc_dim*f32.  The count is patched into the header on close, so the
number of records need not be known up front.
"""

import struct

import numpy as np

from .errors import ExportError

MAGIC = b"TOKR"
VERSION = 1

# byte offset of record_count within the header
_COUNT_OFFSET = 12


def _check_record(qid, pid, ends, cls, query_tokens, passage_tokens, enc_dim):
    """Reject anything the downstream validator would; fail at write time."""
    if not qid or not pid:
        raise ExportError(f"empty qid or pid in pair {qid!r}/{pid!r}")
    n, t = query_tokens.shape[0], passage_tokens.shape[0]
    if n < 1 or t < 1:
        raise ExportError(f"pair {qid}/{pid}: need N >= 1 and T >= 1, got N={n} T={t}")
    for name, arr, shape in (
        ("cls", cls, (enc_dim,)),
        ("query_tokens", query_tokens, (n, enc_dim)),
        ("passage_tokens", passage_tokens, (t, enc_dim)),
    ):
        if arr.shape != shape:
            raise ExportError(f"pair {qid}/{pid}: {name} shape {arr.shape}, expected {shape}")
        if not np.all(np.isfinite(arr)):
            raise ExportError(f"pair {qid}/{pid}: non-finite values in {name}")
    prev = 0
    for e in ends:
        if e <= prev:
            raise ExportError(f"pair {qid}/{pid}: sentence_ends not strictly increasing: {ends}")
        prev = e
    if not ends or prev != t:
        raise ExportError(f"pair {qid}/{pid}: sentence_ends {ends} do not cover T={t}")


class TokrepWriter:
    """Write records one by one; usable as a context manager."""

    def __init__(self, path, enc_dim: int):
        if enc_dim < 1:
            raise ExportError(f"enc_dim must be >= 1, got {enc_dim}")
        self.path = path
        self.enc_dim = enc_dim
        self.count = 0
        self._f = open(path, "wb")
        self._f.write(MAGIC + struct.pack("<IIQ", VERSION, enc_dim, 0))

    def add(self, qid: str, pid: str, ends, cls, query_tokens, passage_tokens) -> None:
        cls = np.ascontiguousarray(cls, dtype="<f4")
        query_tokens = np.ascontiguousarray(query_tokens, dtype="<f4")
        passage_tokens = np.ascontiguousarray(passage_tokens, dtype="<f4")
        _check_record(qid, pid, ends, cls, query_tokens, passage_tokens, self.enc_dim)

        q, p = qid.encode("utf-8"), pid.encode("utf-8")
        n, t, m = query_tokens.shape[0], passage_tokens.shape[0], len(ends)
        w = self._f.write
        w(struct.pack("<I", len(q)))
        w(q)
        w(struct.pack("<I", len(p)))
        w(p)
        w(struct.pack("<III", n, t, m))
        w(np.asarray(ends, dtype="<u4").tobytes())
        w(cls.tobytes())
        w(query_tokens.tobytes())
        w(passage_tokens.tobytes())
        self.count += 1

    def close(self) -> None:
        if self._f.closed:
            return
        self._f.seek(_COUNT_OFFSET)
        self._f.write(struct.pack("<Q", self.count))
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()
        return False
