"""Binary token-representation files and the pooled sentence-vector cache.

Two little-endian container formats share one record layout:

  header:  magic (4 bytes) + version u32 + enc_dim u32 + record_count u64
  record:  qid_len u32 + qid utf-8 + pid_len u32 + pid utf-8
           + N u32 [+ T u32] + M u32 + sentence_ends M x u32
           + cls enc_dim x f32 + query_tokens N x enc_dim x f32
           + trailing matrix rows x enc_dim x f32

Magic ``TOKR`` carries per-token passage vectors (trailing matrix is
T x enc_dim, and T is present); magic ``DMNC`` is the cache derived from it,
where the trailing matrix holds the M sentence-mean vectors and T is omitted.

sentence_ends are exclusive token offsets: strictly increasing, in (0, T],
last exactly T; sentence k covers token rows [ends[k-1], ends[k]).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CacheMissError, CorruptRecordError, FormatError

_TOKR_MAGIC = b"TOKR"
_CACHE_MAGIC = b"DMNC"
_VERSION = 1


@dataclass(eq=False)
class TokenReprRecord:
    """Frozen encoder outputs for one query-passage pair."""

    qid: str
    pid: str
    cls: np.ndarray  # (enc_dim,) f32
    query_tokens: np.ndarray  # (N, enc_dim) f32
    passage_tokens: np.ndarray  # (T, enc_dim) f32
    sentence_ends: np.ndarray  # (M,) u32, exclusive offsets

    @property
    def enc_dim(self) -> int:
        return self.cls.shape[0]


@dataclass(eq=False)
class CacheRecord:
    """A TokenReprRecord with passage tokens mean-pooled per sentence.

    ``sentence_ends`` carries no information the model needs, but keeping it
    lets the cache file mirror the token-representation layout.
    """

    qid: str
    pid: str
    cls: np.ndarray  # (enc_dim,)
    query_tokens: np.ndarray  # (N, enc_dim)
    sentence_vectors: np.ndarray  # (M, enc_dim)
    sentence_ends: np.ndarray  # (M,) u32

    @property
    def enc_dim(self) -> int:
        return self.cls.shape[0]


def _validate_sentence_ends(ends: np.ndarray, t: int, index: int) -> None:
    if ends.size < 1:
        raise CorruptRecordError(index, "record has no sentences")
    prev = 0
    for e in ends.tolist():
        if e <= prev:
            raise CorruptRecordError(index, f"sentence_ends not strictly increasing: {ends.tolist()}")
        prev = e
    if prev != t:
        raise CorruptRecordError(index, f"last sentence end {prev} != token count {t}")


def _validate_record(rec: TokenReprRecord, index: int, enc_dim: int) -> None:
    if not rec.qid or not rec.pid:
        raise CorruptRecordError(index, "empty qid or pid")
    n, t = rec.query_tokens.shape[0], rec.passage_tokens.shape[0]
    if n < 1 or t < 1:
        raise CorruptRecordError(index, f"need at least one query and passage token, got N={n} T={t}")
    for name, arr, width in (
        ("cls", rec.cls, (enc_dim,)),
        ("query_tokens", rec.query_tokens, (n, enc_dim)),
        ("passage_tokens", rec.passage_tokens, (t, enc_dim)),
    ):
        if arr.shape != width:
            raise CorruptRecordError(index, f"{name} shape {arr.shape}, expected {width}")
        if not np.all(np.isfinite(arr)):
            raise CorruptRecordError(index, f"non-finite values in {name}")
    _validate_sentence_ends(rec.sentence_ends, t, index)


# ---------------------------------------------------------------------------
# writing
# ---------------------------------------------------------------------------


def _encode_common(qid: str, pid: str) -> bytes:
    q, p = qid.encode("utf-8"), pid.encode("utf-8")
    return struct.pack("<I", len(q)) + q + struct.pack("<I", len(p)) + p


def write_tokrep(records, path) -> None:
    """Stream records to disk; enc_dim is taken from the first record.

    The header's record count is backpatched once the stream is exhausted, so
    generators are fine.
    """
    count = 0
    enc_dim = None
    with open(path, "wb") as f:
        f.write(_TOKR_MAGIC)
        f.write(struct.pack("<II", _VERSION, 0))
        f.write(struct.pack("<Q", 0))
        for rec in records:
            if enc_dim is None:
                enc_dim = rec.enc_dim
            elif rec.enc_dim != enc_dim:
                raise FormatError(
                    f"record {count} ({rec.qid},{rec.pid}) has enc_dim {rec.enc_dim}, "
                    f"stream started with {enc_dim}")
            _validate_record(rec, count, enc_dim)
            n, t = rec.query_tokens.shape[0], rec.passage_tokens.shape[0]
            m = rec.sentence_ends.size
            f.write(_encode_common(rec.qid, rec.pid))
            f.write(struct.pack("<III", n, t, m))
            f.write(np.ascontiguousarray(rec.sentence_ends, dtype="<u4").tobytes())
            f.write(np.ascontiguousarray(rec.cls, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(rec.query_tokens, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(rec.passage_tokens, dtype="<f4").tobytes())
            count += 1
        f.seek(4)
        f.write(struct.pack("<II", _VERSION, enc_dim if enc_dim is not None else 0))
        f.write(struct.pack("<Q", count))


def write_cache_file(records, path) -> None:
    """Write CacheRecords with the ``DMNC`` magic (T omitted)."""
    count = 0
    enc_dim = None
    with open(path, "wb") as f:
        f.write(_CACHE_MAGIC)
        f.write(struct.pack("<II", _VERSION, 0))
        f.write(struct.pack("<Q", 0))
        for rec in records:
            if enc_dim is None:
                enc_dim = rec.enc_dim
            elif rec.enc_dim != enc_dim:
                raise FormatError(f"cache record {count} has enc_dim {rec.enc_dim}, expected {enc_dim}")
            n, m = rec.query_tokens.shape[0], rec.sentence_vectors.shape[0]
            if rec.sentence_ends.size != m:
                raise FormatError(f"cache record {count}: {m} sentence vectors but "
                                  f"{rec.sentence_ends.size} sentence ends")
            f.write(_encode_common(rec.qid, rec.pid))
            f.write(struct.pack("<II", n, m))
            f.write(np.ascontiguousarray(rec.sentence_ends, dtype="<u4").tobytes())
            f.write(np.ascontiguousarray(rec.cls, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(rec.query_tokens, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(rec.sentence_vectors, dtype="<f4").tobytes())
            count += 1
        f.seek(4)
        f.write(struct.pack("<II", _VERSION, enc_dim if enc_dim is not None else 0))
        f.write(struct.pack("<Q", count))


# ---------------------------------------------------------------------------
# reading
# ---------------------------------------------------------------------------


class _Reader:
    def __init__(self, f, path):
        self.f = f
        self.path = path

    def exact(self, n: int, what: str, index=None) -> bytes:
        buf = self.f.read(n)
        if len(buf) != n:
            msg = f"{self.path}: truncated while reading {what}"
            if index is not None:
                raise CorruptRecordError(index, msg)
            raise FormatError(msg)
        return buf

    def u32(self, what, index=None) -> int:
        return struct.unpack("<I", self.exact(4, what, index))[0]

    def text(self, what, index) -> str:
        length = self.u32(f"{what} length", index)
        if length > 1 << 20:
            raise CorruptRecordError(index, f"unreasonable {what} length {length}")
        return self.exact(length, what, index).decode("utf-8")

    def f32_matrix(self, rows, cols, what, index) -> np.ndarray:
        buf = self.exact(rows * cols * 4, what, index)
        return np.frombuffer(buf, dtype="<f4").reshape(rows, cols).copy()


def _read_header(r: _Reader, magic: bytes, kind: str):
    got = r.exact(4, "magic")
    if got != magic:
        raise FormatError(f"{r.path}: not a {kind} file (magic {got!r}, expected {magic!r})")
    version = r.u32("version")
    if version != _VERSION:
        raise FormatError(f"{r.path}: unsupported {kind} version {version}")
    enc_dim = r.u32("enc_dim")
    count = struct.unpack("<Q", r.exact(8, "record count"))[0]
    if enc_dim == 0 and count > 0:
        raise FormatError(f"{r.path}: enc_dim 0 with nonzero record count")
    return enc_dim, count


def read_tokrep(path):
    """Yield validated TokenReprRecords in file order."""
    with open(path, "rb") as f:
        r = _Reader(f, path)
        enc_dim, count = _read_header(r, _TOKR_MAGIC, "token-representation")
        for index in range(count):
            qid = r.text("qid", index)
            pid = r.text("pid", index)
            n = r.u32("N", index)
            t = r.u32("T", index)
            m = r.u32("M", index)
            if min(n, t, m) < 1:
                raise CorruptRecordError(index, f"invalid counts N={n} T={t} M={m}")
            ends = np.frombuffer(r.exact(m * 4, "sentence_ends", index), dtype="<u4").copy()
            rec = TokenReprRecord(
                qid, pid,
                r.f32_matrix(1, enc_dim, "cls", index)[0],
                r.f32_matrix(n, enc_dim, "query_tokens", index),
                r.f32_matrix(t, enc_dim, "passage_tokens", index),
                ends,
            )
            _validate_record(rec, index, enc_dim)
            yield rec
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after {count} records")


def read_cache_file(path):
    """Yield CacheRecords from a ``DMNC`` file."""
    with open(path, "rb") as f:
        r = _Reader(f, path)
        enc_dim, count = _read_header(r, _CACHE_MAGIC, "cache")
        for index in range(count):
            qid = r.text("qid", index)
            pid = r.text("pid", index)
            n = r.u32("N", index)
            m = r.u32("M", index)
            if min(n, m) < 1:
                raise CorruptRecordError(index, f"invalid counts N={n} M={m}")
            ends = np.frombuffer(r.exact(m * 4, "sentence_ends", index), dtype="<u4").copy()
            yield CacheRecord(
                qid, pid,
                r.f32_matrix(1, enc_dim, "cls", index)[0],
                r.f32_matrix(n, enc_dim, "query_tokens", index),
                r.f32_matrix(m, enc_dim, "sentence_vectors", index),
                ends,
            )
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after {count} records")


# ---------------------------------------------------------------------------
# pooling and the keyed cache store
# ---------------------------------------------------------------------------


def pool_sentences(rec: TokenReprRecord) -> CacheRecord:
    """Mean-pool passage tokens per sentence range (f32 accumulation)."""
    ends = rec.sentence_ends.tolist()
    vectors = np.empty((len(ends), rec.enc_dim), dtype=np.float32)
    start = 0
    for k, end in enumerate(ends):
        vectors[k] = rec.passage_tokens[start:end].mean(axis=0)
        start = end
    return CacheRecord(rec.qid, rec.pid, rec.cls, rec.query_tokens, vectors, rec.sentence_ends)


class CacheStore:
    """In-memory (qid, pid) -> CacheRecord map with DMNC persistence."""

    def __init__(self):
        self._records: dict = {}

    def __len__(self):
        return len(self._records)

    def __contains__(self, key):
        return key in self._records

    def add(self, rec: CacheRecord) -> None:
        key = (rec.qid, rec.pid)
        if key in self._records:
            raise FormatError(f"duplicate cache entry for ({rec.qid}, {rec.pid})")
        self._records[key] = rec

    def get(self, qid: str, pid: str) -> CacheRecord:
        try:
            return self._records[(qid, pid)]
        except KeyError:
            raise CacheMissError(qid, pid) from None

    def records(self):
        return self._records.values()

    def keys(self):
        return self._records.keys()

    def save(self, path) -> None:
        write_cache_file(self._records.values(), path)

    @classmethod
    def load(cls, path) -> "CacheStore":
        store = cls()
        for rec in read_cache_file(path):
            store.add(rec)
        return store


def build_cache(records) -> CacheStore:
    """Pool a token-representation stream into a keyed cache."""
    store = CacheStore()
    for rec in records:
        store.add(pool_sentences(rec))
    return store


class MemoizingCache:
    """Wrap a cold record source; repeat lookups are served from memory.

    This is the lite-mode training cache: the first epoch pays the source's
    per-record ingestion cost, later epochs are dictionary hits.
    """

    def __init__(self, source):
        self.source = source
        self._memo: dict = {}

    def __len__(self):
        return len(self.source)

    def __contains__(self, key):
        return key in self.source

    def keys(self):
        return self.source.keys()

    def get(self, qid: str, pid: str) -> CacheRecord:
        key = (qid, pid)
        rec = self._memo.get(key)
        if rec is None:
            rec = self.source.get(qid, pid)
            self._memo[key] = rec
        return rec


class LazyTokrepSource:
    """Cold cache source: per-lookup read of one record from a tokrep file.

    Scans the file once to index record offsets, then serves ``get`` by
    seeking, parsing, validating and pooling that single record. Mirrors the
    access cost of an uncached encoder-output store; a CacheStore built from
    the same file makes repeat passes cheap.
    """

    def __init__(self, path):
        self.path = path
        self._offsets: dict = {}
        self._index()

    def _index(self) -> None:
        with open(self.path, "rb") as f:
            r = _Reader(f, self.path)
            self.enc_dim, count = _read_header(r, _TOKR_MAGIC, "token-representation")
            for index in range(count):
                offset = f.tell()
                qid = r.text("qid", index)
                pid = r.text("pid", index)
                n = r.u32("N", index)
                t = r.u32("T", index)
                m = r.u32("M", index)
                if min(n, t, m) < 1:
                    raise CorruptRecordError(index, f"invalid counts N={n} T={t} M={m}")
                key = (qid, pid)
                if key in self._offsets:
                    raise FormatError(f"duplicate record for ({qid}, {pid})")
                self._offsets[key] = (offset, index)
                f.seek(4 * m + 4 * self.enc_dim * (1 + n + t), 1)
            if f.read(1):
                raise FormatError(f"{self.path}: trailing bytes after {count} records")

    def __len__(self):
        return len(self._offsets)

    def __contains__(self, key):
        return key in self._offsets

    def keys(self):
        return self._offsets.keys()

    def get(self, qid: str, pid: str) -> CacheRecord:
        try:
            offset, index = self._offsets[(qid, pid)]
        except KeyError:
            raise CacheMissError(qid, pid) from None
        with open(self.path, "rb") as f:
            f.seek(offset)
            r = _Reader(f, self.path)
            r.text("qid", index)
            r.text("pid", index)
            n = r.u32("N", index)
            t = r.u32("T", index)
            m = r.u32("M", index)
            ends = np.frombuffer(r.exact(m * 4, "sentence_ends", index), dtype="<u4").copy()
            rec = TokenReprRecord(
                qid, pid,
                r.f32_matrix(1, self.enc_dim, "cls", index)[0],
                r.f32_matrix(n, self.enc_dim, "query_tokens", index),
                r.f32_matrix(t, self.enc_dim, "passage_tokens", index),
                ends,
            )
        _validate_record(rec, index, self.enc_dim)
        return pool_sentences(rec)
