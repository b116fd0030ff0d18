"""Minimal tokrep reader used to check exported files against the
documented wire format.  Deliberately independent of both packages."""

import struct

import numpy as np


def read_tokrep(path):
    """Parse a tokrep file into (enc_dim, list of record dicts)."""
    with open(path, "rb") as f:
        data = f.read()
    magic, version, enc_dim, count = struct.unpack_from("<4sIIQ", data, 0)
    assert magic == b"TOKR", magic
    assert version == 1, version
    off = 20
    records = []
    for _ in range(count):
        (qlen,) = struct.unpack_from("<I", data, off)
        off += 4
        qid = data[off : off + qlen].decode("utf-8")
        off += qlen
        (plen,) = struct.unpack_from("<I", data, off)
        off += 4
        pid = data[off : off + plen].decode("utf-8")
        off += plen
        n, t, m = struct.unpack_from("<III", data, off)
        off += 12
        ends = np.frombuffer(data, dtype="<u4", count=m, offset=off).copy()
        off += 4 * m

        def block(rows):
            nonlocal off
            arr = np.frombuffer(data, dtype="<f4", count=rows * enc_dim, offset=off)
            off += 4 * rows * enc_dim
            return arr.reshape(rows, enc_dim).copy()

        records.append(
            {
                "qid": qid,
                "pid": pid,
                "sentence_ends": ends,
                "cls": block(1)[0],
                "query_tokens": block(n),
                "passage_tokens": block(t),
            }
        )
    assert off == len(data), (off, len(data))
    return enc_dim, records
