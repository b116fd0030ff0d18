"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data problems
(parse errors, corrupt files, cache misses) exit 2, anything else exits 3.
"""


class ShapeError(ValueError):
    """Operands with incompatible shapes were passed to a tensor op."""


class NonFiniteError(ArithmeticError):
    """A NaN or Inf appeared in a tensor op output."""


class DataError(Exception):
    """Base class for problems with input data or on-disk artifacts."""


class ParseError(DataError):
    """A text input file violates its line format."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class FormatError(DataError):
    """A binary file has a bad magic, version or header."""


class CorruptRecordError(FormatError):
    """A binary record violates its invariants.

    ``record_index`` is the zero-based position of the offending record.
    """

    def __init__(self, record_index, message):
        super().__init__(f"record {record_index}: {message}")
        self.record_index = record_index


class CacheMissError(DataError):
    """A (qid, pid) pair was requested that the cache does not hold."""

    def __init__(self, qid, pid):
        super().__init__(f"no cached representation for qid={qid!r} pid={pid!r}")
        self.qid = qid
        self.pid = pid
