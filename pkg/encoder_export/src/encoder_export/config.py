"""Configuration and input pair types."""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

# [CLS] plus the two [SEP] tokens framing query and passage.
SPECIAL_OVERHEAD = 3

DEFAULT_TERMINATORS = frozenset({".", "?", "!"})


@dataclass(frozen=True)
class ExportConfig:
    """Everything the export needs besides the pairs themselves.

    ``encoder`` is a model name or a local directory loadable by
    ``transformers``; ``out`` is the tokrep file to write.  ``terminators``
    are the token strings that close a sentence inside a passage.
    """

    encoder: str
    out: Path
    max_tokens: int = 512
    terminators: frozenset = DEFAULT_TERMINATORS
    batch_size: int = 8
    queries: Optional[Path] = None
    passages: Optional[Path] = None
    pairs: Optional[Path] = None

    def __post_init__(self):
        if self.max_tokens < 8:
            raise ValueError(f"max_tokens must be >= 8, got {self.max_tokens}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class Pair:
    """One query-passage pair to export, identified by (qid, pid)."""

    qid: str
    pid: str
    query: str
    passage: str
