"""Token layout for encoder inputs.

A pair is encoded as ``[CLS] q_1..q_N [SEP] w_1..w_T [SEP]``.  When the
sequence exceeds the token budget, passage tokens are dropped from the
end until it fits exactly; query tokens are never removed.
"""

from dataclasses import dataclass
from functools import lru_cache

from .config import SPECIAL_OVERHEAD, ExportConfig
from .errors import LayoutError


@lru_cache(maxsize=4)
def load_tokenizer(name_or_path: str):
    from transformers import AutoTokenizer

    return AutoTokenizer.from_pretrained(name_or_path)


@dataclass(frozen=True)
class EncoderInput:
    """One laid-out sequence plus the chunk sizes needed to split it again.

    ``tokens`` includes the specials; the query occupies positions
    ``1..query_len`` and the passage ``query_len+2..query_len+1+passage_len``.
    """

    tokens: list
    query_len: int  # N
    passage_len: int  # T
    truncated: bool

    @property
    def query_slice(self) -> slice:
        return slice(1, 1 + self.query_len)

    @property
    def passage_slice(self) -> slice:
        start = self.query_len + 2
        return slice(start, start + self.passage_len)


def build_input(query: str, passage: str, cfg: ExportConfig, tokenizer=None) -> EncoderInput:
    """Tokenize a pair into the encoder layout, truncating the passage to fit.

    Raises LayoutError when a text is empty, tokenizes to nothing, or the
    query leaves no room for at least one passage token.
    """
    if tokenizer is None:
        tokenizer = load_tokenizer(cfg.encoder)
    if not query.strip():
        raise LayoutError("empty query")
    if not passage.strip():
        raise LayoutError("empty passage")

    q_tokens = tokenizer.tokenize(query)
    p_tokens = tokenizer.tokenize(passage)
    if not q_tokens:
        raise LayoutError(f"query tokenized to nothing: {query!r}")
    if not p_tokens:
        raise LayoutError(f"passage tokenized to nothing: {passage!r}")

    n = len(q_tokens)
    budget = cfg.max_tokens - SPECIAL_OVERHEAD - n
    if budget < 1:
        raise LayoutError(
            f"query occupies {n} of the {cfg.max_tokens - SPECIAL_OVERHEAD} "
            f"token positions, leaving no room for the passage"
        )
    truncated = len(p_tokens) > budget
    if truncated:
        p_tokens = p_tokens[:budget]

    tokens = (
        [tokenizer.cls_token]
        + q_tokens
        + [tokenizer.sep_token]
        + p_tokens
        + [tokenizer.sep_token]
    )
    return EncoderInput(tokens, n, len(p_tokens), truncated)


def sentence_ends(passage_tokens, terminators) -> list:
    """1-based end positions of each sentence in a passage token list.

    A sentence ends at a token equal to one of ``terminators``, inclusive
    of that token.  A trailing stretch without a terminator (none at all,
    or a truncated final sentence) forms one sentence ending at T, so the
    result always covers the full passage.
    """
    ends = [i + 1 for i, tok in enumerate(passage_tokens) if tok in terminators]
    t = len(passage_tokens)
    if not ends or ends[-1] != t:
        ends.append(t)
    return ends
