"""Export contextual token representations for query-passage pairs.

Feeds each pair through a pre-trained encoder in the layout
``[CLS] q_1..q_N [SEP] w_1..w_T [SEP]``, splits the outputs back into a
classifier vector, query-token vectors and passage-token vectors (the
separator outputs are discarded), marks sentence boundaries at
end-of-sentence punctuation tokens, and serializes everything to the
tokrep binary format consumed by the re-ranking package.
"""

from .config import ExportConfig, Pair
from .encoder import export
from .errors import ExportError, LayoutError, ParseError
from .layout import EncoderInput, build_input, sentence_ends

__all__ = [
    "EncoderInput",
    "ExportConfig",
    "ExportError",
    "LayoutError",
    "Pair",
    "ParseError",
    "build_input",
    "export",
    "sentence_ends",
]
