"""Exception hierarchy for the export tool.

The CLI maps these onto exit codes: usage problems exit 1, data problems
(parse errors, layout violations, encoder failures on a pair) exit 2,
anything else exits 3.
"""


class ExportError(Exception):
    """Base class for problems with input data or the export itself."""


class ParseError(ExportError):
    """A text input file violates its line format."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class LayoutError(ExportError):
    """A pair cannot be laid out within the token budget.

    Raised for empty texts, queries that leave no room for a single
    passage token, and tokenizations that produce nothing.
    """
