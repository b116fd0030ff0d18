"""Command line front end: tokrep-export.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

import argparse
import os
import sys
from pathlib import Path

from .config import DEFAULT_TERMINATORS, ExportConfig
from .datasets import load_collection, load_pairs
from .encoder import export, load_encoder
from .errors import ExportError
from .layout import load_tokenizer


class UsageError(Exception):
    """Bad flags or missing input files."""


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; route through UsageError for exit 1
    def error(self, message):
        raise UsageError(message)


def _require_file(path, flag):
    if not os.path.exists(path):
        raise UsageError(f"{flag}: no such file: {path}")
    return Path(path)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tokrep-export", description=__doc__.splitlines()[0])
    p.add_argument("--encoder", required=True, help="model name or local directory")
    p.add_argument("--queries", required=True, help="id<TAB>text query collection")
    p.add_argument("--passages", required=True, help="id<TAB>text passage collection")
    p.add_argument("--pairs", required=True, help="qid<TAB>pid pairs or a TREC run file")
    p.add_argument("--out", required=True, help="tokrep file to write")
    p.add_argument("--max-tokens", type=int, default=512, help="token budget per pair")
    p.add_argument(
        "--terminator",
        action="append",
        default=None,
        metavar="TOKEN",
        help="end-of-sentence token string; repeatable (default: . ? !)",
    )
    p.add_argument("--batch-size", type=int, default=8)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        terminators = (
            frozenset(args.terminator) if args.terminator else DEFAULT_TERMINATORS
        )
        try:
            cfg = ExportConfig(
                encoder=args.encoder,
                out=Path(args.out),
                max_tokens=args.max_tokens,
                terminators=terminators,
                batch_size=args.batch_size,
            )
        except ValueError as err:
            raise UsageError(str(err)) from err
        try:
            load_tokenizer(args.encoder)
            enc_dim = load_encoder(args.encoder).config.hidden_size
        except Exception as err:
            raise UsageError(f"--encoder: cannot load {args.encoder!r}: {err}") from err
        queries = load_collection(_require_file(args.queries, "--queries"))
        passages = load_collection(_require_file(args.passages, "--passages"))
        pairs = load_pairs(_require_file(args.pairs, "--pairs"), queries, passages)
        count = export(cfg, pairs)
        print(f"wrote {count} records, enc_dim {enc_dim} -> {cfg.out}")
        return 0
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except ExportError as err:
        print(f"data error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # pragma: no cover - defensive
        print(f"internal error: {err}", file=sys.stderr)
        return 3


def entrypoint() -> None:
    sys.exit(main())
