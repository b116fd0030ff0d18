"""Acceptance gate for the export tool.

Exercises the full path on three sample pairs and checks the output
against the re-ranking package's validator, reached only through its
installed command line interface.
"""

import shutil
import subprocess

import pytest

from encoder_export import Pair, export
from encoder_export.encoder import load_encoder

from reader import read_tokrep

MAX_TOKENS = 16

# three pairs sharing one config: one with two terminated sentences, one
# with no terminator at all, one long enough to force truncation
SAMPLE_PAIRS = [
    Pair("q1", "p1", "what is water", "a b . c d ."),
    Pair("q1", "p2", "what is water", "the sky is blue"),
    Pair("q2", "p3", "why", "a b c . d e f . g h i j a b"),
]


def note(capfd, n, detail):
    with capfd.disabled():
        print(f"criterion {n}: PASS - {detail}")


@pytest.fixture(scope="module")
def export_file(make_config_module):
    cfg = make_config_module(max_tokens=MAX_TOKENS)
    count = export(cfg, SAMPLE_PAIRS)
    return cfg, count


@pytest.fixture(scope="module")
def make_config_module(encoder_dir, tmp_path_factory):
    from encoder_export import ExportConfig

    out_dir = tmp_path_factory.mktemp("acceptance")

    def build(**overrides):
        kwargs = dict(encoder=encoder_dir, out=out_dir / "sample.tokrep")
        kwargs.update(overrides)
        return ExportConfig(**kwargs)

    return build


def test_criterion_10_export_validity(export_file, capfd):
    cfg, count = export_file

    validator = shutil.which("sentrank")
    assert validator, "re-ranking CLI not installed"
    proc = subprocess.run(
        [validator, "validate", "--tokrep", str(cfg.out)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "ok: 3 records" in proc.stdout

    enc_dim, records = read_tokrep(cfg.out)
    assert count == len(SAMPLE_PAIRS) == len(records)

    # sentence boundaries sit on the punctuation tokens, inclusive
    by_pid = {r["pid"]: r for r in records}
    assert by_pid["p1"]["sentence_ends"].tolist() == [3, 6]
    assert by_pid["p2"]["sentence_ends"].tolist() == [4]

    # the truncated pair occupies the whole budget: [CLS] + 3 + [SEP] ... [SEP]
    p3 = by_pid["p3"]
    total = 1 + p3["query_tokens"].shape[0] + 1 + p3["passage_tokens"].shape[0] + 1
    assert total == MAX_TOKENS
    assert p3["sentence_ends"].tolist() == [4, 8, 12]

    # untruncated pairs keep their natural length
    total_p1 = 3 + by_pid["p1"]["query_tokens"].shape[0] + by_pid["p1"]["passage_tokens"].shape[0]
    assert total_p1 == 12

    hidden = load_encoder(cfg.encoder).config.hidden_size
    assert enc_dim == hidden
    for rec in records:
        assert rec["cls"].shape == (hidden,)
        assert rec["query_tokens"].shape[1] == hidden
        assert rec["passage_tokens"].shape[1] == hidden

    note(
        capfd,
        10,
        f"3/3 records pass the installed validator, boundaries on punctuation, "
        f"truncated pair fills all {MAX_TOKENS} positions, enc_dim {enc_dim} throughout",
    )
