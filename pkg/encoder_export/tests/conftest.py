"""Shared fixtures: a tiny randomly initialized encoder, built locally.

The tool's contracts are about layout, boundary marking and
serialization, none of which depend on encoder quality, so tests run a
one-layer 16-dim model with a small hand-rolled WordPiece vocabulary.
Everything is constructed on disk once per session; no network access.
"""

import os

os.environ.setdefault("TRANSFORMERS_OFFLINE", "1")
os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("TOKENIZERS_PARALLELISM", "false")

import pytest

pytest.importorskip("encoder_export")

HIDDEN_SIZE = 16

VOCAB = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    ".", "?", "!",
    "a", "b", "c", "d", "e", "f", "g", "h", "i", "j",
    "what", "is", "water", "wet", "the", "sky", "blue", "why", "rain", "falls",
]


@pytest.fixture(scope="session")
def encoder_dir(tmp_path_factory):
    import torch
    from transformers import BertConfig, BertModel, BertTokenizer

    d = tmp_path_factory.mktemp("tiny-encoder")
    (d / "vocab.txt").write_text("\n".join(VOCAB) + "\n", encoding="utf-8")
    BertTokenizer(str(d / "vocab.txt")).save_pretrained(str(d))
    torch.manual_seed(7)
    model = BertModel(
        BertConfig(
            vocab_size=len(VOCAB),
            hidden_size=HIDDEN_SIZE,
            num_hidden_layers=1,
            num_attention_heads=2,
            intermediate_size=32,
            max_position_embeddings=96,
        )
    )
    model.save_pretrained(str(d))
    return str(d)


@pytest.fixture()
def make_config(encoder_dir, tmp_path):
    from encoder_export import ExportConfig

    def build(**overrides):
        kwargs = dict(encoder=encoder_dir, out=tmp_path / "out.tokrep", max_tokens=16)
        kwargs.update(overrides)
        return ExportConfig(**kwargs)

    return build
