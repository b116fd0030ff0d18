"""Run the encoder over laid-out pairs and serialize the outputs.

Pairs are batched for inference (padded, with an attention mask) but
records are written in input order.  For each pair the classifier
output becomes ``cls``, positions 1..N become ``query_tokens`` and the
passage positions become ``passage_tokens``; both separator outputs are
discarded.
"""

from functools import lru_cache
from itertools import islice
import os

from .config import ExportConfig
from .errors import ExportError
from .layout import build_input, load_tokenizer, sentence_ends
from .writer import TokrepWriter


@lru_cache(maxsize=1)
def load_encoder(name_or_path: str):
    """Load a frozen encoder in eval mode."""
    import transformers

    transformers.logging.set_verbosity_error()
    transformers.utils.logging.disable_progress_bar()
    model = transformers.AutoModel.from_pretrained(name_or_path)
    model.eval()
    return model


def _batches(iterable, size):
    it = iter(iterable)
    while True:
        chunk = list(islice(it, size))
        if not chunk:
            return
        yield chunk


def _encode_batch(model, tokenizer, inputs):
    import torch

    pad_id = tokenizer.pad_token_id
    longest = max(len(inp.tokens) for inp in inputs)
    ids = torch.full((len(inputs), longest), pad_id, dtype=torch.long)
    mask = torch.zeros((len(inputs), longest), dtype=torch.long)
    for row, inp in enumerate(inputs):
        seq = tokenizer.convert_tokens_to_ids(inp.tokens)
        ids[row, : len(seq)] = torch.tensor(seq, dtype=torch.long)
        mask[row, : len(seq)] = 1
    with torch.no_grad():
        out = model(input_ids=ids, attention_mask=mask)
    return out.last_hidden_state.numpy()


def export(cfg: ExportConfig, pairs) -> int:
    """Export every pair to ``cfg.out``; returns the record count.

    An encoder failure aborts the run, names the pairs being encoded,
    and removes the partial output file.
    """
    tokenizer = load_tokenizer(cfg.encoder)
    model = load_encoder(cfg.encoder)
    enc_dim = model.config.hidden_size

    writer = TokrepWriter(cfg.out, enc_dim)
    try:
        for batch in _batches(pairs, cfg.batch_size):
            inputs = []
            for pair in batch:
                try:
                    inputs.append(build_input(pair.query, pair.passage, cfg, tokenizer))
                except ExportError as err:
                    raise ExportError(f"pair {pair.qid}/{pair.pid}: {err}") from err
            try:
                hidden = _encode_batch(model, tokenizer, inputs)
            except Exception as err:
                ids = ", ".join(f"{p.qid}/{p.pid}" for p in batch)
                raise ExportError(f"encoder failed on pairs [{ids}]: {err}") from err
            for pair, inp, states in zip(batch, inputs, hidden):
                ends = sentence_ends(inp.tokens[inp.passage_slice], cfg.terminators)
                writer.add(
                    pair.qid,
                    pair.pid,
                    ends,
                    states[0],
                    states[inp.query_slice],
                    states[inp.passage_slice],
                )
    except BaseException:
        writer.close()
        if os.path.exists(cfg.out):
            os.unlink(cfg.out)
        raise
    writer.close()
    return writer.count
