"""Episodic memory re-ranker over cached encoder representations.

A query-passage pair arrives as frozen encoder outputs: a classification
vector ``cls``, per-token query vectors, and per-sentence mean-pooled passage
vectors. The model encodes the query tokens with a GRU into Q, runs a second
GRU over the sentence vectors to produce facts s_1..s_M, then makes E
episodic passes in which an attention gate (a small similarity net over each
fact, the current memory and Q) replaces the update gate of a GRU. A final
GRU folds the episode memories m^1..m^E, and the score is

    a = sigmoid(W_a [cls; Q; m] + b_a)

The frozen-cls baseline scores sigmoid(w . cls + bias) and ignores the rest.

Public functions operate on single records (plain vectors in, floats out) and
run without graph recording. Training and bulk scoring use the row-batched
graph builders at the bottom; both layouts share the same step helpers, so
there is exactly one implementation of the recurrences.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .errors import FormatError, ShapeError

Array = np.ndarray


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class GruParams:
    """Update/reset/candidate weights of one GRU cell.

    Field values are float64 arrays, or Tensors when bound into a graph.
    """

    input_dim: int
    hidden_dim: int
    w_z: Array
    u_z: Array
    b_z: Array
    w_r: Array
    u_r: Array
    b_r: Array
    w_h: Array
    u_h: Array
    b_h: Array

    _WEIGHT_NAMES = ("w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h")

    @classmethod
    def init(cls, rng: np.random.Generator, input_dim: int, hidden_dim: int) -> "GruParams":
        def w(fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=(hidden_dim, fan_in))

        zero = lambda: np.zeros(hidden_dim)
        return cls(
            input_dim, hidden_dim,
            w(input_dim), w(hidden_dim), zero(),
            w(input_dim), w(hidden_dim), zero(),
            w(input_dim), w(hidden_dim), zero(),
        )

    def weights(self):
        for name in self._WEIGHT_NAMES:
            yield name, getattr(self, name)


@dataclass(eq=False)
class GateNetParams:
    """Two-layer attention-gate net: tanh hidden layer, sigmoid scalar out."""

    hidden_g: int
    w_1: Array  # (hidden_g, 4d)
    b_1: Array  # (hidden_g,)
    w_2: Array  # (1, hidden_g)
    b_2: Array  # (1,)

    _WEIGHT_NAMES = ("w_1", "b_1", "w_2", "b_2")

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, hidden_g: int | None = None) -> "GateNetParams":
        hidden_g = d if hidden_g is None else hidden_g
        if hidden_g < 1:
            raise ShapeError(f"gate net hidden size must be >= 1, got {hidden_g}")
        b1 = 1.0 / np.sqrt(4 * d)
        b2 = 1.0 / np.sqrt(hidden_g)
        return cls(
            hidden_g,
            rng.uniform(-b1, b1, size=(hidden_g, 4 * d)),
            np.zeros(hidden_g),
            rng.uniform(-b2, b2, size=(1, hidden_g)),
            np.zeros(1),
        )

    def weights(self):
        for name in self._WEIGHT_NAMES:
            yield name, getattr(self, name)


@dataclass(eq=False)
class ModelParams:
    """All weights of the episodic re-ranker.

    ``w_a`` has one row of width enc_dim + 2*hidden_dim, applied to
    [cls; Q; final_memory]. The episodic GRU's update-gate weights exist in
    the container and the checkpoint but are never used by the forward pass
    (the attention gate takes that role), so they are not trainable.
    """

    enc_dim: int
    hidden_dim: int
    episodes: int
    input_gru: GruParams
    question_gru: GruParams
    episodic_gru: GruParams
    gate_net: GateNetParams
    memory_gru: GruParams
    w_a: Array  # (1, enc_dim + 2*hidden_dim)
    b_a: Array  # (1,)

    @classmethod
    def init(cls, rng, enc_dim, hidden_dim, episodes, hidden_g=None) -> "ModelParams":
        if episodes < 1:
            raise ShapeError(f"episode count must be >= 1, got {episodes}")
        width = enc_dim + 2 * hidden_dim
        bound = 1.0 / np.sqrt(width)
        return cls(
            enc_dim, hidden_dim, episodes,
            GruParams.init(rng, enc_dim, hidden_dim),
            GruParams.init(rng, enc_dim, hidden_dim),
            GruParams.init(rng, 2 * hidden_dim, hidden_dim),
            GateNetParams.init(rng, hidden_dim, hidden_g),
            GruParams.init(rng, hidden_dim, hidden_dim),
            rng.uniform(-bound, bound, size=(1, width)),
            np.zeros(1),
        )


@dataclass(eq=False)
class ClsHeadParams:
    """Trainable linear head over the frozen classification vector."""

    enc_dim: int
    w: Array  # (1, enc_dim)
    bias: Array  # (1,)

    @classmethod
    def init(cls, rng, enc_dim) -> "ClsHeadParams":
        bound = 1.0 / np.sqrt(enc_dim)
        return cls(enc_dim, rng.uniform(-bound, bound, size=(1, enc_dim)), np.zeros(1))


# ---------------------------------------------------------------------------
# result containers
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class QuestionEncoding:
    q: Array  # (d,)


@dataclass(eq=False)
class FactSequence:
    s: Array  # (M, d)


@dataclass(eq=False)
class EpisodicState:
    gates: Array  # (E, M), raw sigmoid outputs
    memories: list  # m^0..m^E, each (d,)
    final_memory: Array  # (d,)


# ---------------------------------------------------------------------------
# parameter enumeration and graph binding
# ---------------------------------------------------------------------------

# Checkpoint tensor order; also the trainable order (minus the episodic
# update gate, which the forward pass never reads).
_GRU_BLOCKS = ("input_gru", "question_gru", "episodic_gru", "gate_net", "memory_gru")
_UNUSED = {"episodic_gru.w_z", "episodic_gru.u_z", "episodic_gru.b_z"}


def named_weights(params: ModelParams):
    """All weights in checkpoint order as (dotted name, array)."""
    for block in _GRU_BLOCKS:
        for name, arr in getattr(params, block).weights():
            yield f"{block}.{name}", arr
    yield "w_a", params.w_a
    yield "b_a", params.b_a


def trainable_weights(params) -> list:
    """(name, array) pairs the optimizer may update."""
    if isinstance(params, ClsHeadParams):
        return [("w", params.w), ("bias", params.bias)]
    return [(n, a) for n, a in named_weights(params) if n not in _UNUSED]


def _bind_block(block, wrap):
    t = type(block)
    bound = t.__new__(t)
    for f in fields(t):
        v = getattr(block, f.name)
        setattr(bound, f.name, wrap(v) if isinstance(v, np.ndarray) else v)
    return bound


def bind(params, trainable: bool = False):
    """Wrap every weight array in graph tensors, sharing storage.

    Returns (bound params, dict name -> tensor); the dict covers exactly the
    trainable weights and is empty when ``trainable`` is false.
    """
    tensors = {}
    if not trainable:
        return _bind_model(params, lambda name, arr: ad.constant(arr)), tensors

    train_names = {n for n, _ in trainable_weights(params)}

    def wrap(name, arr):
        if name in train_names:
            tensors[name] = ad.variable(arr)
            return tensors[name]
        return ad.constant(arr)

    return _bind_model(params, wrap), tensors


def _bind_model(params, wrap):
    if isinstance(params, ClsHeadParams):
        return ClsHeadParams(params.enc_dim, wrap("w", params.w), wrap("bias", params.bias))
    t = ModelParams.__new__(ModelParams)
    t.enc_dim, t.hidden_dim, t.episodes = params.enc_dim, params.hidden_dim, params.episodes
    for block in _GRU_BLOCKS:
        src = getattr(params, block)
        t_block = _bind_block(src, lambda v: v)  # copy ints, rebind arrays below
        for name, arr in src.weights():
            setattr(t_block, name, wrap(f"{block}.{name}", arr))
        setattr(t, block, t_block)
    t.w_a = wrap("w_a", params.w_a)
    t.b_a = wrap("b_a", params.b_a)
    return t


# ---------------------------------------------------------------------------
# graph steps, shared by the single-record and row-batched layouts
# ---------------------------------------------------------------------------


def _gru_graph_step(p, x, h):
    z = ad.sigmoid(ad.add_bias(ad.add(ad.matvec(p.w_z, x), ad.matvec(p.u_z, h)), p.b_z))
    r = ad.sigmoid(ad.add_bias(ad.add(ad.matvec(p.w_r, x), ad.matvec(p.u_r, h)), p.b_r))
    cand = ad.tanh(ad.add_bias(ad.add(ad.matvec(p.w_h, x), ad.matvec(p.u_h, ad.mul(r, h))), p.b_h))
    return ad.add(ad.mul(ad.one_minus(z), h), ad.mul(z, cand))


def _gate_graph(gp, fact, m_prev, q):
    feats = ad.concat(ad.mul(fact, q), ad.mul(fact, m_prev), ad.absdiff(fact, q), ad.absdiff(fact, m_prev))
    hidden = ad.tanh(ad.add_bias(ad.matvec(gp.w_1, feats), gp.b_1))
    return ad.sigmoid(ad.add_bias(ad.matvec(gp.w_2, hidden), gp.b_2))


def _att_graph_step(p, c, h, gate):
    # GRU step with the update gate replaced by the attention gate:
    # h = g*h_cand + (1-g)*h_prev.
    r = ad.sigmoid(ad.add_bias(ad.add(ad.matvec(p.w_r, c), ad.matvec(p.u_r, h)), p.b_r))
    cand = ad.tanh(ad.add_bias(ad.add(ad.matvec(p.w_h, c), ad.matvec(p.u_h, ad.mul(r, h))), p.b_h))
    return ad.add(ad.scale_rows(gate, cand), ad.scale_rows(ad.one_minus(gate), h))


def _zeros_like_hidden(example, hidden_dim):
    shape = (hidden_dim,) if example.data.ndim == 1 else (example.data.shape[0], hidden_dim)
    return ad.constant(np.zeros(shape))


def _fold_gru(p, steps, hidden_dim, collect=False):
    h = _zeros_like_hidden(steps[0], hidden_dim)
    outputs = []
    for x in steps:
        h = _gru_graph_step(p, x, h)
        if collect:
            outputs.append(h)
    return outputs if collect else h


def _episodes_graph(bound, fact_steps, q, gate_dropout=None, gate_override=None):
    """Run E episodic passes; returns (memories m^0..m^E, raw gate tensors).

    ``gate_dropout`` maps a gate tensor to its (possibly masked) dynamic
    value; the returned gates are always the raw sigmoid outputs.
    ``gate_override`` is a test hook: (episode, t) -> fixed gate value.
    """
    m = q
    memories = [m]
    raw_gates = []
    for episode in range(bound.episodes):
        h = _zeros_like_hidden(fact_steps[0], bound.hidden_dim)
        row = []
        for t, fact in enumerate(fact_steps):
            if gate_override is not None:
                gate = ad.constant(np.broadcast_to(
                    np.float64(gate_override(episode, t)),
                    (1,) if fact.data.ndim == 1 else (fact.data.shape[0], 1),
                ).copy())
            else:
                gate = _gate_graph(bound.gate_net, fact, m, q)
            row.append(gate)
            dyn = gate if gate_dropout is None else gate_dropout(gate)
            h = _att_graph_step(bound.episodic_gru, ad.concat(fact, m), h, dyn)
        m = h
        memories.append(m)
        raw_gates.append(row)
    return memories, raw_gates


def _answer_graph(bound, cls_vec, q, final_memory, pre_output_dropout=None):
    cat = ad.concat(cls_vec, q, final_memory)
    if pre_output_dropout is not None:
        cat = pre_output_dropout(cat)
    return ad.sigmoid(ad.add_bias(ad.matvec(bound.w_a, cat), bound.b_a))


# ---------------------------------------------------------------------------
# single-record public surface
# ---------------------------------------------------------------------------


def _check_rows(name, arr, width):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != width:
        raise ShapeError(f"{name}: expected shape (*, {width}), got {arr.shape}")
    if arr.shape[0] < 1:
        raise ShapeError(f"{name}: need at least one row")
    return arr


def gru_step(p: GruParams, x, h_prev) -> Array:
    """One update/reset/candidate GRU step on plain vectors."""
    with ad.no_grad():
        bound = _bind_block(p, ad.constant)
        return _gru_graph_step(bound, ad.constant(x), ad.constant(h_prev)).data


def encode_question(params: ModelParams, query_tokens) -> QuestionEncoding:
    """Fold the question GRU over token vectors; Q is the last hidden state."""
    tokens = _check_rows("query_tokens", query_tokens, params.enc_dim)
    with ad.no_grad():
        bound, _ = bind(params)
        steps = [ad.constant(row) for row in tokens]
        return QuestionEncoding(_fold_gru(bound.question_gru, steps, params.hidden_dim).data)


def encode_facts(params: ModelParams, sentence_vectors) -> FactSequence:
    """Run the input GRU over sentence vectors, keeping every hidden state."""
    rows = _check_rows("sentence_vectors", sentence_vectors, params.enc_dim)
    with ad.no_grad():
        bound, _ = bind(params)
        steps = [ad.constant(row) for row in rows]
        outs = _fold_gru(bound.input_gru, steps, params.hidden_dim, collect=True)
        return FactSequence(np.stack([o.data for o in outs]))


def attention_gate(gp: GateNetParams, fact, m_prev, q) -> float:
    """Similarity-net gate over (fact, memory, question); strictly in (0,1)."""
    fact, m_prev, q = (np.asarray(v, dtype=np.float64) for v in (fact, m_prev, q))
    if not fact.shape == m_prev.shape == q.shape:
        raise ShapeError(f"attention_gate: shapes differ: {fact.shape}, {m_prev.shape}, {q.shape}")
    with ad.no_grad():
        bound = _bind_block(gp, ad.constant)
        out = _gate_graph(bound, ad.constant(fact), ad.constant(m_prev), ad.constant(q))
        return float(out.data[0])


def att_gru_step(params: ModelParams, c_t, h_prev, g: float) -> Array:
    """Attention-gated GRU step: g*h_cand + (1-g)*h_prev."""
    with ad.no_grad():
        bound, _ = bind(params)
        out = _att_graph_step(
            bound.episodic_gru, ad.constant(c_t), ad.constant(h_prev),
            ad.constant(np.full(1, g)),
        )
        return out.data


def run_episodes(params: ModelParams, facts: FactSequence, q: QuestionEncoding,
                 _gate_override=None) -> EpisodicState:
    """E gated passes over the facts plus the memory-aggregation fold."""
    with ad.no_grad():
        bound, _ = bind(params)
        fact_steps = [ad.constant(row) for row in np.asarray(facts.s, dtype=np.float64)]
        q_t = ad.constant(q.q)
        memories, raw = _episodes_graph(bound, fact_steps, q_t, gate_override=_gate_override)
        final = _fold_gru(bound.memory_gru, memories[1:], params.hidden_dim)
        gates = np.array([[float(g.data[0]) for g in row] for row in raw])
        return EpisodicState(gates, [m.data for m in memories], final.data)


def _record_arrays(params: ModelParams, record):
    if record.cls.shape != (params.enc_dim,):
        raise ShapeError(
            f"record enc_dim {record.cls.shape} does not match model enc_dim {params.enc_dim}")
    cls_vec = np.asarray(record.cls, dtype=np.float64)
    query = _check_rows("query_tokens", record.query_tokens, params.enc_dim)
    sents = _check_rows("sentence_vectors", record.sentence_vectors, params.enc_dim)
    return cls_vec, query, sents


def score_with_state(params: ModelParams, record) -> tuple:
    """Inference score plus the episodic state of the same forward pass."""
    cls_vec, query, sents = _record_arrays(params, record)
    with ad.no_grad():
        bound, _ = bind(params)
        fact_steps = _fold_gru(
            bound.input_gru, [ad.constant(r) for r in sents], params.hidden_dim, collect=True)
        q = _fold_gru(bound.question_gru, [ad.constant(r) for r in query], params.hidden_dim)
        memories, raw = _episodes_graph(bound, fact_steps, q)
        final = _fold_gru(bound.memory_gru, memories[1:], params.hidden_dim)
        out = _answer_graph(bound, ad.constant(cls_vec), q, final)
        gates = np.array([[float(g.data[0]) for g in row] for row in raw])
        state = EpisodicState(gates, [m.data for m in memories], final.data)
        return float(out.data[0]), state


def score(params: ModelParams, record, training: bool = False, rng=None,
          dropout_rate: float = 0.0) -> float:
    """Full pipeline score in (0,1) for one cached record.

    Training mode applies inverted dropout to the sentence vectors, the
    attention gates and the pre-output concatenation, consuming ``rng``.
    """
    if not training:
        return score_with_state(params, record)[0]
    cls_vec, query, sents = _record_arrays(params, record)
    bound, _ = bind(params)
    out = _score_graph_single(bound, cls_vec, query, sents, dropout_rate, rng)
    return float(out.data[0])


def _score_graph_single(bound, cls_vec, query, sents, rate, rng):
    drop = lambda t: ad.dropout(t, rate, training=True, rng=rng)
    sent_steps = [drop(ad.constant(r)) for r in sents]
    fact_steps = _fold_gru(bound.input_gru, sent_steps, bound.hidden_dim, collect=True)
    q = _fold_gru(bound.question_gru, [ad.constant(r) for r in query], bound.hidden_dim)
    memories, _ = _episodes_graph(bound, fact_steps, q, gate_dropout=drop)
    final = _fold_gru(bound.memory_gru, memories[1:], bound.hidden_dim)
    return _answer_graph(bound, ad.constant(cls_vec), q, final, pre_output_dropout=drop)


def score_cls_baseline(w, bias, record) -> float:
    """sigmoid(w . cls + bias); ignores everything but the cls vector."""
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    cls_vec = np.asarray(record.cls, dtype=np.float64)
    if w.shape != cls_vec.shape:
        raise ShapeError(f"cls head width {w.shape} does not match cls vector {cls_vec.shape}")
    x = float(w @ cls_vec) + float(np.asarray(bias).reshape(-1)[0])
    return float(0.5 * (1.0 + np.tanh(0.5 * x)))


def cls_head_score(params: ClsHeadParams, record) -> float:
    return score_cls_baseline(params.w, params.bias, record)


# ---------------------------------------------------------------------------
# row-batched scoring (training and bulk inference)
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class RecordBatch:
    """B same-shape records stacked row-wise, one time-step array per step."""

    cls: Array  # (B, enc_dim)
    query_steps: list  # N arrays of (B, enc_dim)
    sentence_steps: list  # M arrays of (B, enc_dim)

    @classmethod
    def stack(cls, records) -> "RecordBatch":
        first = records[0]
        n, m = first.query_tokens.shape[0], first.sentence_vectors.shape[0]
        if any(r.query_tokens.shape[0] != n or r.sentence_vectors.shape[0] != m
               for r in records):
            raise ShapeError("RecordBatch.stack: records must share token and sentence counts")
        cls_rows = np.stack([np.asarray(r.cls, dtype=np.float64) for r in records])
        qs = np.stack([np.asarray(r.query_tokens, dtype=np.float64) for r in records])
        ss = np.stack([np.asarray(r.sentence_vectors, dtype=np.float64) for r in records])
        return cls(cls_rows, [qs[:, t] for t in range(n)], [ss[:, t] for t in range(m)])


def score_graph(bound, batch: RecordBatch, training: bool = False,
                dropout_rate: float = 0.0, rng=None):
    """Scores tensor of shape (B, 1) for a stacked batch; records the tape."""
    if training and dropout_rate > 0.0:
        drop = lambda t: ad.dropout(t, dropout_rate, training=True, rng=rng)
    else:
        drop = lambda t: t
    sent_steps = [drop(ad.constant(s)) for s in batch.sentence_steps]
    fact_steps = _fold_gru(bound.input_gru, sent_steps, bound.hidden_dim, collect=True)
    q = _fold_gru(bound.question_gru, [ad.constant(s) for s in batch.query_steps],
                  bound.hidden_dim)
    memories, _ = _episodes_graph(bound, fact_steps, q, gate_dropout=drop)
    final = _fold_gru(bound.memory_gru, memories[1:], bound.hidden_dim)
    return _answer_graph(bound, ad.constant(batch.cls), q, final, pre_output_dropout=drop)


def cls_score_graph(bound: ClsHeadParams, batch: RecordBatch):
    return ad.sigmoid(ad.add_bias(ad.matvec(bound.w, ad.constant(batch.cls)), bound.bias))


# ---------------------------------------------------------------------------
# checkpoint format: magic DMNW, version, head kind, dims, f64 tensors
# ---------------------------------------------------------------------------

_MAGIC = b"DMNW"
_VERSION = 1
_HEAD_DMN = 0
_HEAD_CLS = 1


def save_checkpoint(path, params) -> None:
    """Byte-deterministic little-endian dump of all weights."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        if isinstance(params, ClsHeadParams):
            f.write(struct.pack("<III", _VERSION, _HEAD_CLS, params.enc_dim))
            blocks = [("w", params.w), ("bias", params.bias)]
        else:
            f.write(struct.pack(
                "<IIIIII", _VERSION, _HEAD_DMN, params.enc_dim, params.hidden_dim,
                params.episodes, params.gate_net.hidden_g))
            blocks = list(named_weights(params))
        for _, arr in blocks:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"checkpoint truncated while reading {what}")
    return buf


def _read_array(f, shape, what):
    n = int(np.prod(shape))
    buf = _read_exact(f, n * 8, what)
    return np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)


def load_checkpoint(path):
    """Inverse of save_checkpoint; returns ModelParams or ClsHeadParams."""
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != _MAGIC:
            raise FormatError(f"{path}: not a model checkpoint (bad magic)")
        version, head = struct.unpack("<II", _read_exact(f, 8, "header"))
        if version != _VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        if head == _HEAD_CLS:
            (enc_dim,) = struct.unpack("<I", _read_exact(f, 4, "dims"))
            params = ClsHeadParams(
                enc_dim, _read_array(f, (1, enc_dim), "w"), _read_array(f, (1,), "bias"))
        elif head == _HEAD_DMN:
            enc_dim, d, episodes, hidden_g = struct.unpack("<IIII", _read_exact(f, 16, "dims"))
            rng = np.random.default_rng(0)
            params = ModelParams.init(rng, enc_dim, d, episodes, hidden_g)
            for name, arr in named_weights(params):
                loaded = _read_array(f, arr.shape, name)
                arr[...] = loaded
        else:
            raise FormatError(f"{path}: unknown head kind {head}")
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after checkpoint payload")
        return params
