"""Release gates: nine end-to-end checks, one test per criterion.

Each test prints a single ``criterion N: PASS`` line (bypassing capture) when
its gate holds; a failed gate shows up as the test's FAILED line instead.
"""

import json
import time

import numpy as np
import pytest

from sentrank import autodiff as ad
from sentrank.analysis import diffusion
from sentrank.cli import main
from sentrank.data import RankedRun
from sentrank.evaluation import evaluate, rerank
from sentrank.model import (ModelParams, RecordBatch, att_gru_step, bind,
                            load_checkpoint, named_weights, save_checkpoint,
                            score, score_graph, trainable_weights)
from sentrank.synthetic import SyntheticConfig, generate, generate_files
from sentrank.tokrep import (CacheRecord, CacheStore, LazyTokrepSource,
                             MemoizingCache, pool_sentences, read_tokrep,
                             write_tokrep)
from sentrank.training import TrainConfig, train


def note(capfd, n: int, detail: str) -> None:
    with capfd.disabled():
        print(f"criterion {n}: PASS - {detail}")


def make_cache_record(rng, qid: str, pid: str, enc_dim: int, n: int, m: int) -> CacheRecord:
    return CacheRecord(qid, pid,
                       rng.normal(size=enc_dim).astype(np.float32),
                       rng.normal(size=(n, enc_dim)).astype(np.float32),
                       rng.normal(size=(m, enc_dim)).astype(np.float32),
                       np.arange(1, m + 1, dtype=np.uint32))


# ---------------------------------------------------------------------------
# shared synthetic training runs (criteria 4 and 5)
# ---------------------------------------------------------------------------

# paper training defaults rescaled to the small task: the published lr/warmup
# pace a multi-hundred-thousand-step fine-tune and would move these weights
# by ~1e-2 over the whole budget here, so lr rises and warmup shrinks in
# proportion to the step count while margin/batch/dropout stay as published
SCALED = dict(margin=0.2, batch_size=32, dropout=0.1, lr=3e-3, warmup_steps=32,
              hidden_dim=32, epochs=20, pairs_per_query=16, seed=0)


@pytest.fixture(scope="module")
def separable_task():
    ds = generate(SyntheticConfig())  # 64 train / 16 dev queries, 20 candidates
    store = CacheStore()
    for rec in ds.records:
        store.add(pool_sentences(rec))
    return ds, store


@pytest.fixture(scope="module")
def dmn_training(separable_task):
    ds, store = separable_task
    t0 = time.perf_counter()
    result = train(TrainConfig(**SCALED), store, ds.qrels, ds.train_pool,
                   dev_pools=ds.dev_pool)
    return result, time.perf_counter() - t0


@pytest.fixture(scope="module")
def cls_training(separable_task):
    ds, store = separable_task
    return train(TrainConfig(**SCALED), store, ds.qrels, ds.train_pool,
                 dev_pools=ds.dev_pool, head="cls")


# ---------------------------------------------------------------------------
# 1. gradient correctness on the full forward pass
# ---------------------------------------------------------------------------


def test_criterion_1_gradient_correctness(capfd):
    rng = np.random.default_rng(17)
    params = ModelParams.init(rng, enc_dim=8, hidden_dim=8, episodes=3)
    for _, arr in named_weights(params):
        if arr.ndim == 1:
            arr[:] = rng.normal(scale=0.3, size=arr.shape)  # exercise bias terms
    record = make_cache_record(rng, "q", "p", enc_dim=8, n=3, m=2)

    t0 = time.perf_counter()
    bound, tensors = bind(params, trainable=True)
    loss = ad.mean_all(score_graph(bound, RecordBatch.stack([record])))
    ad.backward(loss)

    h = 1e-5
    checked = 0
    worst = 0.0
    for name, arr in trainable_weights(params):
        flat = arr.reshape(-1)
        coords = rng.choice(flat.size, size=min(4, flat.size), replace=False)
        for c in coords:
            keep = flat[c]
            flat[c] = keep + h
            up = score(params, record)
            flat[c] = keep - h
            down = score(params, record)
            flat[c] = keep
            fd = (up - down) / (2 * h)
            an = tensors[name].grad.reshape(-1)[c]
            rel = abs(fd - an) / max(1.0, abs(fd), abs(an))
            worst = max(worst, rel)
            assert rel <= 1e-4, f"{name}[{c}]: fd {fd} vs analytic {an}"
            checked += 1
    elapsed = time.perf_counter() - t0
    assert checked >= 100
    assert elapsed < 60.0
    note(capfd, 1, f"max rel err {worst:.2e} over {checked} coords in {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. attention-gate endpoint identities
# ---------------------------------------------------------------------------


def test_criterion_2_gate_endpoints(capfd):
    rng = np.random.default_rng(23)
    sig = lambda x: 0.5 * (1.0 + np.tanh(0.5 * x))
    for _ in range(1000):
        d = int(rng.integers(1, 6))
        params = ModelParams.init(rng, enc_dim=4, hidden_dim=d, episodes=1)
        g = params.episodic_gru
        for arr in (g.w_r, g.u_r, g.b_r, g.w_h, g.u_h, g.b_h):
            arr[...] = rng.normal(size=arr.shape)
        c_t = rng.normal(size=2 * d)
        h_prev = rng.normal(size=d)

        np.testing.assert_array_equal(att_gru_step(params, c_t, h_prev, 0.0), h_prev)

        r = sig(g.w_r @ c_t + g.u_r @ h_prev + g.b_r)
        candidate = np.tanh(g.w_h @ c_t + g.u_h @ (r * h_prev) + g.b_h)
        np.testing.assert_array_equal(att_gru_step(params, c_t, h_prev, 1.0), candidate)
    note(capfd, 2, "g=0 and g=1 endpoints bitwise over 1000 instances")


# ---------------------------------------------------------------------------
# 3. ranking metrics against brute force
# ---------------------------------------------------------------------------


def brute_rr(ranking, relevant):
    for i, pid in enumerate(ranking, 1):
        if pid in relevant:
            return 1.0 / i
    return 0.0


def brute_ap(ranking, relevant):
    hits = 0
    total = 0.0
    for i, pid in enumerate(ranking, 1):
        if pid in relevant:
            hits += 1
            total += hits / i
    return total / len(relevant)


def test_criterion_3_metric_oracle(capfd):
    rng = np.random.default_rng(31)
    worst = 0.0
    for case in range(200):
        n = int(rng.integers(2, 40))
        pids = [f"p{i}" for i in range(n)]
        ranking = list(rng.permutation(pids))
        n_rel = int(rng.integers(1, n + 1))
        relevant = set(rng.choice(pids, size=n_rel, replace=False).tolist())
        # relevant-but-unretrieved pids exercise the MAP normalizer
        unretrieved = {f"extra{i}" for i in range(int(rng.integers(0, 3)))}
        qrels_entries = {("q", pid): 1 for pid in relevant | unretrieved}
        qrels_entries.update({("q", pid): 0 for pid in set(pids) - relevant})

        from sentrank.data import Qrels
        run = RankedRun({"q": [(pid, float(n - i)) for i, pid in enumerate(ranking)]})
        report = evaluate(run, Qrels(qrels_entries, 1))
        expect_rr = brute_rr(ranking, relevant)
        expect_ap = brute_ap(ranking, relevant | unretrieved)
        worst = max(worst, abs(report.mrr - expect_rr), abs(report.map - expect_ap))
        assert abs(report.mrr - expect_rr) <= 1e-12
        assert abs(report.map - expect_ap) <= 1e-12

    from sentrank.data import Qrels
    hand = evaluate(RankedRun({"q": [("a", 4.0), ("b", 3.0), ("c", 2.0), ("d", 1.0)]}),
                    Qrels({("q", "b"): 1, ("q", "d"): 1, ("q", "a"): 0, ("q", "c"): 0}, 1))
    assert hand.mrr == 0.5
    assert hand.map == (1 / 2 + 2 / 4) / 2
    hand2 = evaluate(RankedRun({"q": [("r1", 3.0), ("x", 2.0), ("r2", 1.0)]}),
                     Qrels({("q", "r1"): 1, ("q", "r2"): 1, ("q", "x"): 0}, 1))
    assert hand2.map == (1 + 2 / 3) / 2
    note(capfd, 3, f"200 rankings match brute force, worst gap {worst:.1e}")


# ---------------------------------------------------------------------------
# 4. learning capacity on the separable task
# ---------------------------------------------------------------------------


def test_criterion_4_learning_capacity(capfd, dmn_training):
    result, elapsed = dmn_training
    assert result.best_dev_map >= 0.95
    assert elapsed < 300.0
    note(capfd, 4, f"dev MAP {result.best_dev_map:.3f} at epoch "
                   f"{result.best_epoch} in {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 5. sentence signal beats a cls-only head
# ---------------------------------------------------------------------------


def random_ranking_map(n_candidates: int, n_relevant: int, trials: int = 20000) -> float:
    rng = np.random.default_rng(123)
    total = 0.0
    for _ in range(trials):
        order = rng.permutation(n_candidates)
        ranking = [f"p{i}" for i in order]
        total += brute_ap(ranking, {f"p{i}" for i in range(n_relevant)})
    return total / trials


def test_criterion_5_cls_noise_gap(capfd, separable_task, dmn_training, cls_training):
    ds, _ = separable_task
    assert ds.config.signal_sentence == 2  # label signal sits in sentence 2
    baseline = random_ranking_map(ds.config.candidates_per_query,
                                  ds.config.relevant_per_query)
    cls_map = cls_training.best_dev_map
    dmn_map = dmn_training[0].best_dev_map
    assert abs(cls_map - baseline) <= 0.1
    assert dmn_map >= 0.9
    note(capfd, 5, f"cls head {cls_map:.3f} vs random {baseline:.3f} "
                   f"(gap {abs(cls_map - baseline):.3f}); dmn {dmn_map:.3f}")


# ---------------------------------------------------------------------------
# 6. caching speedup after the first epoch
# ---------------------------------------------------------------------------


def test_criterion_6_caching_speedup(capfd, tmp_path):
    # fat records (ingestion-heavy) and a small head (compute-light) give the
    # cold first epoch a measurable representation-loading bill
    cfg = SyntheticConfig(n_train_queries=32, n_dev_queries=2, enc_dim=256,
                          query_tokens=4, sentences=4, tokens_per_sentence=256)
    paths = generate_files(cfg, tmp_path)
    cache = MemoizingCache(LazyTokrepSource(paths["tokrep"]))
    tcfg = TrainConfig(lr=3e-3, warmup_steps=32, batch_size=64, epochs=3,
                       hidden_dim=8, episodes=1, dropout=0.0, seed=0,
                       pairs_per_query=64)
    from sentrank.data import load_pool, load_qrels
    result = train(tcfg, cache, load_qrels(paths["qrels"]), load_pool(paths["train_pool"]))
    bps = [entry["batches_per_sec"] for entry in result.log]
    ratio = min(bps[1:]) / bps[0]
    assert ratio >= 1.5, f"warm/cold throughput ratio {ratio:.2f} (bps {bps})"
    note(capfd, 6, f"cold {bps[0]:.0f} vs warm {min(bps[1:]):.0f} batches/s "
                   f"(ratio {ratio:.2f})")


# ---------------------------------------------------------------------------
# 7. byte-identical artifacts under a fixed seed
# ---------------------------------------------------------------------------


def test_criterion_7_determinism(capfd, tmp_path):
    data = generate_files(
        SyntheticConfig(n_train_queries=6, n_dev_queries=3, candidates_per_query=6,
                        relevant_per_query=2, enc_dim=12, query_tokens=3,
                        sentences=3, tokens_per_sentence=4, seed=21),
        tmp_path / "data")
    blobs = {}
    for tag in ("one", "two"):
        out = tmp_path / tag
        assert main(["train", "--tokrep", str(data["tokrep"]),
                     "--qrels", str(data["qrels"]),
                     "--train-pool", str(data["train_pool"]),
                     "--dev-pool", str(data["dev_pool"]), "--out", str(out),
                     "--hidden-dim", "8", "--episodes", "2", "--epochs", "2",
                     "--lr", "0.003", "--warmup-steps", "4",
                     "--pairs-per-query", "4", "--seed", "5"]) == 0
        assert main(["rerank", "--checkpoint", str(out / "checkpoint.dmnw"),
                     "--tokrep", str(data["tokrep"]),
                     "--pool", str(data["dev_pool"]),
                     "--out", str(out / "dev.run")]) == 0
        assert main(["eval", "--run", str(out / "dev.run"),
                     "--qrels", str(data["qrels"]),
                     "--out", str(out / "report.json")]) == 0
        assert main(["diffusion", "--tokrep", str(data["tokrep"]),
                     "--out", str(out / "diffusion.json"),
                     "--sample", "0.5", "--seed", "5"]) == 0
        blobs[tag] = {name: (out / name).read_bytes()
                      for name in ("checkpoint.dmnw", "dev.run", "report.json",
                                   "diffusion.json")}
    assert blobs["one"] == blobs["two"]
    note(capfd, 7, "checkpoint, run file and reports byte-identical across reruns")


# ---------------------------------------------------------------------------
# 8. format round-trips and corruption rejection
# ---------------------------------------------------------------------------


def test_criterion_8_format_round_trip(capfd, tmp_path):
    from sentrank.errors import FormatError
    from sentrank.tokrep import TokenReprRecord

    rng = np.random.default_rng(41)
    records = []
    for i in range(5):
        t = int(rng.integers(3, 9))
        m = int(rng.integers(1, 4))
        ends = np.sort(rng.choice(np.arange(1, t), size=m - 1, replace=False)) \
            if m > 1 else np.empty(0, dtype=np.uint32)
        ends = np.append(ends, t).astype(np.uint32)
        records.append(TokenReprRecord(
            f"q{i}", f"p{i}",
            rng.normal(size=6).astype(np.float32),
            rng.normal(size=(4, 6)).astype(np.float32),
            rng.normal(size=(t, 6)).astype(np.float32),
            ends))
    path = tmp_path / "roundtrip.tokrep"
    write_tokrep(iter(records), path)
    loaded = list(read_tokrep(path))
    assert len(loaded) == 5
    for a, b in zip(records, loaded):
        assert (a.qid, a.pid) == (b.qid, b.pid)
        np.testing.assert_array_equal(a.cls, b.cls)
        np.testing.assert_array_equal(a.query_tokens, b.query_tokens)
        np.testing.assert_array_equal(a.passage_tokens, b.passage_tokens)
        np.testing.assert_array_equal(a.sentence_ends, b.sentence_ends)

    blob = path.read_bytes()
    for mutant, pattern in (
            (b"XXXX" + blob[4:], "magic"),
            (blob[:len(blob) // 2], "truncat"),
            (blob + b"\x00", "trailing"),
    ):
        bad = tmp_path / "bad.tokrep"
        bad.write_bytes(mutant)
        with pytest.raises(FormatError, match=pattern):
            list(read_tokrep(bad))

    params = ModelParams.init(np.random.default_rng(7), enc_dim=6, hidden_dim=4, episodes=2)
    ckpt = tmp_path / "model.dmnw"
    save_checkpoint(ckpt, params)
    reloaded = load_checkpoint(ckpt)
    for (na, a), (nb, b) in zip(named_weights(params), named_weights(reloaded)):
        assert na == nb
        np.testing.assert_array_equal(a, b)
    cblob = ckpt.read_bytes()
    for mutant, pattern in (
            (b"ZZZZ" + cblob[4:], "magic"),
            (cblob[:-9], "truncated"),
            (cblob + b"\x01", "trailing"),
    ):
        bad = tmp_path / "bad.dmnw"
        bad.write_bytes(mutant)
        with pytest.raises(FormatError, match=pattern):
            load_checkpoint(bad)
    note(capfd, 8, "tokrep + checkpoint round-trip bitwise; 6 corruptions rejected")


# ---------------------------------------------------------------------------
# 9. diffusion means against a double-loop oracle
# ---------------------------------------------------------------------------


def cosine_oracle(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def test_criterion_9_diffusion_oracle(capfd):
    from sentrank.tokrep import TokenReprRecord

    rng = np.random.default_rng(47)
    records = []
    for i in range(10):
        t = int(rng.integers(2, 7))
        records.append(TokenReprRecord(
            f"q{i}", f"p{i}",
            rng.normal(size=5).astype(np.float32),
            rng.normal(size=(3, 5)).astype(np.float32),
            rng.normal(size=(t, 5)).astype(np.float32),
            np.asarray([t], dtype=np.uint32)))

    cq, cp, inner = [], [], []
    for rec in records:
        for tok in rec.query_tokens:
            cq.append(cosine_oracle(rec.cls, tok))
        for tok in rec.passage_tokens:
            cp.append(cosine_oracle(rec.cls, tok))
        toks = rec.passage_tokens
        for i in range(len(toks)):
            for j in range(i + 1, len(toks)):
                inner.append(cosine_oracle(toks[i], toks[j]))

    report = diffusion(iter(records), 1.0, seed=0)
    pairs = ((report.cls_query, cq), (report.cls_passage, cp), (report.innerpassage, inner))
    worst = 0.0
    for dist, oracle_vals in pairs:
        assert dist.count == len(oracle_vals)
        gap = abs(dist.mean - np.mean(oracle_vals))
        worst = max(worst, gap)
        assert gap <= 1e-10
        assert -1.0 <= dist.mean <= 1.0
        assert all(-1.0 - 1e-12 <= v <= 1.0 + 1e-12 for v in oracle_vals)
    note(capfd, 9, f"three similarity means within {worst:.1e} of the double loop")
