"""Loss, schedule, optimizer and training-loop contracts."""

import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import sentrank.autodiff as ad
from sentrank import data, evaluation, model, tokrep, training
from sentrank.errors import CacheMissError

from test_tokrep import make_record


class TestPairLoss:
    def test_margin_satisfied(self):
        assert training.pair_loss(0.9, 0.2, 0.2) == 0.0

    def test_equal_scores_cost_the_margin(self):
        assert training.pair_loss(0.6, 0.6, 0.2) == pytest.approx(0.2)

    def test_inverted_scores(self):
        assert training.pair_loss(0.3, 0.4, 0.2) == pytest.approx(0.3)


class TestLearningRateSchedule:
    def cfg(self, **kw):
        return training.TrainConfig(**kw)

    def test_linear_midpoint(self):
        assert training.lr_at(500, self.cfg()) == pytest.approx(1.5e-5)

    def test_end_of_warmup(self):
        assert training.lr_at(1000, self.cfg()) == pytest.approx(3e-5)

    def test_constant_tail(self):
        assert training.lr_at(10 ** 6, self.cfg()) == pytest.approx(3e-5)

    @given(a=st.integers(min_value=1, max_value=10 ** 6), b=st.integers(min_value=0, max_value=10 ** 6))
    @settings(max_examples=50, deadline=None)
    def test_non_decreasing_and_bounded(self, a, b):
        cfg = self.cfg()
        lo, hi = min(a, a + b), max(a, a + b)
        assert training.lr_at(lo, cfg) <= training.lr_at(hi, cfg) <= cfg.lr


def ref_adamw_scalar(grads, lr, beta1, beta2, eps, decay, is_bias=False):
    # independent scalar re-implementation with bias correction
    theta, m, v = 0.0, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        theta -= lr * m_hat / (v_hat ** 0.5 + eps)
        if decay > 0 and not is_bias:
            theta -= lr * decay * theta
    return theta


class TestAdamW:
    def cfg(self, **kw):
        return training.TrainConfig(**kw)

    def test_first_step_moves_by_lr(self):
        cfg = self.cfg(weight_decay=0.0)
        arr = np.zeros(1)
        training.adamw_step([("w", arr)], {"w": np.ones(1)}, training.AdamState(), 1e-3, cfg)
        assert arr[0] == pytest.approx(-1e-3, rel=1e-6)

    def test_zero_grads_leave_params_unchanged(self):
        cfg = self.cfg(weight_decay=0.0)
        arr = np.full(3, 0.7)
        state = training.AdamState()
        for _ in range(5):
            training.adamw_step([("w", arr)], {"w": np.zeros(3)}, state, 1e-2, cfg)
        np.testing.assert_array_equal(arr, np.full(3, 0.7))

    def test_decay_shrinks_without_gradient(self):
        cfg = self.cfg(weight_decay=0.5)
        arr = np.full(1, 2.0)
        training.adamw_step([("w", arr)], {"w": np.zeros(1)}, training.AdamState(), 0.1, cfg)
        assert arr[0] == pytest.approx(2.0 * (1 - 0.1 * 0.5), rel=1e-12)

    def test_biases_are_not_decayed(self):
        cfg = self.cfg(weight_decay=0.5)
        arr = np.full(1, 2.0)
        training.adamw_step([("gru.b_z", arr)], {"gru.b_z": np.zeros(1)},
                            training.AdamState(), 0.1, cfg)
        assert arr[0] == 2.0

    def test_matches_scalar_reference_over_steps(self):
        cfg = self.cfg(weight_decay=0.3)
        rng = np.random.default_rng(0)
        grads = rng.normal(size=10).tolist()
        arr = np.zeros(1)
        state = training.AdamState()
        for g in grads:
            training.adamw_step([("w", arr)], {"w": np.full(1, g)}, state, 1e-2, cfg)
        want = ref_adamw_scalar(grads, 1e-2, cfg.beta1, cfg.beta2, cfg.eps, 0.3)
        assert arr[0] == pytest.approx(want, rel=1e-10)


class TestSamplePairs:
    def qrels(self, entries):
        return data.Qrels(entries, 1)

    def test_single_possible_pair(self):
        pool = data.CandidatePool({"q1": ["pos", "neg"]})
        qrels = self.qrels({("q1", "pos"): 1, ("q1", "neg"): 0})
        pairs, skipped = training.sample_pairs(qrels, pool, np.random.default_rng(0))
        assert skipped == 0
        assert [(p.qid, p.pid_pos, p.pid_neg) for p in pairs] == [("q1", "pos", "neg")]

    def test_query_without_positives_is_skipped_and_counted(self):
        pool = data.CandidatePool({"q1": ["a", "b"]})
        qrels = self.qrels({("q1", "a"): 0})
        pairs, skipped = training.sample_pairs(qrels, pool, np.random.default_rng(0))
        assert pairs == [] and skipped == 1

    def test_fixed_seed_reproduces_sequence(self):
        pool = data.CandidatePool({"q1": [f"p{i}" for i in range(10)]})
        qrels = self.qrels({("q1", f"p{i}"): int(i < 4) for i in range(10)})
        a, _ = training.sample_pairs(qrels, pool, np.random.default_rng(3), pairs_per_query=5)
        b, _ = training.sample_pairs(qrels, pool, np.random.default_rng(3), pairs_per_query=5)
        assert [(p.pid_pos, p.pid_neg) for p in a] == [(p.pid_pos, p.pid_neg) for p in b]

    def test_pairs_per_query_multiplies_output(self):
        pool = data.CandidatePool({"q1": ["pos", "neg"], "q2": ["pos2", "neg2"]})
        qrels = self.qrels({("q1", "pos"): 1, ("q2", "pos2"): 1})
        pairs, _ = training.sample_pairs(qrels, pool, np.random.default_rng(0), pairs_per_query=3)
        assert len(pairs) == 6


# ---------------------------------------------------------------------------
# training loop fixtures
# ---------------------------------------------------------------------------


def tiny_dataset(rng, n_queries=4, enc_dim=8, with_dev=True):
    """Random records: one relevant and one irrelevant candidate per query."""
    cache = tokrep.CacheStore()
    entries = {}
    pools = data.CandidatePool()
    dev_pools = data.CandidatePool()
    for i in range(n_queries):
        qid = f"q{i}"
        target = dev_pools if with_dev and i >= n_queries - 2 else pools
        for pid, grade in ((f"p{i}-pos", 1), (f"p{i}-neg", 0)):
            rec = make_record(rng, qid=qid, pid=pid, enc_dim=enc_dim, n=2, t=3, ends=[2, 3])
            cache.add(tokrep.pool_sentences(rec))
            entries[(qid, pid)] = grade
            target.add(qid, pid)
    return cache, data.Qrels(entries, 1), pools, dev_pools


def cache_checksum(cache):
    h = hashlib.sha256()
    for key in sorted(cache.keys()):
        rec = cache.get(*key)
        for arr in (rec.cls, rec.query_tokens, rec.sentence_vectors):
            h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


class TestTrainLoop:
    def small_cfg(self, **kw):
        base = dict(epochs=2, seed=7, hidden_dim=6, episodes=2, batch_size=4,
                    lr=1e-3, warmup_steps=4, dropout=0.1)
        base.update(kw)
        return training.TrainConfig(**base)

    def test_zero_epochs_returns_initialized_params_and_empty_log(self):
        cache, qrels, pools, dev = tiny_dataset(np.random.default_rng(1))
        result = training.train(self.small_cfg(epochs=0), cache, qrels, pools, dev)
        assert result.log == []
        assert result.best_epoch is None
        assert isinstance(result.params, model.ModelParams)

    def test_deterministic_checkpoints(self, tmp_path):
        cache, qrels, pools, dev = tiny_dataset(np.random.default_rng(2))
        cfg = self.small_cfg()
        a = training.train(cfg, cache, qrels, pools, dev)
        b = training.train(cfg, cache, qrels, pools, dev)
        pa, pb = tmp_path / "a.dmnw", tmp_path / "b.dmnw"
        model.save_checkpoint(pa, a.params)
        model.save_checkpoint(pb, b.params)
        assert pa.read_bytes() == pb.read_bytes()
        assert [e["mean_loss"] for e in a.log] == [e["mean_loss"] for e in b.log]
        assert [e["dev_map"] for e in a.log] == [e["dev_map"] for e in b.log]

    def test_overfits_eight_pairs_in_two_hundred_steps(self):
        cache, qrels, pools, _ = tiny_dataset(np.random.default_rng(3), n_queries=8, with_dev=False)
        cfg = training.TrainConfig(
            epochs=200, seed=5, hidden_dim=8, episodes=2, batch_size=8,
            lr=0.02, warmup_steps=20, dropout=0.0, weight_decay=0.0)
        result = training.train(cfg, cache, qrels, pools)
        assert len(result.log) == 200
        assert all(len_ == 1 for len_ in
                   (round(e["batches_per_sec"] * e["wall_seconds"]) for e in result.log))
        assert result.log[-1]["mean_loss"] < 0.01

    def test_cache_is_never_mutated(self):
        cache, qrels, pools, dev = tiny_dataset(np.random.default_rng(4))
        before = cache_checksum(cache)
        training.train(self.small_cfg(), cache, qrels, pools, dev)
        assert cache_checksum(cache) == before

    def test_cache_miss_names_the_pair(self):
        cache, qrels, pools, dev = tiny_dataset(np.random.default_rng(5))
        pools.add("q0", "phantom")
        qrels.entries[("q0", "phantom")] = 0
        with pytest.raises(CacheMissError, match="phantom"):
            training.train(self.small_cfg(), cache, qrels, pools, dev)

    def test_best_checkpoint_is_earliest_max_dev_map(self):
        cache, qrels, pools, dev = tiny_dataset(np.random.default_rng(6), n_queries=6)
        result = training.train(self.small_cfg(epochs=3), cache, qrels, pools, dev)
        dev_maps = [e["dev_map"] for e in result.log]
        assert result.best_dev_map == max(dev_maps)
        assert result.best_epoch == dev_maps.index(max(dev_maps)) + 1
        rerun = evaluation.evaluate(evaluation.rerank(result.params, dev, cache), qrels)
        assert rerun.map == pytest.approx(result.best_dev_map, abs=1e-12)

    def test_cls_head_training_runs(self):
        cache, qrels, pools, dev = tiny_dataset(np.random.default_rng(7))
        result = training.train(self.small_cfg(), cache, qrels, pools, dev, head="cls")
        assert isinstance(result.params, model.ClsHeadParams)
        assert len(result.log) == 2

    def test_log_jsonl_round_trip(self, tmp_path):
        import json
        cache, qrels, pools, dev = tiny_dataset(np.random.default_rng(8))
        result = training.train(self.small_cfg(epochs=1), cache, qrels, pools, dev)
        path = tmp_path / "log.jsonl"
        training.write_log_jsonl(result.log, path)
        lines = path.read_text().splitlines()
        assert len(lines) == 1
        entry = json.loads(lines[0])
        assert set(entry) >= {"epoch", "mean_loss", "dev_map", "wall_seconds", "batches_per_sec"}


class TestBatchLossGradients:
    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(9)
        params = model.ModelParams.init(np.random.default_rng(10), 4, 3, 2)
        records = [tokrep.pool_sentences(
            make_record(rng, qid=f"q{i}", pid=f"p{i}", n=2, t=3, ends=[1, 3]))
            for i in range(6)]
        pair_records = [(records[0], records[1]), (records[2], records[3]),
                        (records[4], records[5])]

        def build():
            bound, tensors = model.bind(params, trainable=True)
            loss = training._batch_loss_graph(bound, "dmn", pair_records, 0.5, 0.0, None)
            return loss, tensors

        loss, tensors = build()
        ad.backward(loss)
        weights = dict(model.trainable_weights(params))
        flat = [(n, i) for n in weights for i in range(weights[n].size)]
        picks = np.random.default_rng(11).choice(len(flat), size=60, replace=False)
        h = 1e-5
        for k in picks:
            name, idx = flat[int(k)]
            arr = weights[name]
            orig = arr.flat[idx]
            arr.flat[idx] = orig + h
            up = float(build()[0].data)
            arr.flat[idx] = orig - h
            down = float(build()[0].data)
            arr.flat[idx] = orig
            fd = (up - down) / (2 * h)
            an = float(tensors[name].grad.flat[idx])
            assert abs(fd - an) / max(1.0, abs(fd), abs(an)) <= 1e-4, name
