import numpy as np
import pytest

from helpers import make_vocab, random_model, random_partition, zeroed
from mlbl.clustering import ClassPartition
from mlbl.corpus import PAD_ID, UNK_ID, build_vocabulary
from mlbl.errors import ModelFormatError
from mlbl.model import (LanguageModel, ModelConfig, NormalizerCache, Querier)
from mlbl.morphology import build_factorization
from mlbl.training import init_params


def word_level_model(n_types=5, d=2, n=3, class_based=False, num_classes=2, seed=0):
    cfg = ModelConfig(n=n, d=d, class_based=class_based)
    vocab = make_vocab(n_types, seed=seed)
    fv, wf = build_factorization(vocab, None)
    partition = random_partition(n_types, num_classes, seed) if class_based else None
    params = init_params(cfg, vocab, fv, wf, partition, init_sigma=0.3, seed=seed)
    return LanguageModel(cfg, vocab, fv, wf, params, partition)


class TestPredict:
    def test_identity_transform(self):
        m = word_level_model(n_types=5, d=3, n=2)
        m.params.C[0] = np.eye(3)
        m.recompile()
        assert np.array_equal(m.predict([2]), m.params.Q[2])

    def test_zero_context_vectors(self):
        m = zeroed(word_level_model(n_types=5, d=3, n=3))
        assert np.array_equal(m.predict([2, 3]), np.zeros(3))

    def test_hand_linear_algebra(self):
        m = word_level_model(n_types=5, d=2, n=3)
        m.params.Qf[2] = [1.0, 0.0]
        m.params.Qf[3] = [0.0, 1.0]
        m.params.C[0] = np.eye(2)
        m.params.C[1] = 2.0 * np.eye(2)
        m.recompile()
        assert np.array_equal(m.predict([2, 3]), np.array([1.0, 2.0]))

    def test_context_length_checked(self):
        m = word_level_model(n=3)
        with pytest.raises(ValueError):
            m.predict([2])


class TestScores:
    def test_bias_only(self):
        m = word_level_model(d=3)
        m.params.b[2] = 0.75
        assert m.score_word(np.zeros(3), 2) == 0.75

    def test_dot_plus_bias(self):
        m = word_level_model(d=2)
        m.params.Rf[2] = [2.0, 3.0]
        m.params.b[2] = 0.5
        m.recompile()
        assert m.score_word(np.array([1.0, 1.0]), 2) == 5.5

    def test_pad_never_scored(self):
        m = word_level_model()
        with pytest.raises(ValueError):
            m.score_word(np.zeros(2), PAD_ID)

    def test_class_score(self):
        m = word_level_model(class_based=True)
        m.params.S[1] = [3.0, 9.0]
        m.params.t[1] = -1.0
        assert m.score_class(np.array([1.0, 0.0]), 1) == 2.0

    def test_single_class_softmax_is_one(self):
        m = word_level_model(n_types=6, class_based=True, num_classes=1)
        p = m.predict([2, 3])
        tau = m.score_class(p, 0)
        assert tau - m._log_norm_classes(p, None) == 0.0


class TestLogProbFull:
    def test_uniform_scores(self):
        # 10 scorable words with equal scores
        m = zeroed(word_level_model(n_types=11, d=2, n=2))
        lp = m.log_prob_full([2], 5)
        assert lp == pytest.approx(np.log(1.0 / 10.0), abs=1e-14)

    def test_two_word_vocab(self):
        v = build_vocabulary([["a", "a"]], kappa=0.0, seed=0)
        fv, wf = build_factorization(v, None)
        cfg = ModelConfig(n=2, d=2)
        params = init_params(cfg, v, fv, wf, None, 0.2, seed=0)
        m = zeroed(LanguageModel(cfg, v, fv, wf, params))
        # scorable words are <unk> and "a", both with score 0
        assert m.log_prob_full([PAD_ID], v.id_of["a"]) == pytest.approx(np.log(0.5), abs=1e-15)

    def test_sums_to_one(self):
        m = word_level_model(n_types=7, d=3, n=3, seed=4)
        total = 0.0
        for w in m.scorable_ids:
            total += np.exp(m.log_prob_full([2, 3], int(w)))
        assert total == pytest.approx(1.0, abs=1e-12)


class TestLogProbClassed:
    def test_single_class_equals_full_exactly(self):
        vocab = make_vocab(9, seed=2)
        fv, wf = build_factorization(vocab, None)
        part = ClassPartition(np.zeros(9, dtype=np.int64))
        cfg_c = ModelConfig(n=3, d=4, class_based=True)
        params_c = init_params(cfg_c, vocab, fv, wf, part, 0.4, seed=5)
        classed = LanguageModel(cfg_c, vocab, fv, wf, params_c, part)
        cfg_f = ModelConfig(n=3, d=4, class_based=False)
        params_f = init_params(cfg_f, vocab, fv, wf, None, 0.4, seed=5)
        flat = LanguageModel(cfg_f, vocab, fv, wf, params_f)
        rng = np.random.default_rng(0)
        for _ in range(50):
            ctx = rng.integers(0, 9, size=2)
            w = int(rng.choice(classed.scorable_ids))
            assert classed.log_prob_classed(ctx, w) == flat.log_prob_full(ctx, w)

    def test_singleton_classes_reduce_to_class_softmax(self):
        n_types = 7
        vocab = make_vocab(n_types, seed=1)
        fv, wf = build_factorization(vocab, None)
        part = ClassPartition(np.arange(n_types, dtype=np.int64))
        cfg = ModelConfig(n=2, d=3, class_based=True)
        params = init_params(cfg, vocab, fv, wf, part, 0.4, seed=2)
        m = LanguageModel(cfg, vocab, fv, wf, params, part)
        p = m.predict([3])
        for w in m.scorable_ids:
            w = int(w)
            c = int(m.class_of[w])
            expected_class_term = m.score_class(p, c) - m._log_norm_classes(p, None)
            assert m.log_prob_classed([3], w) == expected_class_term

    def test_sums_to_one_over_vocabulary(self):
        m = word_level_model(n_types=9, d=3, n=3, class_based=True, num_classes=3, seed=6)
        total = sum(np.exp(m.log_prob_classed([2, 4], int(w))) for w in m.scorable_ids)
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_classless_model_rejects_classed_query(self):
        m = word_level_model()
        with pytest.raises(ModelFormatError):
            m.log_prob_classed([2, 3], 2)


class TestFullDistribution:
    def test_uniform_parameters(self):
        m = zeroed(word_level_model(n_types=8, n=2))
        dist = m.full_distribution([2])
        scorable = m.scorable_ids
        np.testing.assert_allclose(dist[scorable], 1.0 / len(scorable), atol=1e-15)
        assert dist[PAD_ID] == 0.0

    def test_matches_log_prob(self):
        for variant in ("lbl", "clbl", "lbl++", "clbl++"):
            m = random_model(variant, seed=8)
            ctx = [2, 5]
            dist = m.full_distribution(ctx)
            for w in (UNK_ID, 4, 7):
                assert dist[w] == pytest.approx(np.exp(m.log_prob(ctx, w)), rel=1e-12)

    def test_shift_invariance(self):
        m = random_model("clbl++", seed=9)
        ctx = [3, 6]
        base = m.full_distribution(ctx)
        m.params.b += 3.7
        m.params.t -= 1.3
        shifted = m.full_distribution(ctx)
        np.testing.assert_allclose(shifted, base, atol=1e-12)
        assert np.argmax(shifted) == np.argmax(base)

    def test_normalization_all_variants(self):
        rng = np.random.default_rng(10)
        for variant in ("lbl", "lbl+c", "lbl+o", "lbl++",
                        "clbl", "clbl+c", "clbl+o", "clbl++"):
            m = random_model(variant, seed=11)
            for _ in range(10):
                ctx = rng.integers(0, 30, size=2)
                assert abs(m.full_distribution(ctx).sum() - 1.0) <= 1e-10


class TestVariantReduction:
    def test_identity_factorization_reduces_to_word_level(self):
        vocab = make_vocab(12, seed=3)
        fv, wf = build_factorization(vocab, None)  # identity map
        part = random_partition(12, 3, seed=4)
        shared = dict(n=3, d=4)
        cfg_pp = ModelConfig(class_based=True, context_additive=True,
                             output_additive=True, **shared)
        cfg_w = ModelConfig(class_based=True, **shared)
        params_pp = init_params(cfg_pp, vocab, fv, wf, part, 0.3, seed=7)
        params_w = init_params(cfg_w, vocab, fv, wf, part, 0.3, seed=7)
        m_pp = LanguageModel(cfg_pp, vocab, fv, wf, params_pp, part)
        m_w = LanguageModel(cfg_w, vocab, fv, wf, params_w, part)
        rng = np.random.default_rng(1)
        for _ in range(100):
            ctx = rng.integers(0, 12, size=2)
            w = int(rng.choice(m_pp.scorable_ids))
            assert m_pp.log_prob(ctx, w) == m_w.log_prob(ctx, w)


class TestNormalizerCache:
    def test_cache_transparency_exact(self):
        m = random_model("clbl++", n_types=25, seed=13)
        rng = np.random.default_rng(2)
        queries = [(tuple(rng.integers(0, 25, size=2)), int(rng.choice(m.scorable_ids)))
                   for _ in range(60)]
        queries = queries * 3
        rng.shuffle(queries)
        cached = Querier(m, use_cache=True)
        uncached = Querier(m, use_cache=False)
        for ctx, w in queries:
            assert cached.log_prob(list(ctx), w) == uncached.log_prob(list(ctx), w)
        assert cached.cache.hits > 0

    def test_cached_value_matches_fresh_computation(self):
        m = random_model("clbl", n_types=20, seed=14)
        cache = NormalizerCache()
        ctx = [2, 3]
        m.log_prob_classed(ctx, 4, cache)
        p = m.predict(ctx)
        key = (tuple(ctx), "class")
        assert cache.store[key] == m._log_norm_classes(p, None)

    def test_operation_counters(self):
        m = random_model("clbl", n_types=24, num_classes=4, seed=15)
        q = Querier(m, use_cache=True)
        ctx, w = [3, 5], 7
        c = int(m.class_of[w])
        size_c = int(m.members_indptr[c + 1] - m.members_indptr[c])
        n_classes = len(m.scorable_classes)
        q.log_prob(ctx, w)
        cold_ops = q.stats.score_ops
        assert cold_ops == n_classes + size_c + 2
        q.stats.reset()
        q.log_prob(ctx, w)
        assert q.stats.score_ops == 2
        assert q.stats.score_ops <= size_c + 1


class TestOovContextComposition:
    def _fixture(self):
        from mlbl.morphology import PostHocMap

        vocab = build_vocabulary([["redo", "undo", "doing"]], kappa=0.0, seed=0)
        segs = {"redo": ["re|prefix", "do|stem"],
                "undo": ["un|prefix", "do|stem"],
                "doing": ["do|stem", "ing|suffix"]}
        fv, wf = build_factorization(vocab, segs)
        cfg = ModelConfig(n=2, d=3, context_additive=True, output_additive=True)
        params = init_params(cfg, vocab, fv, wf, None, 0.4, seed=1)
        m = LanguageModel(cfg, vocab, fv, wf, params)
        post = PostHocMap(fv, {"redoing": ["re|prefix", "do|stem", "ing|suffix"]})
        return m, post

    def test_unknown_context_defaults_to_unk(self):
        m, _ = self._fixture()
        q = Querier(m)
        scored = q.score_sentence(["redoing", "undo"])
        # "redoing" is OOV: as context it behaves exactly like <unk>
        expected = m.log_prob([UNK_ID], m.vocab.id_of["undo"])
        assert scored[1][1] == expected

    def test_composed_context_differs_and_uses_known_factors(self):
        m, post = self._fixture()
        q = Querier(m, context_post_map=post)
        scored = q.score_sentence(["redoing", "undo"])
        w = m.vocab.id_of["undo"]
        from mlbl.morphology import compose_vector

        items = post.mu_prime("redoing")
        vec = compose_vector(m.params.Qf, items)
        p = vec @ m.params.C[0]
        from mlbl.model import PredictionState

        state = PredictionState(p, ("oov", "redoing"))
        assert scored[1][1] == m.log_prob_from_state(state, w)
        assert scored[1][1] != q_default_logprob(m, w)

    def test_oov_with_no_known_factors_falls_back_to_unk(self):
        m, post = self._fixture()
        q = Querier(m, context_post_map=post)
        scored = q.score_sentence(["zzz", "undo"])
        expected = m.log_prob([UNK_ID], m.vocab.id_of["undo"])
        assert scored[1][1] == expected


def q_default_logprob(m, w):
    return m.log_prob([UNK_ID], w)


class TestBatchedLogprobs:
    def test_matches_query_path(self):
        for variant in ("clbl++", "lbl++", "clbl", "lbl"):
            m = random_model(variant, n_types=20, seed=17)
            rng = np.random.default_rng(3)
            ctx = rng.integers(0, 20, size=(40, 2))
            tgt = np.asarray(rng.choice(m.scorable_ids, size=40), dtype=np.int64)
            batched = m.logprobs_batch(ctx, tgt)
            for i in range(40):
                single = m.log_prob(list(ctx[i]), int(tgt[i]))
                assert batched[i] == pytest.approx(single, rel=1e-10, abs=1e-12)
