"""Feature hashing, normalization, gradients, training, and checkpoints."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trieval.docids import DocidSequence
from trieval.errors import ConfigError, ScorerError
from trieval.scorer import (
    LinearScorer,
    ScorerConfig,
    dump_loss_trace,
    featurize,
    input_features,
    load_loss_trace,
    step_features,
)
from trieval.training import TrainingPair

SMALL = ScorerConfig(feature_dim=4096, position_buckets=4, hash_seed=7)


def pair(words: str, tokens: tuple[int, ...], key: str = "d") -> TrainingPair:
    return TrainingPair(tuple(words.split()), DocidSequence(tokens, key), "supervised")


class TestFeaturize:
    def test_deterministic(self):
        a = featurize(("x", "y"), (3,), seed=1, dim=1024, positions=4)
        b = featurize(("x", "y"), (3,), seed=1, dim=1024, positions=4)
        assert a == b

    def test_empty_input_empty_prefix_is_start_state(self):
        feats = featurize((), (), seed=1, dim=1 << 18, positions=4)
        expected = step_features((), seed=1, dim=1 << 18, positions=4)
        assert feats == expected
        assert sum(feats.values()) == 2  # start marker + position 0

    def test_word_order_changes_bigrams(self):
        a = input_features(("red", "fish"), seed=1, dim=1 << 18)
        b = input_features(("fish", "red"), seed=1, dim=1 << 18)
        assert a != b

    def test_indices_in_range(self):
        feats = featurize(tuple("abcdefg"), (1, 2, 3), seed=9, dim=64, positions=4)
        assert all(0 <= idx < 64 for idx in feats)

    def test_position_saturates_at_bucket_count(self):
        # prefixes of length 10 and 11 both land in position bucket 3
        a = step_features(tuple(range(10)), seed=1, dim=1 << 18, positions=4)
        b = step_features(tuple(range(11)), seed=1, dim=1 << 18, positions=4)
        c = step_features((0, 1), seed=1, dim=1 << 18, positions=4)
        shared = set(a) & set(b)
        assert len(shared) == 1  # the saturated position feature
        assert not shared & set(c)  # position 2 hashes elsewhere


class TestNextLogprobs:
    def test_zero_weights_uniform_exact(self):
        scorer = LinearScorer(vocab_size=7, config=SMALL)
        logprobs = scorer.next_logprobs(("q",), ())
        assert logprobs.shape == (7,)
        assert all(lp == -np.log(7) for lp in logprobs)

    def test_normalized_after_training(self):
        scorer = LinearScorer(vocab_size=5, config=SMALL)
        scorer.train([pair("alpha beta", (0, 2))], epochs=3, lr=0.1, seed=0)
        logprobs = scorer.next_logprobs(("alpha", "beta"), (0,))
        assert math.isclose(np.exp(logprobs).sum(), 1.0, abs_tol=1e-6)

    def test_prefix_token_out_of_range_rejected(self):
        scorer = LinearScorer(vocab_size=4, config=SMALL)
        with pytest.raises(ConfigError):
            scorer.next_logprobs(("q",), (3,))  # 3 is the sentinel
        with pytest.raises(ConfigError):
            scorer.next_logprobs(("q",), (9,))

    @settings(max_examples=30, deadline=None)
    @given(
        st.lists(st.sampled_from("abcdef"), max_size=6).map(tuple),
        st.lists(st.integers(min_value=0, max_value=8), max_size=4).map(tuple),
        st.integers(min_value=0, max_value=2**31),
    )
    def test_normalization_property(self, words, prefix, seed):
        scorer = LinearScorer(vocab_size=10, config=ScorerConfig(512, 4, 3))
        rng = np.random.default_rng(seed)
        for idx in rng.integers(0, 512, size=30):
            scorer.set_weight(int(idx), int(rng.integers(0, 10)), float(rng.normal() * 3))
        logprobs = scorer.next_logprobs(words, prefix)
        assert math.isclose(float(np.exp(logprobs).sum()), 1.0, abs_tol=1e-6)
        assert np.isfinite(logprobs).all()


class TestLossAndGradient:
    def test_zero_scorer_pair_loss_exact(self):
        for vocab_size, tokens in ((9, (0, 3, 5)), (33, (1,)), (5, (0, 1, 2, 3))):
            scorer = LinearScorer(vocab_size=vocab_size, config=SMALL)
            loss = scorer.pair_loss(("some", "query"), tokens)
            assert loss == (len(tokens) + 1) * math.log(vocab_size)

    def test_sequence_score_is_negative_pair_loss(self):
        scorer = LinearScorer(vocab_size=6, config=SMALL)
        scorer.train([pair("a b c", (1, 4))], epochs=2, lr=0.05, seed=1)
        score = scorer.sequence_score(("a", "c"), (1, 4))
        loss = scorer.pair_loss(("a", "c"), (1, 4))
        assert score == -loss
        assert score < 0

    def test_gradient_matches_finite_differences(self):
        scorer = LinearScorer(vocab_size=8, config=ScorerConfig(256, 4, 5))
        rng = np.random.default_rng(0)
        for idx in rng.integers(0, 256, size=40):
            scorer.set_weight(int(idx), int(rng.integers(0, 8)), float(rng.normal()))
        words, tokens = ("deep", "blue", "sea"), (2, 6, 1)
        grad = scorer.pair_gradient(words, tokens)
        h = 1e-5
        checked = 0
        for feature_idx in sorted(grad)[:10]:
            for token_id in (0, 3, 7):
                analytic = float(grad[feature_idx][token_id])
                if abs(analytic) < 1e-6:
                    continue
                original = scorer.get_weight(feature_idx, token_id)
                scorer.set_weight(feature_idx, token_id, original + h)
                up = scorer.pair_loss(words, tokens)
                scorer.set_weight(feature_idx, token_id, original - h)
                down = scorer.pair_loss(words, tokens)
                scorer.set_weight(feature_idx, token_id, original)
                numeric = (up - down) / (2 * h)
                assert abs(analytic - numeric) <= 1e-4 * max(abs(analytic), abs(numeric))
                checked += 1
        assert checked >= 20

    def test_training_on_pair_raises_its_first_token_prob(self):
        scorer = LinearScorer(vocab_size=3, config=SMALL)
        words = ("only", "query")
        before = scorer.next_logprobs(words, ())[1]
        scorer.train([pair("only query", (1,))], epochs=1, lr=0.01, seed=0)
        after = scorer.next_logprobs(words, ())[1]
        assert after > before


class TestTrain:
    def test_single_pair_memorized(self):
        scorer = LinearScorer(vocab_size=12, config=SMALL)
        p = pair("find this document", (3, 7))
        trace = scorer.train([p], epochs=60, lr=0.05, seed=2)
        assert trace[-1] < 0.1
        assert trace[0] > trace[-1]

    def test_identical_runs_identical_weights(self):
        pairs = [pair("a b", (0,)), pair("c d", (1, 2)), pair("e", (2,))]
        runs = []
        for _ in range(2):
            scorer = LinearScorer(vocab_size=5, config=SMALL)
            scorer.train(pairs, epochs=3, lr=1e-3, seed=42)
            runs.append(scorer.to_bytes())
        assert runs[0] == runs[1]

    def test_different_seed_different_shuffle(self):
        pairs = [pair(f"w{i}", (i % 4,)) for i in range(6)]
        a = LinearScorer(vocab_size=5, config=SMALL)
        a.train(pairs, epochs=2, lr=1e-2, seed=1)
        b = LinearScorer(vocab_size=5, config=SMALL)
        b.train(pairs, epochs=2, lr=1e-2, seed=2)
        assert a.to_bytes() != b.to_bytes()

    def test_out_of_vocab_target_fatal_names_document(self):
        scorer = LinearScorer(vocab_size=4, config=SMALL)
        bad = pair("q", (3,), key="bad-doc")  # 3 is the sentinel slot
        with pytest.raises(ScorerError, match="bad-doc"):
            scorer.train([bad], epochs=1, lr=1e-3, seed=0)

    def test_empty_pairs_rejected(self):
        scorer = LinearScorer(vocab_size=4, config=SMALL)
        with pytest.raises(ScorerError):
            scorer.train([], epochs=1, lr=1e-3, seed=0)

    def test_bad_lr_rejected(self):
        scorer = LinearScorer(vocab_size=4, config=SMALL)
        with pytest.raises(ValueError):
            scorer.train([pair("q", (0,))], epochs=1, lr=0.0, seed=0)

    def test_mean_loss_decreases_on_learnable_data(self):
        pairs = [
            pair("red apple orchard", (0,)),
            pair("blue whale ocean", (1,)),
            pair("green forest moss", (2,)),
        ]
        scorer = LinearScorer(vocab_size=4, config=SMALL)
        trace = scorer.train(pairs, epochs=10, lr=0.05, seed=0)
        assert trace[-1] < trace[0]


class TestCheckpoint:
    def test_roundtrip_preserves_scores(self, tmp_path):
        scorer = LinearScorer(vocab_size=6, config=SMALL)
        scorer.train([pair("x y z", (0, 4))], epochs=4, lr=0.02, seed=3)
        path = tmp_path / "scorer.bin"
        scorer.save(path)
        loaded = LinearScorer.load(path)
        assert loaded.vocab_size == 6
        assert loaded.config == scorer.config
        query, prefix = ("x", "z"), (0,)
        assert np.array_equal(
            loaded.next_logprobs(query, prefix), scorer.next_logprobs(query, prefix)
        )
        assert loaded.weights_digest() == scorer.weights_digest()

    def test_truncated_checkpoint_rejected(self):
        scorer = LinearScorer(vocab_size=6, config=SMALL)
        scorer.set_weight(1, 1, 1.0)
        data = scorer.to_bytes()
        with pytest.raises(ScorerError):
            LinearScorer.from_bytes(data[:-4])

    def test_digest_tracks_weight_changes(self):
        scorer = LinearScorer(vocab_size=6, config=SMALL)
        before = scorer.weights_digest()
        scorer.set_weight(10, 2, 0.5)
        assert scorer.weights_digest() != before


class TestLossTraceFile:
    def test_roundtrip(self, tmp_path):
        path = tmp_path / "loss.csv"
        dump_loss_trace(path, [2.5, 1.25, 0.8125])
        assert load_loss_trace(path) == [2.5, 1.25, 0.8125]
        first = path.read_text(encoding="utf-8").splitlines()
        assert first[0] == "epoch,mean_loss"
        assert first[1].startswith("1,")
