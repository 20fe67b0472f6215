"""Loss and metric tests with hand-computed frozen values."""

import math

import numpy as np
import pytest

from stlab import autodiff as ad
from stlab import metrics
from stlab.errors import ShapeError

RNG_SEED = 20240819


class TestCrossEntropy:
    def test_certain_prediction_near_zero(self):
        logits = ad.Tensor(np.array([[50.0, 0.0, 0.0]]))
        loss = metrics.cross_entropy(logits, [0])
        assert loss.item() < 1e-12

    def test_uniform_is_log_vocab(self):
        logits = ad.Tensor(np.zeros((3, 4)))
        loss = metrics.cross_entropy(logits, [0, 1, 2])
        np.testing.assert_allclose(loss.item(), math.log(4.0), atol=1e-12)

    def test_mask_removes_position_exactly(self):
        rng = np.random.default_rng(RNG_SEED)
        logits = ad.Tensor(rng.normal(size=(3, 5)))
        targets = [1, 2, 3]
        masked = metrics.cross_entropy(logits, targets, mask=[1, 0, 1]).item()
        only = metrics.cross_entropy(
            ad.Tensor(logits.data[[0, 2]]), [1, 3]
        ).item()
        np.testing.assert_allclose(masked, only, atol=1e-12)

    def test_all_masked_raises(self):
        with pytest.raises(ShapeError):
            metrics.cross_entropy(ad.Tensor(np.zeros((2, 3))), [0, 1], mask=[0, 0])

    def test_grad_check(self):
        rng = np.random.default_rng(RNG_SEED)
        params = {"logits": rng.normal(size=(4, 5))}

        def loss(p):
            return metrics.cross_entropy(p["logits"], [1, 0, 4, 2], mask=[1, 1, 0, 1])

        assert ad.grad_check(loss, params) <= 1e-6


class TestPooling:
    def test_single_row(self):
        s = ad.Tensor(np.array([[3.0, 4.0]]))
        np.testing.assert_array_equal(metrics.pool_encoder_states(s).data, [3.0, 4.0])

    def test_hand_mean(self):
        s = ad.Tensor(np.array([[2.0, 0.0], [0.0, 2.0]]))
        np.testing.assert_array_equal(
            metrics.pool_encoder_states(s, valid_len=2).data, [1.0, 1.0]
        )

    def test_padding_ignored(self):
        rng = np.random.default_rng(RNG_SEED)
        body = rng.normal(size=(3, 4))
        padded = np.vstack([body, rng.normal(size=(2, 4)) * 100])
        a = metrics.pool_encoder_states(ad.Tensor(body)).data
        b = metrics.pool_encoder_states(ad.Tensor(padded), valid_len=3).data
        np.testing.assert_array_equal(a, b)

    def test_zero_valid_len_raises(self):
        with pytest.raises(ShapeError):
            metrics.pool_encoder_states(ad.Tensor(np.ones((2, 2))), valid_len=0)


class TestSimilarityLoss:
    def test_identical_is_zero(self):
        v = ad.Tensor(np.array([1.0, -2.0, 3.0]))
        assert metrics.similarity_loss(v, v).item() == 0.0

    def test_hand_value(self):
        a = ad.Tensor(np.array([1.0, 0.0]))
        b = ad.Tensor(np.array([0.0, 1.0]))
        np.testing.assert_allclose(metrics.similarity_loss(a, b).item(), 100.0, atol=1e-12)

    def test_symmetry_and_nonnegative(self):
        rng = np.random.default_rng(RNG_SEED)
        a = ad.Tensor(rng.normal(size=8))
        b = ad.Tensor(rng.normal(size=8))
        ab = metrics.similarity_loss(a, b).item()
        ba = metrics.similarity_loss(b, a).item()
        assert ab == ba
        assert ab > 0.0

    def test_width_mismatch(self):
        with pytest.raises(ShapeError):
            metrics.similarity_loss(ad.Tensor(np.ones(2)), ad.Tensor(np.ones(3)))

    def test_grad_check_both_sides(self):
        rng = np.random.default_rng(RNG_SEED)
        params = {"a": rng.normal(size=6), "b": rng.normal(size=6)}

        def loss(p):
            return metrics.similarity_loss(p["a"], p["b"])

        assert ad.grad_check(loss, params) <= 1e-6


class TestWer:
    def test_exact_match(self):
        assert metrics.wer(["a", "b"], ["a", "b"]) == 0.0

    def test_one_deletion(self):
        np.testing.assert_allclose(metrics.wer("a b c".split(), "a c".split()), 1 / 3)

    def test_sub_plus_insert(self):
        assert metrics.wer(["a"], ["b", "c"]) == 2.0

    def test_empty_ref_raises(self):
        with pytest.raises(ShapeError):
            metrics.wer([], ["a"])

    def test_relabeling_invariance(self):
        rng = np.random.default_rng(RNG_SEED)
        words = ["w%d" % i for i in range(5)]
        for _ in range(20):
            ref = [words[i] for i in rng.integers(0, 5, size=6)]
            hyp = [words[i] for i in rng.integers(0, 5, size=4)]
            relabel = {w: "x%s" % w for w in words}
            a = metrics.wer(ref, hyp)
            b = metrics.wer([relabel[w] for w in ref], [relabel[w] for w in hyp])
            assert a == b

    def test_zero_iff_equal(self):
        assert metrics.wer(["a", "b"], ["a", "c"]) > 0.0


class TestBleu:
    def test_perfect_match(self):
        corpus = [["a", "b", "c", "d", "e"], ["x", "y", "z", "w"]]
        np.testing.assert_allclose(metrics.bleu(corpus, corpus), 100.0, atol=1e-9)

    def test_empty_hypotheses(self):
        assert metrics.bleu([["a", "b"]], [[]]) == 0.0

    def test_clipped_repeat_case(self):
        # hyp 'the the the' vs ref 'the cat': p1 = 1/3 clipped,
        # smoothed p2 = 1/3, p3 = 1/2, p4 = 1, brevity penalty 1
        got = metrics.bleu([["the", "cat"]], [["the", "the", "the"]])
        np.testing.assert_allclose(got, 48.549177170732335, atol=1e-9)

    def test_brevity_penalty(self):
        # hyp is a 2-word prefix of a 4-word ref: precisions 1 or smoothed-1
        ref = [["a", "b", "c", "d"]]
        hyp = [["a", "b"]]
        got = metrics.bleu(ref, hyp)
        p2 = (1 + 1) / (1 + 1)  # one matching bigram
        p3 = 1.0
        p4 = 1.0
        expect = 100 * math.exp(1 - 4 / 2) * (1.0 * p2 * p3 * p4) ** 0.25
        np.testing.assert_allclose(got, expect, atol=1e-9)

    def test_count_mismatch(self):
        with pytest.raises(ShapeError):
            metrics.bleu([["a"]], [["a"], ["b"]])

    def test_range(self):
        rng = np.random.default_rng(RNG_SEED)
        vocab = ["u", "v", "w"]
        for _ in range(25):
            refs = [[vocab[i] for i in rng.integers(0, 3, size=rng.integers(1, 6))]]
            hyps = [[vocab[i] for i in rng.integers(0, 3, size=rng.integers(0, 6))]]
            score = metrics.bleu(refs, hyps)
            assert 0.0 <= score <= 100.0
