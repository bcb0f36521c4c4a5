import math

import numpy as np
import pytest

from pentraj.synth.corpus import StyleParams, gen_corpus, make_styles
from pentraj.synth.net import LstmState, PenStep, SynthConfig, init_net, mdn_nll, mdn_params
from pentraj.synth.sample import _step
from pentraj.synth.train import clip_gradients, loss_and_gradients, prepare_batch, train

TINY_CONFIG = SynthConfig(
    units_per_layer=4, mixture_components=2, attention_components=2, alphabet="abc "
)


def tiny_batch(rng, n_seq=1, t_len=10, text="abca"):
    corpus = []
    for _ in range(n_seq):
        strokes = np.column_stack(
            [
                rng.standard_normal(t_len) * 0.4,
                rng.standard_normal(t_len) * 0.4,
                (rng.uniform(size=t_len) < 0.2).astype(float),
            ]
        )
        corpus.append((strokes, text, 0))
    return corpus


def finite_difference_gradients(params, config, batch, step=1e-5):
    """Central-difference oracle over every parameter entry."""
    grads = {}
    for key, value in params.items():
        g = np.zeros_like(value)
        flat = value.ravel()
        g_flat = g.ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            loss_plus, _ = loss_and_gradients(params, config, *batch)
            flat[idx] = orig - step
            loss_minus, _ = loss_and_gradients(params, config, *batch)
            flat[idx] = orig
            g_flat[idx] = (loss_plus - loss_minus) / (2.0 * step)
        grads[key] = g
    return grads


def max_relative_error(analytic, numeric):
    worst = 0.0
    for key in analytic:
        a, b = analytic[key], numeric[key]
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
        worst = max(worst, float(np.max(np.abs(a - b) / denom)))
    return worst


class TestGradients:
    def test_bptt_matches_finite_differences(self):
        rng = np.random.default_rng(21)
        net = init_net(TINY_CONFIG, seed=2)
        corpus = tiny_batch(rng, n_seq=1, t_len=10)
        batch = prepare_batch(TINY_CONFIG, corpus)
        _, analytic = loss_and_gradients(net.params, TINY_CONFIG, *batch)
        numeric = finite_difference_gradients(net.params, TINY_CONFIG, batch)
        assert max_relative_error(analytic, numeric) < 1e-4

    def test_gradcheck_with_multiple_sequences(self):
        rng = np.random.default_rng(22)
        net = init_net(TINY_CONFIG, seed=3)
        corpus = tiny_batch(rng, n_seq=2, t_len=6, text="cab")
        corpus += tiny_batch(rng, n_seq=1, t_len=9, text="ba c")
        batch = prepare_batch(TINY_CONFIG, corpus)
        _, analytic = loss_and_gradients(net.params, TINY_CONFIG, *batch)
        numeric = finite_difference_gradients(net.params, TINY_CONFIG, batch)
        assert max_relative_error(analytic, numeric) < 1e-4

    def test_batched_loss_matches_stepwise_nll(self):
        rng = np.random.default_rng(23)
        net = init_net(TINY_CONFIG, seed=4)
        corpus = tiny_batch(rng, n_seq=1, t_len=12, text="bca")
        batch = prepare_batch(TINY_CONFIG, corpus)
        loss, _ = loss_and_gradients(net.params, TINY_CONFIG, *batch)

        strokes, text, _ = corpus[0]
        onehot = TINY_CONFIG.one_hot(text)
        n = TINY_CONFIG.units_per_layer
        states = tuple(LstmState(h=np.zeros(n), c=np.zeros(n)) for _ in range(3))
        kappa = np.zeros(TINY_CONFIG.attention_components)
        window = np.zeros(TINY_CONFIG.alphabet_size)
        x = np.zeros(3)
        nlls = []
        for t in range(strokes.shape[0]):
            states, attn, window, raw = _step(net, x, states, kappa, window, onehot)
            kappa = attn.kappa
            nlls.append(mdn_nll(mdn_params(raw), PenStep(*strokes[t])))
            x = strokes[t]
        assert loss == pytest.approx(float(np.mean(nlls)), rel=1e-12)


class TestClipping:
    def test_norm_reduced_to_limit(self):
        grads = {"a": np.full(4, 10.0), "b": np.full(3, -10.0)}
        clipped, norm = clip_gradients(grads, max_norm=10.0)
        assert norm == pytest.approx(math.sqrt(700.0))
        total = math.sqrt(sum(float(np.sum(g**2)) for g in clipped.values()))
        assert total == pytest.approx(10.0)

    def test_small_gradients_untouched(self):
        grads = {"a": np.array([0.1, -0.2])}
        clipped, _ = clip_gradients(grads, max_norm=10.0)
        assert np.array_equal(clipped["a"], grads["a"])


class TestTrain:
    def test_descent_on_small_corpus(self):
        styles = [
            StyleParams(slant=-0.3, scale=0.8, speed=1.0, jitter=0.01),
            StyleParams(slant=0.3, scale=1.2, speed=1.0, jitter=0.01),
        ]
        corpus = gen_corpus(styles, chars_per_word=3, words=10, seed=31, alphabet="abc ")
        assert len(corpus) == 20
        net = init_net(TINY_CONFIG, seed=5)
        trained, curve = train(net, corpus, epochs=200, learning_rate=0.05)
        assert len(curve) == 200
        assert all(math.isfinite(v) for v in curve)
        assert curve[-1] < curve[0]

    def test_training_is_deterministic(self):
        styles = make_styles(2)
        corpus = gen_corpus(styles, chars_per_word=3, words=2, seed=32, alphabet="abcdefghij ")
        config = SynthConfig(units_per_layer=6, mixture_components=2, attention_components=2)
        net = init_net(config, seed=6)
        t1, c1 = train(net, corpus, epochs=5, learning_rate=0.05)
        t2, c2 = train(net, corpus, epochs=5, learning_rate=0.05)
        assert c1 == c2
        for key in t1.params:
            assert np.array_equal(t1.params[key], t2.params[key])

    def test_does_not_mutate_input_net(self):
        rng = np.random.default_rng(24)
        net = init_net(TINY_CONFIG, seed=7)
        before = {k: v.copy() for k, v in net.params.items()}
        train(net, tiny_batch(rng, n_seq=2, t_len=5), epochs=3, learning_rate=0.1)
        for key in before:
            assert np.array_equal(net.params[key], before[key])

    def test_divergence_error_names_epoch(self):
        rng = np.random.default_rng(25)
        net = init_net(TINY_CONFIG, seed=8)
        net.params["out_b"][0] = np.nan
        with pytest.raises(ValueError, match="divergence at epoch 0"):
            train(net, tiny_batch(rng), epochs=3, learning_rate=0.1)

    def test_empty_corpus_rejected(self):
        net = init_net(TINY_CONFIG, seed=9)
        with pytest.raises(ValueError, match="corpus is empty"):
            train(net, [], epochs=1, learning_rate=0.1)

    def test_short_sequence_rejected(self):
        net = init_net(TINY_CONFIG, seed=10)
        with pytest.raises(ValueError, match="length >= 2"):
            train(net, [(np.zeros((1, 3)), "a", 0)], epochs=1, learning_rate=0.1)

    def test_adam_optimizer_descends(self):
        rng = np.random.default_rng(26)
        net = init_net(TINY_CONFIG, seed=11)
        corpus = tiny_batch(rng, n_seq=4, t_len=12)
        _, curve = train(net, corpus, epochs=30, learning_rate=0.01, optimizer="adam")
        assert curve[-1] < curve[0]
