import math

import mpmath as mp
import numpy as np
import pytest

from pentraj.synth.net import (
    AttentionState,
    LstmState,
    MixtureParams,
    PenStep,
    SynthConfig,
    SynthNet,
    attention_step,
    attention_window,
    init_net,
    lstm_step,
    mdn_nll,
    mdn_params,
)


def scalar_lstm_oracle(wx, wh, b, x, h_prev, c_prev):
    """Independent unit-by-unit evaluation of the gate equations with
    plain Python floats."""
    n = len(h_prev)

    def sig(v):
        return 1.0 / (1.0 + math.exp(-v))

    z = [sum(wx[r][j] * x[j] for j in range(len(x)))
         + sum(wh[r][j] * h_prev[j] for j in range(n))
         + b[r]
         for r in range(4 * n)]
    h_out, c_out = [], []
    for u in range(n):
        gi = sig(z[u])
        gf = sig(z[n + u])
        gg = math.tanh(z[2 * n + u])
        go = sig(z[3 * n + u])
        c_new = gf * c_prev[u] + gi * gg
        c_out.append(c_new)
        h_out.append(go * math.tanh(c_new))
    return h_out, c_out


class TestLstmStep:
    def test_all_zero_parameters(self):
        n, d = 3, 4
        params = (np.zeros((4 * n, d)), np.zeros((4 * n, n)), np.zeros(4 * n))
        state = LstmState(h=np.zeros(n), c=np.zeros(n))
        h, new = lstm_step(params, np.array([1.0, -2.0, 0.5, 3.0]), state)
        assert np.array_equal(h, np.zeros(n))
        assert np.array_equal(new.c, np.zeros(n))

    def test_saturated_gates_preserve_cell(self):
        n, d = 1, 2
        b = np.zeros(4 * n)
        b[0] = -50.0   # input gate shut
        b[1] = 50.0    # forget gate open
        params = (np.zeros((4 * n, d)), np.zeros((4 * n, n)), b)
        state = LstmState(h=np.zeros(n), c=np.array([1.0]))
        _, new = lstm_step(params, np.array([0.3, -0.7]), state)
        assert abs(new.c[0] - 1.0) <= 1e-12

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(3)
        n, d = 2, 3
        wx = rng.standard_normal((4 * n, d))
        wh = rng.standard_normal((4 * n, n))
        b = rng.standard_normal(4 * n)
        x = rng.standard_normal(d)
        state = LstmState(h=rng.standard_normal(n), c=rng.standard_normal(n))
        h, new = lstm_step((wx, wh, b), x, state)
        h_o, c_o = scalar_lstm_oracle(wx.tolist(), wh.tolist(), b.tolist(),
                                      x.tolist(), state.h.tolist(), state.c.tolist())
        assert np.allclose(h, h_o, atol=1e-14)
        assert np.allclose(new.c, c_o, atol=1e-14)
        assert np.array_equal(h, new.h)

    def test_batched_matches_loop(self):
        rng = np.random.default_rng(4)
        n, d, batch = 3, 5, 4
        params = tuple(rng.standard_normal(s) for s in [(4 * n, d), (4 * n, n), (4 * n,)])
        xs = rng.standard_normal((batch, d))
        state = LstmState(h=rng.standard_normal((batch, n)), c=rng.standard_normal((batch, n)))
        h_batch, _ = lstm_step(params, xs, state)
        for i in range(batch):
            h_i, _ = lstm_step(params, xs[i], LstmState(h=state.h[i], c=state.c[i]))
            assert np.allclose(h_batch[i], h_i, atol=1e-15)

    def test_shape_mismatch(self):
        params = (np.zeros((8, 3)), np.zeros((8, 2)), np.zeros(8))
        with pytest.raises(ValueError, match="input size"):
            lstm_step(params, np.zeros(5), LstmState(h=np.zeros(2), c=np.zeros(2)))


def one_hot(text, alphabet):
    return SynthConfig(alphabet=alphabet).one_hot(text)


class TestAttention:
    def test_sharply_peaked_window(self):
        charseq = one_hot("abcda", "abcd ")
        phi, window = attention_window(
            np.array([1.0]), np.array([1000.0]), np.array([2.0]), charseq
        )
        assert phi[2] == 1.0
        off = np.delete(phi, 2)
        assert np.all(off < 1e-300)
        assert np.array_equal(window, charseq[2])

    def test_direct_formula_three_positions(self):
        charseq = one_hot("abc", "abc")
        phi, _ = attention_window(np.array([1.0]), np.array([0.25]), np.array([1.0]), charseq)
        expected = np.array([math.exp(-0.25), 1.0, math.exp(-0.25)])
        assert np.max(np.abs(phi - expected)) <= 1e-12

    def test_centers_never_decrease(self):
        rng = np.random.default_rng(5)
        k, n = 3, 6
        charseq = one_hot("abcd", "abcd ")
        for _ in range(50):
            w = rng.standard_normal((3 * k, n)) * 3.0
            b = rng.standard_normal(3 * k) * 3.0
            kappa_prev = np.abs(rng.standard_normal(k))
            _, state = attention_step((w, b), rng.standard_normal(n), kappa_prev, charseq)
            assert np.all(state.kappa >= kappa_prev)

    def test_window_blends_characters(self):
        charseq = one_hot("ab", "ab")
        phi, window = attention_window(
            np.array([1.0]), np.array([0.5]), np.array([0.5]), charseq
        )
        assert window[0] == pytest.approx(window[1])
        assert np.all(phi >= 0.0)


class TestMdnParams:
    def test_all_zero_raw_vector(self):
        params = mdn_params(np.zeros(13))  # M=2
        assert params.e == 0.5
        assert np.allclose(params.pi, [0.5, 0.5])
        assert np.array_equal(params.mu, np.zeros((2, 2)))
        assert np.array_equal(params.sigma, np.ones((2, 2)))
        assert np.array_equal(params.rho, np.zeros(2))

    def test_softmax_arithmetic(self):
        raw = np.zeros(13)
        raw[1] = math.log(3.0)
        params = mdn_params(raw)
        assert np.max(np.abs(params.pi - [0.75, 0.25])) <= 1e-12

    def test_invariants_on_random_and_extreme_inputs(self):
        rng = np.random.default_rng(6)
        for scale in (1.0, 10.0, 1e3, 1e8):
            for _ in range(25):
                params = mdn_params(rng.standard_normal(1 + 6 * 3) * scale)
                assert abs(params.pi.sum() - 1.0) <= 1e-12
                assert np.all(params.sigma > 0.0)
                assert np.all(np.abs(params.rho) < 1.0)
                assert 0.0 < params.e < 1.0

    def test_bad_length_rejected(self):
        with pytest.raises(ValueError, match="1\\+6M"):
            mdn_params(np.zeros(12))


def mpmath_nll_oracle(params: MixtureParams, target: PenStep) -> float:
    """Direct density evaluation at 50 decimal digits."""
    mp.mp.dps = 50
    density = mp.mpf(0)
    for j in range(params.pi.shape[0]):
        sx, sy = mp.mpf(params.sigma[j, 0]), mp.mpf(params.sigma[j, 1])
        rho = mp.mpf(params.rho[j])
        dx = mp.mpf(target.dx) - mp.mpf(params.mu[j, 0])
        dy = mp.mpf(target.dy) - mp.mpf(params.mu[j, 1])
        omr = 1 - rho**2
        z = (dx / sx) ** 2 + (dy / sy) ** 2 - 2 * rho * dx * dy / (sx * sy)
        norm = 1 / (2 * mp.pi * sx * sy * mp.sqrt(omr))
        density += mp.mpf(params.pi[j]) * norm * mp.exp(-z / (2 * omr))
    e = mp.mpf(params.e)
    pen = mp.mpf(target.pen_up)
    log_bern = pen * mp.log(e) + (1 - pen) * mp.log(1 - e)
    return float(-(mp.log(density) + log_bern))


class TestMdnNll:
    def test_standard_bivariate_pen_down(self):
        params = MixtureParams(
            e=0.5, pi=np.array([1.0]), mu=np.zeros((1, 2)), sigma=np.ones((1, 2)),
            rho=np.zeros(1),
        )
        value = mdn_nll(params, PenStep(0.0, 0.0, 0.0))
        assert abs(value - (math.log(2 * math.pi) + math.log(2.0))) <= 1e-9

    def test_pen_up_symmetry_at_half(self):
        params = MixtureParams(
            e=0.5, pi=np.array([1.0]), mu=np.zeros((1, 2)), sigma=np.ones((1, 2)),
            rho=np.zeros(1),
        )
        down = mdn_nll(params, PenStep(0.0, 0.0, 0.0))
        up = mdn_nll(params, PenStep(0.0, 0.0, 1.0))
        assert down == up
        assert abs(up - 2.531024) <= 1e-6

    def test_matches_extended_precision_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(40):
            m = int(rng.integers(1, 5))
            params = mdn_params(rng.standard_normal(1 + 6 * m) * 1.5)
            target = PenStep(
                float(rng.standard_normal()), float(rng.standard_normal()),
                float(rng.integers(0, 2)),
            )
            mine = mdn_nll(params, target)
            oracle = mpmath_nll_oracle(params, target)
            assert abs(mine - oracle) <= 1e-10 * max(1.0, abs(oracle))

    def test_density_floor_keeps_value_finite(self):
        params = MixtureParams(
            e=0.5, pi=np.array([1.0]), mu=np.zeros((1, 2)),
            sigma=np.full((1, 2), 1e-20), rho=np.zeros(1),
        )
        value = mdn_nll(params, PenStep(1e5, 1e5, 0.0))
        assert math.isfinite(value)


class TestNetContainer:
    def test_init_shapes_and_determinism(self):
        config = SynthConfig(units_per_layer=8, mixture_components=2, attention_components=2,
                             alphabet="ab ")
        net1 = init_net(config, seed=9)
        net2 = init_net(config, seed=9)
        assert net1.params.keys() == net2.params.keys()
        for key in net1.params:
            assert np.array_equal(net1.params[key], net2.params[key])
        assert net1.params["lstm1_wx"].shape == (32, 3 + 3)
        assert net1.params["lstm2_wx"].shape == (32, 3 + 3 + 8)
        assert net1.params["out_w1"].shape == (13, 8)

    def test_save_load_round_trip(self, tmp_path):
        config = SynthConfig(units_per_layer=4, mixture_components=2, attention_components=2,
                             alphabet="ab ")
        net = init_net(config, seed=10)
        net.save(tmp_path / "net.json")
        back = SynthNet.load(tmp_path / "net.json")
        assert back.config == net.config
        for key in net.params:
            assert np.array_equal(back.params[key], net.params[key])

    def test_layer_count_fixed(self):
        with pytest.raises(ValueError, match="3 recurrent layers"):
            SynthConfig(num_layers=2)
