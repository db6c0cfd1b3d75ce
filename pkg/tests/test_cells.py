"""ConvLSTM and action-MLP cells: analytic cases, oracles, invariants."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _fd import fd_check
from ampnet import cells, tensor as tz
from ampnet.cells import ConvLSTMState, MLPParams, action_mlp, convlstm_step, init_convlstm, init_mlp
from ampnet.errors import InvalidArgumentError
from ampnet.tensor import Tensor


def zero_convlstm(c_in, c_hid, k=3):
    """All-zero parameters, including the forget bias."""
    params = init_convlstm(np.random.default_rng(0), c_in, c_hid, k)
    for t in params.named().values():
        t.data = np.zeros_like(t.data)
    return params


def convlstm_oracle(p, h, c, x):
    """Straight-line numpy reimplementation of the recurrence."""

    def conv(inp, kern, bias):
        co, ci, kh, kw = kern.shape
        pad = (kh - 1) // 2
        xp = np.zeros((ci, inp.shape[1] + 2 * pad, inp.shape[2] + 2 * pad))
        xp[:, pad:-pad, pad:-pad] = inp
        out = np.zeros((co, inp.shape[1], inp.shape[2]))
        for o in range(co):
            for i in range(inp.shape[1]):
                for j in range(inp.shape[2]):
                    out[o, i, j] = np.sum(kern[o] * xp[:, i:i + kh, j:j + kw]) + bias[o]
        return out

    def sig(z):
        return 1.0 / (1.0 + np.exp(-z))

    i = sig(conv(x, p.wx_i.data, p.b_i.data) + conv(h, p.wh_i.data, np.zeros(p.hidden_channels)))
    f = sig(conv(x, p.wx_f.data, p.b_f.data) + conv(h, p.wh_f.data, np.zeros(p.hidden_channels)))
    o = sig(conv(x, p.wx_o.data, p.b_o.data) + conv(h, p.wh_o.data, np.zeros(p.hidden_channels)))
    g = np.tanh(conv(x, p.wx_g.data, p.b_g.data) + conv(h, p.wh_g.data, np.zeros(p.hidden_channels)))
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


class TestConvLSTM:
    def test_all_zero_params_give_zero_state(self):
        p = zero_convlstm(2, 3)
        state = cells.zero_state(3, 4, 4)
        nxt = convlstm_step(p, state, Tensor(np.random.default_rng(0).normal(size=(2, 4, 4))))
        assert not nxt.h.data.any() and not nxt.c.data.any()

    def test_zero_params_halve_prior_cell(self):
        p = zero_convlstm(2, 3)
        c0 = np.random.default_rng(1).normal(size=(3, 4, 4)).astype(np.float32)
        state = ConvLSTMState(h=Tensor(np.zeros((3, 4, 4))), c=Tensor(c0))
        nxt = convlstm_step(p, state, Tensor(np.zeros((2, 4, 4))))
        assert np.allclose(nxt.c.data, 0.5 * c0, atol=1e-6)
        assert np.allclose(nxt.h.data, 0.5 * np.tanh(0.5 * c0), atol=1e-6)

    def test_matches_independent_oracle(self):
        with tz.use_float64():
            rng = np.random.default_rng(2)
            p = init_convlstm(rng, 2, 3)
            for t in p.named().values():
                t.data = t.data + rng.normal(scale=0.1, size=t.data.shape)
            h0 = rng.normal(size=(3, 4, 5))
            c0 = rng.normal(size=(3, 4, 5))
            x = rng.normal(size=(2, 4, 5))
            nxt = convlstm_step(p, ConvLSTMState(h=Tensor(h0), c=Tensor(c0)), Tensor(x))
            oh, oc = convlstm_oracle(p, h0, c0, x)
        assert np.allclose(nxt.h.data, oh, atol=1e-12)
        assert np.allclose(nxt.c.data, oc, atol=1e-12)

    def test_shape_mismatch_rejected(self):
        p = zero_convlstm(2, 3)
        state = cells.zero_state(3, 4, 4)
        with pytest.raises(InvalidArgumentError):
            convlstm_step(p, state, Tensor(np.zeros((5, 4, 4))))
        with pytest.raises(InvalidArgumentError):
            convlstm_step(p, state, Tensor(np.zeros((2, 6, 6))))

    @given(st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_hidden_output_bounded(self, seed):
        rng = np.random.default_rng(seed)
        p = init_convlstm(rng, 1, 2)
        state = ConvLSTMState(h=Tensor(rng.normal(size=(2, 3, 3))),
                              c=Tensor(rng.normal(size=(2, 3, 3))))
        nxt = convlstm_step(p, state, Tensor(rng.normal(size=(1, 3, 3))))
        assert (np.abs(nxt.h.data) < 1.0).all()

    def test_step_is_pure_and_deterministic(self):
        rng = np.random.default_rng(3)
        p = init_convlstm(rng, 2, 2)
        h0 = rng.normal(size=(2, 3, 3)).astype(np.float32)
        c0 = rng.normal(size=(2, 3, 3)).astype(np.float32)
        x = rng.normal(size=(2, 3, 3)).astype(np.float32)
        state = ConvLSTMState(h=Tensor(h0.copy()), c=Tensor(c0.copy()))
        xt = Tensor(x.copy())
        one = convlstm_step(p, state, xt)
        two = convlstm_step(p, state, xt)
        assert np.array_equal(one.h.data, two.h.data) and np.array_equal(one.c.data, two.c.data)
        assert np.array_equal(state.h.data, h0) and np.array_equal(state.c.data, c0)
        assert np.array_equal(xt.data, x)

    def test_forget_bias_initialized_to_one(self):
        p = init_convlstm(np.random.default_rng(0), 2, 3)
        assert np.array_equal(p.b_f.data, np.ones(3, dtype=np.float32))
        assert not p.b_i.data.any() and not p.b_o.data.any() and not p.b_g.data.any()

    def test_gradients_match_finite_differences(self):
        with tz.use_float64():
            rng = np.random.default_rng(4)
            p = init_convlstm(rng, 1, 2)
            tensors = list(p.named().values())
            for t in tensors:
                t.data = t.data + rng.normal(scale=0.1, size=t.data.shape)
                t.requires_grad = True
            h = Tensor(rng.normal(size=(2, 3, 3)), requires_grad=True)
            c = Tensor(rng.normal(size=(2, 3, 3)), requires_grad=True)
            x = Tensor(rng.normal(size=(1, 3, 3)), requires_grad=True)

            def loss():
                nxt = convlstm_step(p, ConvLSTMState(h=h, c=c), x)
                return tz.add(tz.mean(nxt.h), tz.mean(nxt.c))

            err = fd_check(loss, tensors + [h, c, x])
        assert err < 1e-4


class TestActionMLP:
    def test_zero_params_give_uniform_weights(self):
        p = init_mlp(np.random.default_rng(0), 2, 4, 2)
        for t in p.named().values():
            t.data = np.zeros_like(t.data)
        w = action_mlp(p, Tensor(np.array([1.0, 0.0])))
        assert np.array_equal(w.data, np.array([0.5, 0.5], dtype=np.float32))

    def test_minworld_shape_contract(self):
        p = init_mlp(np.random.default_rng(1), 2, 4, 2)
        assert p.w1.shape == (4, 2) and p.b1.shape == (4,)
        assert p.w2.shape == (2, 4) and p.b2.shape == (2,)
        assert action_mlp(p, Tensor(np.array([0.0, 1.0]))).shape == (2,)

    def test_hand_set_weights_match_hand_computation(self):
        w1 = np.array([[0.5, -0.25], [0.1, 0.3], [-0.2, 0.7], [0.4, 0.0]])
        b1 = np.array([0.1, -0.1, 0.2, 0.0])
        w2 = np.array([[0.3, -0.5, 0.2, 0.6], [-0.1, 0.4, 0.5, -0.2]])
        b2 = np.array([0.05, -0.05])
        p = MLPParams(w1=Tensor(w1), b1=Tensor(b1), w2=Tensor(w2), b2=Tensor(b2))
        a = np.array([1.0, 0.0])
        hidden = np.tanh(w1 @ a + b1)
        logits = w2 @ hidden + b2
        expected = np.exp(logits - logits.max())
        expected /= expected.sum()
        out = action_mlp(p, Tensor(a))
        assert np.allclose(out.data, expected, atol=1e-6)

    def test_wrong_action_dim_rejected(self):
        p = init_mlp(np.random.default_rng(2), 2, 4, 3)
        with pytest.raises(InvalidArgumentError):
            action_mlp(p, Tensor(np.array([1.0, 0.0, 0.0])))

    @given(st.integers(0, 10_000), st.floats(-10, 10), st.floats(-10, 10))
    @settings(max_examples=40, deadline=None)
    def test_weights_form_a_distribution(self, seed, a0, a1):
        p = init_mlp(np.random.default_rng(seed), 2, 4, 3)
        w = action_mlp(p, Tensor(np.array([a0, a1]))).data
        assert (w >= 0).all() and (w <= 1).all()
        assert abs(w.sum() - 1.0) < 1e-6

    def test_gradients_match_finite_differences(self):
        with tz.use_float64():
            rng = np.random.default_rng(5)
            p = init_mlp(rng, 2, 3, 2)
            tensors = list(p.named().values())
            for t in tensors:
                t.data = t.data + rng.normal(scale=0.1, size=t.data.shape)
                t.requires_grad = True
            a = Tensor(rng.uniform(0, 1, size=2), requires_grad=True)
            err = fd_check(lambda: tz.pick(action_mlp(p, a), 0), tensors + [a])
        assert err < 1e-4
