import numpy as np
import pytest

from conftest import assert_grads_close, numeric_grad
from qrnnkit import LSTMLayer, Rng
from qrnnkit.errors import DimensionError, StateError


def hand_cell(x, h, c, Wi, Wf, Wo, Wg, Ui, Uf, Uo, Ug, bi, bf, bo, bg):
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    i = sig(x @ Wi + h @ Ui + bi)
    f = sig(x @ Wf + h @ Uf + bf)
    o = sig(x @ Wo + h @ Uo + bo)
    g = np.tanh(x @ Wg + h @ Ug + bg)
    c = f * c + i * g
    return o * np.tanh(c), c


class TestForward:
    def test_all_zero_weights(self):
        layer = LSTMLayer(3, 4, forget_bias=0.0, dtype=np.float64)
        layer.init_params(Rng(0))
        for p in layer.params.values():
            p[...] = 0.0
        H, _ = layer.forward(np.ones((5, 3)))
        assert not H.any()        # i=f=o=0.5, g=0 so c stays 0 and h stays 0

    def test_single_step_matches_hand_cell(self, rng):
        layer = LSTMLayer(3, 4, dtype=np.float64).init_params(rng)
        x = rng.normal((1, 3), dtype=np.float64)
        H, _ = layer.forward(x)
        blocks = {g: (layer.gate_weights(g).copy(), layer.recurrent_weights(g).copy(),
                      layer.gate_bias(g).copy()) for g in ("i", "f", "o", "g")}
        h0 = np.zeros(4)
        c0 = np.zeros(4)
        want, _ = hand_cell(x[0], h0, c0,
                            blocks["i"][0], blocks["f"][0], blocks["o"][0],
                            blocks["g"][0], blocks["i"][1], blocks["f"][1],
                            blocks["o"][1], blocks["g"][1], blocks["i"][2],
                            blocks["f"][2], blocks["o"][2], blocks["g"][2])
        assert np.allclose(H[0], want, atol=1e-12)

    def test_output_shape(self, rng):
        layer = LSTMLayer(3, 7, dtype=np.float64).init_params(rng)
        H, _ = layer.forward(rng.normal((9, 3), dtype=np.float64))
        assert H.shape == (9, 7)

    def test_step_matches_forward(self, rng):
        layer = LSTMLayer(3, 4, dtype=np.float64).init_params(rng)
        X = rng.normal((6, 3), dtype=np.float64)
        H, _ = layer.forward(X)
        h = np.zeros(4)
        c = np.zeros(4)
        for t in range(6):
            h, c = layer.step(X[t], h, c)
            assert np.allclose(h, H[t], atol=1e-12)

    def test_input_width_check(self, rng):
        layer = LSTMLayer(3, 4, dtype=np.float64).init_params(rng)
        with pytest.raises(DimensionError):
            layer.forward(np.zeros((5, 2)))

    def test_forget_bias_default(self, rng):
        layer = LSTMLayer(3, 4, dtype=np.float64).init_params(rng)
        assert np.allclose(layer.gate_bias("f"), 1.0)
        assert not layer.gate_bias("i").any()


class TestBackward:
    def test_zero_upstream(self, rng):
        layer = LSTMLayer(3, 4, dtype=np.float64).init_params(rng)
        _, cache = layer.forward(rng.normal((5, 3), dtype=np.float64), training=True)
        dX, grads, dh0, dc0 = layer.backward(cache, np.zeros((5, 4)))
        assert not dX.any() and not dh0.any() and not dc0.any()
        assert all(not g.any() for g in grads.values())

    def test_gradients_match_fd(self, rng):
        layer = LSTMLayer(3, 4, dtype=np.float64).init_params(rng)
        X = rng.normal((5, 3), dtype=np.float64)
        R = rng.normal((5, 4), dtype=np.float64)

        def loss():
            H, _ = layer.forward(X)
            return float((H * R).sum())

        _, cache = layer.forward(X, training=True)
        dX, grads, _, _ = layer.backward(cache, R)
        assert_grads_close(dX, numeric_grad(loss, X))
        for name in layer.params:
            assert_grads_close(grads[name], numeric_grad(loss, layer.params[name]))

    def test_recurrent_gradient_flows(self, rng):
        layer = LSTMLayer(3, 4, dtype=np.float64).init_params(rng)
        _, cache = layer.forward(rng.normal((4, 3), dtype=np.float64), training=True)
        _, grads, _, _ = layer.backward(cache, rng.normal((4, 4), dtype=np.float64))
        assert np.abs(grads["W"][3:, :]).sum() > 0   # recurrent rows get gradient

    def test_cache_mismatch(self, rng):
        a = LSTMLayer(3, 4, dtype=np.float64).init_params(rng)
        b = LSTMLayer(3, 4, dtype=np.float64).init_params(rng)
        _, cache = a.forward(rng.normal((4, 3), dtype=np.float64), training=True)
        with pytest.raises(StateError):
            b.backward(cache, np.zeros((4, 4)))


class TestChannelMixing:
    def test_channels_do_mix(self, rng):
        # Unlike the quasi-recurrent pooling, the recurrent weights couple
        # channels: perturbing one input channel moves other output channels.
        layer = LSTMLayer(3, 4, dtype=np.float64).init_params(rng)
        X = rng.normal((6, 3), dtype=np.float64)
        H, _ = layer.forward(X)
        X2 = X.copy()
        X2[0, 0] += 0.5
        H2, _ = layer.forward(X2)
        moved = np.abs(H2[-1] - H[-1]) > 0
        assert moved.sum() > 1
