import math

import numpy as np
import pytest

from qrnnkit import Rng, bernoulli_mask, matmul, sigmoid, softmax, tanh
from qrnnkit.errors import ArgumentError, DimensionError
from qrnnkit import tensor


def naive_matmul(a, b):
    p, q = a.shape
    q2, r = b.shape
    out = np.zeros((p, r), dtype=np.float64)
    for i in range(p):
        for j in range(r):
            s = 0.0
            for k in range(q):
                s += float(a[i, k]) * float(b[k, j])
            out[i, j] = s
    return out


class TestMatmul:
    def test_identity(self, rng):
        b = rng.normal((3, 5), dtype=np.float64)
        assert np.allclose(matmul(np.eye(3), b), b)

    def test_zeros(self):
        out = matmul(np.zeros((2, 3)), np.ones((3, 4)))
        assert out.shape == (2, 4)
        assert not out.any()

    def test_matches_triple_loop(self, rng):
        a = rng.normal((3, 4), dtype=np.float64)
        b = rng.normal((4, 2), dtype=np.float64)
        want = naive_matmul(a, b)
        got = matmul(a, b)
        assert np.max(np.abs(got - want)) <= 1e-6 * np.max(np.abs(want))

    def test_shape_mismatch_names_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
            matmul(np.zeros((2, 3)), np.zeros((4, 5)))

    def test_associativity(self, rng):
        a = rng.normal((4, 3), dtype=np.float64)
        b = rng.normal((3, 5), dtype=np.float64)
        c = rng.normal((5, 2), dtype=np.float64)
        left = matmul(matmul(a, b), c)
        right = matmul(a, matmul(b, c))
        assert np.allclose(left, right, rtol=1e-5)


class TestElementwise:
    def test_sigmoid_zero(self):
        assert np.all(sigmoid(np.zeros((3, 4))) == 0.5)

    def test_tanh_zero(self):
        assert np.all(tanh(np.zeros((3, 4))) == 0.0)

    def test_sigmoid_symmetry(self, rng):
        x = rng.normal((50,), scale=3.0, dtype=np.float64)
        assert np.max(np.abs(sigmoid(x) + sigmoid(-x) - 1.0)) < 1e-6

    def test_binary_shapes(self):
        a = np.ones((4, 3))
        v = np.ones(3)
        assert tensor.add(a, v).shape == (4, 3)
        assert tensor.mul(v, a).shape == (4, 3)
        assert np.all(tensor.sub(a, v) == 0)
        with pytest.raises(DimensionError):
            tensor.add(np.ones((4, 3)), np.ones((3, 4)))
        with pytest.raises(DimensionError):
            tensor.add(np.ones((4, 3)), np.ones((4, 1)))

    def test_neg_add_const(self):
        x = np.array([1.0, -2.0])
        assert np.all(tensor.neg(x) == [-1.0, 2.0])
        assert np.all(tensor.add_const(x, 2.0) == [3.0, 0.0])


class TestSoftmax:
    def test_constant_gives_uniform(self):
        out = softmax(np.full((2, 5), 3.7))
        assert np.allclose(out, 0.2)

    def test_shift_invariance(self, rng):
        x = rng.normal((4, 6), dtype=np.float64)
        assert np.allclose(softmax(x), softmax(x + 11.5), atol=1e-6)

    def test_hand_value(self):
        out = softmax(np.array([0.0, math.log(3.0)]))
        assert np.allclose(out, [0.25, 0.75], atol=1e-12)

    def test_slices_sum_to_one(self):
        r = Rng(7)
        for _ in range(100):
            x = r.normal((3, 5), scale=4.0, dtype=np.float64)
            for axis in (0, 1):
                sums = softmax(x, axis=axis).sum(axis=axis)
                assert np.allclose(sums, 1.0, atol=1e-6)
        assert np.all(softmax(x) >= 0)

    def test_nan_rejected(self):
        with pytest.raises(ArgumentError):
            softmax(np.array([1.0, np.nan]))

    def test_large_values_stable(self):
        out = softmax(np.array([1000.0, 1000.0]))
        assert np.allclose(out, 0.5)


class TestBernoulli:
    def test_extremes(self, rng):
        assert np.all(bernoulli_mask(rng, (10, 10), 1.0) == 1)
        assert np.all(bernoulli_mask(rng, (10, 10), 0.0) == 0)

    def test_mean(self):
        mask = bernoulli_mask(Rng(3), (100_000,), 0.7)
        assert abs(mask.mean() - 0.7) < 0.01

    def test_p_out_of_range(self, rng):
        with pytest.raises(ArgumentError):
            bernoulli_mask(rng, (3,), 1.5)
        with pytest.raises(ArgumentError):
            bernoulli_mask(rng, (3,), -0.1)

    def test_reproducible(self):
        a = bernoulli_mask(Rng(99), (1000,), 0.4)
        b = bernoulli_mask(Rng(99), (1000,), 0.4)
        assert np.array_equal(a, b)


class TestRng:
    def test_same_seed_same_stream(self):
        a, b = Rng(5), Rng(5)
        assert np.array_equal(a.uniform((100,)), b.uniform((100,)))
        assert np.array_equal(a.normal((100,)), b.normal((100,)))

    def test_spawn_deterministic(self):
        a, b = Rng(5), Rng(5)
        assert np.array_equal(a.spawn().uniform((10,)), b.spawn().uniform((10,)))

    def test_shuffle_deterministic(self):
        xs = list(range(20))
        ys = list(range(20))
        Rng(11).shuffle(xs)
        Rng(11).shuffle(ys)
        assert xs == ys
        assert sorted(xs) == list(range(20))

    def test_rank_guard(self):
        with pytest.raises(DimensionError):
            tensor.as_tensor(np.zeros((2, 2, 2, 2)))
