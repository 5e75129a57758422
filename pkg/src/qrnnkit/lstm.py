"""Plain LSTM layer, the accuracy/throughput comparison target.

Same [..., T, channels] interface as the quasi-recurrent layer, but the
timestep loop contains a matrix multiply: gates at step t need h_{t-1},
so neither the linear part nor the elementwise part parallelizes over
time.  That asymmetry is exactly what the benchmark harness measures.
"""

import numpy as np

from .errors import DimensionError, StateError
from .tensor import DEFAULT_DTYPE, sigmoid, tanh

GATE_BLOCKS = ("i", "f", "o", "g")


class LSTMCache:
    __slots__ = ("layer", "X", "H_prev", "I", "F", "O", "G", "C", "TC", "c0")

    def __init__(self, **kw):
        for name in self.__slots__:
            setattr(self, name, kw.get(name))


class LSTMLayer:
    """Standard LSTM cell unrolled over time.

    One fused weight matrix W of shape [n+m, 4m] (input rows then recurrent
    rows; gate block order i, f, o, g) gives a single gate matmul per
    timestep.  The forget-gate bias starts at ``forget_bias`` (1.0 by
    default) since that noticeably helps small tasks converge.
    """

    def __init__(self, input_dim, hidden_dim, forget_bias=1.0, dtype=DEFAULT_DTYPE):
        self.n = input_dim
        self.m = hidden_dim
        self.forget_bias = forget_bias
        self.dtype = dtype
        self.params = {}

    def init_params(self, rng):
        n, m = self.n, self.m
        r = 1.0 / np.sqrt(n + m)
        self.params["W"] = rng.uniform((n + m, 4 * m), -r, r, dtype=self.dtype)
        b = np.zeros(4 * m, dtype=self.dtype)
        b[m:2 * m] = self.forget_bias
        self.params["b"] = b
        return self

    # Per-gate views of the fused parameters, block order (i, f, o, g).
    def gate_weights(self, gate):
        j = GATE_BLOCKS.index(gate)
        W = self.params["W"]
        return W[:self.n, j * self.m:(j + 1) * self.m]

    def recurrent_weights(self, gate):
        j = GATE_BLOCKS.index(gate)
        W = self.params["W"]
        return W[self.n:, j * self.m:(j + 1) * self.m]

    def gate_bias(self, gate):
        j = GATE_BLOCKS.index(gate)
        return self.params["b"][j * self.m:(j + 1) * self.m]

    def forward(self, X, h0=None, c0=None, training=False, prof=None):
        """Returns (H, cache); cache is None unless training."""
        X = np.asarray(X, dtype=self.dtype)
        if X.shape[-1] != self.n:
            raise DimensionError(
                f"layer expects {self.n} input channels, got {X.shape[-1]}")
        W, b = self.params["W"], self.params["b"]
        lead = X.shape[:-2]
        T = X.shape[-2]
        m = self.m
        h = np.zeros(lead + (m,), dtype=self.dtype) if h0 is None \
            else np.broadcast_to(np.asarray(h0, self.dtype), lead + (m,)).copy()
        c = np.zeros(lead + (m,), dtype=self.dtype) if c0 is None \
            else np.broadcast_to(np.asarray(c0, self.dtype), lead + (m,)).copy()
        h0_arr, c0_arr = h.copy(), c.copy()

        H = np.empty(lead + (T, m), dtype=self.dtype)
        if training:
            Hp = np.empty_like(H)
            Is, Fs, Os, Gs = (np.empty_like(H) for _ in range(4))
            Cs, TCs = np.empty_like(H), np.empty_like(H)
        xh = np.empty(lead + (self.n + m,), dtype=self.dtype)
        for t in range(T):
            xh[..., :self.n] = X[..., t, :]
            xh[..., self.n:] = h
            gates = xh @ W + b
            i = sigmoid(gates[..., 0:m])
            f = sigmoid(gates[..., m:2 * m])
            o = sigmoid(gates[..., 2 * m:3 * m])
            g = tanh(gates[..., 3 * m:4 * m])
            if training:
                Hp[..., t, :] = h
            c = f * c + i * g
            tc = tanh(c)
            h = o * tc
            H[..., t, :] = h
            if training:
                Is[..., t, :] = i
                Fs[..., t, :] = f
                Os[..., t, :] = o
                Gs[..., t, :] = g
                Cs[..., t, :] = c
                TCs[..., t, :] = tc

        cache = None
        if training:
            cache = LSTMCache(layer=self, X=X, H_prev=Hp, I=Is, F=Fs, O=Os, G=Gs,
                              C=Cs, TC=TCs, c0=c0_arr)
        return H, cache

    def backward(self, cache, dH):
        """Exact gradients including the recurrent path. Returns (dX, grads, dh0, dc0)."""
        if not isinstance(cache, LSTMCache) or cache.layer is not self:
            raise StateError("cache does not belong to this layer")
        X, Hp = cache.X, cache.H_prev
        I, F, O, G, C, TC = cache.I, cache.F, cache.O, cache.G, cache.C, cache.TC
        W = self.params["W"]
        n, m = self.n, self.m
        T = X.shape[-2]
        one = X.dtype.type(1)

        dX = np.empty_like(X)
        dW = np.zeros_like(W)
        db = np.zeros_like(self.params["b"])
        dh_run = np.zeros(X.shape[:-2] + (m,), dtype=X.dtype)
        dc_run = np.zeros_like(dh_run)
        dgates = np.empty(X.shape[:-2] + (4 * m,), dtype=X.dtype)
        xh = np.empty(X.shape[:-2] + (n + m,), dtype=X.dtype)
        for t in range(T - 1, -1, -1):
            i, f, o, g = I[..., t, :], F[..., t, :], O[..., t, :], G[..., t, :]
            tc = TC[..., t, :]
            dh = dH[..., t, :] + dh_run
            do = dh * tc
            dc = dh * o * (one - tc * tc) + dc_run
            c_prev = C[..., t - 1, :] if t > 0 else cache.c0
            df = dc * c_prev
            di = dc * g
            dg = dc * i
            dc_run = dc * f
            dgates[..., 0:m] = di * i * (one - i)
            dgates[..., m:2 * m] = df * f * (one - f)
            dgates[..., 2 * m:3 * m] = do * o * (one - o)
            dgates[..., 3 * m:4 * m] = dg * (one - g * g)
            xh[..., :n] = X[..., t, :]
            xh[..., n:] = Hp[..., t, :]
            dW += xh.reshape(-1, n + m).T @ dgates.reshape(-1, 4 * m)
            db += dgates.reshape(-1, 4 * m).sum(axis=0)
            dxh = dgates @ W.T
            dX[..., t, :] = dxh[..., :n]
            dh_run = dxh[..., n:]
        return dX, {"W": dW, "b": db}, dh_run, dc_run

    def step(self, x, h_prev, c_prev):
        """One inference timestep; purely functional."""
        m = self.m
        xh = np.concatenate([x, h_prev], axis=-1)
        gates = xh @ self.params["W"] + self.params["b"]
        i = sigmoid(gates[..., 0:m])
        f = sigmoid(gates[..., m:2 * m])
        o = sigmoid(gates[..., 2 * m:3 * m])
        g = tanh(gates[..., 3 * m:4 * m])
        c = f * c_prev + i * g
        h = o * tanh(c)
        return h, c

    def num_params(self):
        return sum(p.size for p in self.params.values())
