"""Quasi-recurrent layer: gated timestep convolution + elementwise recurrent pooling.

The convolution runs in parallel over all timesteps (one GEMM over an
im2col view); the pooling is a parameterless recurrence that runs in
parallel over channels.  Gradients are hand-written; every forward in
training mode returns a cache holding exactly what the backward needs.

Shapes follow a [..., T, channels] convention: a single sequence is
[T, n], a minibatch is [B, T, n].  All ops accept either.
"""

import csv

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ArgumentError, DimensionError, StateError
from .tensor import DEFAULT_DTYPE, bernoulli_mask, sigmoid, tanh

POOLING_GATES = {"f": ("z", "f"), "fo": ("z", "f", "o"), "ifo": ("z", "f", "o", "i")}
MASKINGS = ("masked", "unmasked")


def _pad_amounts(k, masking):
    """Left/right zero padding so output length equals input length.

    masked: all k-1 zeros on the left, so position t sees inputs t-k+1..t only.
    unmasked: ceil((k-1)/2) left, floor((k-1)/2) right (centered receptive field).
    """
    if masking == "masked":
        return k - 1, 0
    if masking == "unmasked":
        left = (k - 1 + 1) // 2
        return left, (k - 1) - left
    raise ArgumentError(f"masking must be one of {MASKINGS}, got {masking!r}")


def _im2col(X, k, masking):
    """Stack the k input rows feeding each output position: [..., T, k*n]."""
    left, right = _pad_amounts(k, masking)
    pad = [(0, 0)] * X.ndim
    pad[-2] = (left, right)
    Xp = np.pad(X, pad)
    if k == 1:
        cols = Xp[..., None, :]
    else:
        cols = sliding_window_view(Xp, k, axis=-2)      # [..., T, n, k]
        cols = np.ascontiguousarray(np.swapaxes(cols, -1, -2))
    n = X.shape[-1]
    return cols.reshape(X.shape[:-1] + (k * n,))


def masked_conv1d(X, W, b, masking="masked"):
    """Timestep convolution with bank W [k, n, m] and bias b [m].

    In masked mode the output at t depends only on x_{t-k+1}..x_t
    (inputs before the sequence start are zero).
    """
    X = np.asarray(X)
    k, n, m = W.shape
    if X.shape[-1] != n:
        raise DimensionError(
            f"conv input has {X.shape[-1]} channels, filter bank expects {n}")
    cols = _im2col(X, k, masking)
    return cols @ W.reshape(k * n, m) + b


def masked_conv1d_backward(X, W, dA, masking="masked"):
    """Gradients of masked_conv1d: returns (dX, dW, db)."""
    k, n, m = W.shape
    T = X.shape[-2]
    cols = _im2col(X, k, masking).reshape(-1, k * n)
    dA2 = dA.reshape(-1, m)
    dW = (cols.T @ dA2).reshape(k, n, m)
    db = dA2.sum(axis=0)
    dcols = (dA2 @ W.reshape(k * n, m).T).reshape(X.shape[:-1] + (k, n))
    left, _ = _pad_amounts(k, masking)
    dXp = np.zeros(X.shape[:-2] + (T + k - 1, n), dtype=X.dtype)
    for j in range(k):
        dXp[..., j:j + T, :] += dcols[..., :, j, :]
    return dXp[..., left:left + T, :], dW, db


def f_pool(Z, F, h0=None):
    """h_t = f_t * h_{t-1} + (1 - f_t) * z_t ("dynamic average pooling").

    Sequential in t, independent per channel; h starts at zero unless given.
    """
    _check_pool_shapes(Z, F)
    H = np.empty_like(Z)
    h = _initial_state(Z, h0)
    one = Z.dtype.type(1)
    for t in range(Z.shape[-2]):
        f = F[..., t, :]
        h = f * h + (one - f) * Z[..., t, :]
        H[..., t, :] = h
    return H


def fo_pool(Z, F, O, c0=None):
    """c_t = f_t * c_{t-1} + (1 - f_t) * z_t;  h_t = o_t * c_t. Returns (C, H)."""
    _check_pool_shapes(Z, F, O)
    C = np.empty_like(Z)
    c = _initial_state(Z, c0)
    one = Z.dtype.type(1)
    for t in range(Z.shape[-2]):
        f = F[..., t, :]
        c = f * c + (one - f) * Z[..., t, :]
        C[..., t, :] = c
    return C, O * C


def ifo_pool(Z, F, O, I, c0=None):
    """c_t = f_t * c_{t-1} + i_t * z_t;  h_t = o_t * c_t. Returns (C, H)."""
    _check_pool_shapes(Z, F, O, I)
    C = np.empty_like(Z)
    c = _initial_state(Z, c0)
    for t in range(Z.shape[-2]):
        c = F[..., t, :] * c + I[..., t, :] * Z[..., t, :]
        C[..., t, :] = c
    return C, O * C


def _check_pool_shapes(Z, *others):
    for other in others:
        if other.shape != Z.shape:
            raise DimensionError(
                f"pooling gate shapes disagree: {Z.shape} vs {other.shape}")


def _initial_state(Z, s0):
    shape = Z.shape[:-2] + (Z.shape[-1],)
    if s0 is None:
        return np.zeros(shape, dtype=Z.dtype)
    s0 = np.asarray(s0, dtype=Z.dtype)
    return np.broadcast_to(s0, shape).copy()


class LayerCache:
    """Everything the backward pass needs from one training-mode forward."""

    __slots__ = ("layer", "X", "Z", "F_sig", "F", "O", "I", "C",
                 "c0", "zoneout_mask", "had_offsets")

    def __init__(self, **kw):
        for name in self.__slots__:
            setattr(self, name, kw.get(name))


class QRNNLayer:
    """One quasi-recurrent layer.

    Parameters are one filter bank per gate, each [k, n, m] with bias [m]:
    z uses tanh, the gates (f, o, i) use sigmoid.  ``pooling`` selects which
    gates exist ("f", "fo", "ifo"); ``masking`` selects causal or centered
    padding; ``zoneout`` stochastically pins forget-gate entries to 1 during
    training (dropout on 1-f with no rescaling).
    """

    def __init__(self, input_dim, hidden_dim, filter_width=2, pooling="fo",
                 masking="masked", zoneout=0.0, dtype=DEFAULT_DTYPE):
        if pooling not in POOLING_GATES:
            raise ArgumentError(f"pooling must be one of {tuple(POOLING_GATES)}")
        if masking not in MASKINGS:
            raise ArgumentError(f"masking must be one of {MASKINGS}")
        if not 0.0 <= zoneout < 1.0:
            raise ArgumentError(f"zoneout rate must be in [0, 1), got {zoneout}")
        if filter_width < 1:
            raise ArgumentError("filter width must be >= 1")
        self.n = input_dim
        self.m = hidden_dim
        self.k = filter_width
        self.pooling = pooling
        self.masking = masking
        self.zoneout = zoneout
        self.dtype = dtype
        self.gates = POOLING_GATES[pooling]
        self.params = {}

    def init_params(self, rng):
        r = 1.0 / np.sqrt(self.k * self.n)
        for g in self.gates:
            self.params[f"W_{g}"] = rng.uniform(
                (self.k, self.n, self.m), -r, r, dtype=self.dtype)
            self.params[f"b_{g}"] = np.zeros(self.m, dtype=self.dtype)
        return self

    def _fused_weights(self):
        W = np.concatenate([self.params[f"W_{g}"] for g in self.gates], axis=-1)
        b = np.concatenate([self.params[f"b_{g}"] for g in self.gates])
        return W.reshape(self.k * self.n, -1), b

    def compute_gates(self, X, gate_offsets=None, prof=None):
        """Candidate and gate sequences from the convolutional component.

        Returns (Z, F) for f-pooling, (Z, F, O) for fo, (Z, F, O, I) for ifo;
        Z is tanh-activated, the gates are sigmoids.  gate_offsets, when
        given, maps gate name -> [..., m] vector added to every timestep's
        pre-activation (the decoder's encoder-state supplement).
        """
        X = np.asarray(X, dtype=self.dtype)
        if X.shape[-1] != self.n:
            raise DimensionError(
                f"layer expects {self.n} input channels, got {X.shape[-1]}")
        W, b = self._fused_weights()
        with _section(prof, "conv"):
            A = _im2col(X, self.k, self.masking) @ W + b
            if gate_offsets is not None:
                for gi, g in enumerate(self.gates):
                    if g in gate_offsets:
                        A[..., :, gi * self.m:(gi + 1) * self.m] += \
                            np.asarray(gate_offsets[g])[..., None, :]
            out = [tanh(A[..., :, 0:self.m])]
            for gi in range(1, len(self.gates)):
                out.append(sigmoid(A[..., :, gi * self.m:(gi + 1) * self.m]))
        return tuple(out)

    def forward(self, X, rng=None, training=False, c0=None, gate_offsets=None,
                need_cache=None, prof=None):
        """Run the layer over a full sequence (or batch of sequences).

        Returns (H, cache, last_state).  last_state is the final pooling
        state (c, or h for f-pooling), detached, for cross-window carry.
        The cache is kept iff training (or need_cache is forced on, e.g. to
        read un-gated states at inference); zoneout fires only in training.
        """
        X = np.asarray(X, dtype=self.dtype)
        if need_cache is None:
            need_cache = training
        parts = self.compute_gates(X, gate_offsets=gate_offsets, prof=prof)
        Z, F_sig = parts[0], parts[1]
        O = parts[2] if len(parts) > 2 else None
        I = parts[3] if len(parts) > 3 else None

        F = F_sig
        zmask = None
        if training and self.zoneout > 0.0:
            if rng is None:
                raise StateError("zoneout needs an rng in training mode")
            # Dropout on 1-F without rescaling pins a random subset of forget
            # gates to exactly 1; the 0/1 mask makes that a select.
            zmask = bernoulli_mask(rng, F_sig.shape, 1.0 - self.zoneout, dtype=self.dtype)
            F = np.where(zmask == 0, F_sig.dtype.type(1), F_sig)

        with _section(prof, "pooling"):
            if self.pooling == "f":
                H = f_pool(Z, F, h0=c0)
                C = H
            elif self.pooling == "fo":
                C, H = fo_pool(Z, F, O, c0=c0)
            else:
                C, H = ifo_pool(Z, F, O, I, c0=c0)

        cache = None
        if need_cache:
            cache = LayerCache(layer=self, X=X, Z=Z, F_sig=F_sig, F=F, O=O, I=I,
                               C=C, c0=_initial_state(Z, c0), zoneout_mask=zmask,
                               had_offsets=gate_offsets is not None)
        return H, cache, C[..., -1, :].copy()

    def backward(self, cache, dH=None, dC_extra=None, dO_extra=None, prof=None):
        """Gradients from a training-mode forward.

        dH is the gradient w.r.t. the gated output H; callers that consumed
        the un-gated states and the output gate directly (the attention
        layer) pass dC_extra / dO_extra instead.  The zoneout mask is a
        constant here.  Returns (dX, grads, dc0, d_offsets); d_offsets is
        None unless the forward received gate_offsets.
        """
        if not isinstance(cache, LayerCache) or cache.layer is not self:
            raise StateError("cache does not belong to this layer")
        Z, F, O, I, C, c0 = cache.Z, cache.F, cache.O, cache.I, cache.C, cache.c0
        T = Z.shape[-2]
        one = Z.dtype.type(1)

        with _section(prof, "pooling"):
            dZ = np.empty_like(Z)
            dF = np.empty_like(F)
            dI = np.empty_like(I) if I is not None else None
            dO_total = None
            if self.pooling != "f":
                dO_total = np.zeros_like(O)
                if dH is not None:
                    dO_total += dH * C
                if dO_extra is not None:
                    dO_total += dO_extra
            dstate = np.zeros_like(c0)
            for t in range(T - 1, -1, -1):
                d = dstate
                if dH is not None:
                    if self.pooling == "f":
                        d = d + dH[..., t, :]
                    else:
                        d = d + dH[..., t, :] * O[..., t, :]
                if dC_extra is not None:
                    d = d + dC_extra[..., t, :]
                prev = C[..., t - 1, :] if t > 0 else c0
                f = F[..., t, :]
                if self.pooling == "ifo":
                    dF[..., t, :] = d * prev
                    dZ[..., t, :] = d * I[..., t, :]
                    dI[..., t, :] = d * Z[..., t, :]
                else:
                    dF[..., t, :] = d * (prev - Z[..., t, :])
                    dZ[..., t, :] = d * (one - f)
                dstate = d * f
            dc0 = dstate

        with _section(prof, "conv"):
            if cache.zoneout_mask is not None:
                dF = dF * cache.zoneout_mask
            F_sig = cache.F_sig
            dA = [dZ * (one - Z * Z), dF * F_sig * (one - F_sig)]
            if O is not None:
                dA.append(dO_total * O * (one - O))
            if I is not None:
                dA.append(dI * I * (one - I))
            dA_all = np.concatenate(dA, axis=-1)

            d_offsets = None
            if cache.had_offsets:
                d_offsets = {}
                for gi, g in enumerate(self.gates):
                    d_offsets[g] = dA_all[..., :, gi * self.m:(gi + 1) * self.m].sum(axis=-2)

            W, _ = self._fused_weights()
            kn = self.k * self.n
            cols = _im2col(cache.X, self.k, self.masking).reshape(-1, kn)
            dA2 = dA_all.reshape(-1, len(self.gates) * self.m)
            dW_all = cols.T @ dA2
            db_all = dA2.sum(axis=0)
            dcols = (dA2 @ W.T).reshape(cache.X.shape[:-1] + (self.k, self.n))
            left, _ = _pad_amounts(self.k, self.masking)
            dXp = np.zeros(cache.X.shape[:-2] + (T + self.k - 1, self.n), dtype=Z.dtype)
            for j in range(self.k):
                dXp[..., j:j + T, :] += dcols[..., :, j, :]
            dX = dXp[..., left:left + T, :]

            grads = {}
            for gi, g in enumerate(self.gates):
                grads[f"W_{g}"] = dW_all[:, gi * self.m:(gi + 1) * self.m].reshape(
                    self.k, self.n, self.m)
                grads[f"b_{g}"] = db_all[gi * self.m:(gi + 1) * self.m]
        return dX, grads, dc0, d_offsets

    def step(self, window, c_prev, gate_offsets=None):
        """One inference timestep from a rolling input window.

        window is the last k inputs [..., k, n] (zeros where the sequence
        has not started), c_prev the previous pooling state [..., m].
        Returns (h, c, o); o is None for f-pooling.  Purely functional:
        inputs are not modified.
        """
        W, b = self._fused_weights()
        A = window.reshape(window.shape[:-2] + (self.k * self.n,)) @ W + b
        if gate_offsets is not None:
            for gi, g in enumerate(self.gates):
                if g in gate_offsets:
                    A[..., gi * self.m:(gi + 1) * self.m] = (
                        A[..., gi * self.m:(gi + 1) * self.m] + gate_offsets[g])
        m = self.m
        Z = tanh(A[..., 0:m])
        F = sigmoid(A[..., m:2 * m])
        if self.pooling == "f":
            c = F * c_prev + (1 - F) * Z
            return c, c, None
        O = sigmoid(A[..., 2 * m:3 * m])
        if self.pooling == "fo":
            c = F * c_prev + (1 - F) * Z
        else:
            I = sigmoid(A[..., 3 * m:4 * m])
            c = F * c_prev + I * Z
        return O * c, c, O

    def num_params(self):
        return sum(p.size for p in self.params.values())


def _section(prof, name):
    if prof is None:
        return _NULL_CTX
    return prof.section(name)


class _NullCtx:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


_NULL_CTX = _NullCtx()


def write_states_csv(C, out_path):
    """Write a [T, m] state matrix as CSV: header c0..c{m-1}, one row per step."""
    C = np.asarray(C)
    if C.ndim != 2:
        raise DimensionError(f"state dump expects a [T, m] matrix, got {C.shape}")
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"c{j}" for j in range(C.shape[1])])
        for row in C:
            writer.writerow([repr(float(v)) for v in row])
