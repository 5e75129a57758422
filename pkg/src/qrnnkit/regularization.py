"""Regularization: zoneout on forget gates, inverted dropout, dense stacking.

Zoneout pins a random subset of forget-gate entries to 1 each timestep,
which makes the pooling copy state for those channels; it deliberately
does NOT rescale.  Interlayer dropout is the ordinary inverted kind, so
inference is an exact identity for both.
"""

import numpy as np

from .errors import ArgumentError, ConfigError
from .qrnn import QRNNLayer
from .tensor import bernoulli_mask


def zoneout_gate(F, rate, rng=None, training=False):
    """Replace each forget-gate entry by 1 with probability ``rate`` (training only).

    F' = 1 - mask * (1 - F) with mask ~ Bernoulli(keep = 1 - rate) and no
    rescaling; since the mask is exactly 0/1 this is evaluated as a select,
    which keeps surviving entries bit-identical and zoned entries exactly 1.
    """
    if not 0.0 <= rate < 1.0:
        raise ArgumentError(f"zoneout rate must be in [0, 1), got {rate}")
    F = np.asarray(F)
    if not training or rate == 0.0:
        return F
    mask = bernoulli_mask(rng, F.shape, 1.0 - rate, dtype=F.dtype)
    return np.where(mask == 0, F.dtype.type(1), F)


def interlayer_dropout(X, rate, rng=None, training=False):
    """Inverted dropout: zero with probability ``rate``, scale survivors by 1/(1-rate)."""
    X, mask = _dropout_with_mask(X, rate, rng, training)
    return X


def _dropout_with_mask(X, rate, rng, training):
    if not 0.0 <= rate < 1.0:
        raise ArgumentError(f"dropout rate must be in [0, 1), got {rate}")
    X = np.asarray(X)
    if not training or rate == 0.0:
        return X, None
    mask = bernoulli_mask(rng, X.shape, 1.0 - rate, dtype=X.dtype)
    mask /= X.dtype.type(1.0 - rate)
    return X * mask, mask


class QRNNStack:
    """A stack of quasi-recurrent layers, plain or densely connected.

    Dense mode concatenates the embedding and every earlier layer's output
    along channels to form each layer's input (so layer l has input width
    n_embed + (l-1)*m); plain mode chains layer outputs.  Interlayer
    dropout is applied to each layer's full input when training (covering
    the embeddings-to-first-layer hop too); the stack's result is the last
    layer's output alone.
    """

    def __init__(self, embed_dim, hidden_dim, num_layers, filter_width=2,
                 pooling="fo", masking="masked", zoneout=0.0, dropout=0.0,
                 dense=False, first_filter_width=None, dtype=np.float32):
        if num_layers < 1:
            raise ConfigError("stack needs at least one layer")
        self.dense = dense
        self.dropout = dropout
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.layers = []
        for ell in range(num_layers):
            if dense:
                n_in = embed_dim + ell * hidden_dim
            else:
                n_in = embed_dim if ell == 0 else hidden_dim
            k = first_filter_width if (ell == 0 and first_filter_width) else filter_width
            self.layers.append(QRNNLayer(
                n_in, hidden_dim, filter_width=k, pooling=pooling,
                masking=masking, zoneout=zoneout, dtype=dtype))

    def init_params(self, rng):
        for layer in self.layers:
            layer.init_params(rng)
        return self

    @property
    def params(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for name, value in layer.params.items():
                out[f"l{i}.{name}"] = value
        return out

    def num_params(self):
        return sum(layer.num_params() for layer in self.layers)

    def forward(self, E, rng=None, training=False, states=None, need_cache=None,
                prof=None):
        """Run the stack over embedded input E [..., T, n_embed].

        states is an optional per-layer list of pooling states carried from
        the previous window.  Returns (H_last, cache, new_states); new
        states are detached copies.
        """
        if states is None:
            states = [None] * len(self.layers)
        if need_cache is None:
            need_cache = training
        caches = []
        drop_masks = []
        new_states = []
        blocks = [np.asarray(E)]
        x = blocks[0]
        for ell, layer in enumerate(self.layers):
            if self.dense:
                x = blocks[0] if ell == 0 else np.concatenate(blocks, axis=-1)
            x_in, mask = _dropout_with_mask(x, self.dropout, rng, training)
            H, cache, last = layer.forward(x_in, rng=rng, training=training,
                                           c0=states[ell], need_cache=need_cache,
                                           prof=prof)
            if need_cache:
                caches.append(cache)
                drop_masks.append(mask)
            new_states.append(last)
            blocks.append(H)
            x = H
        stack_cache = None
        if need_cache:
            stack_cache = {"caches": caches, "masks": drop_masks,
                           "widths": [b.shape[-1] for b in blocks[:-1]]}
        return blocks[-1], stack_cache, new_states

    def backward(self, stack_cache, dH_last, prof=None):
        """Returns (dE, grads) with grads keyed like ``params``."""
        caches = stack_cache["caches"]
        masks = stack_cache["masks"]
        widths = stack_cache["widths"]
        L = len(self.layers)
        grads = {}
        if self.dense:
            # d_blocks[0] is dE, d_blocks[j] is d(output of layer j).
            d_blocks = [None] * (L + 1)
            d_blocks[L] = dH_last
            for ell in range(L - 1, -1, -1):
                layer = self.layers[ell]
                dX, layer_grads, _, _ = layer.backward(
                    caches[ell], dH=d_blocks[ell + 1], prof=prof)
                if masks[ell] is not None:
                    dX = dX * masks[ell]
                offset = 0
                n_blocks = 1 if ell == 0 else ell + 1
                for j in range(n_blocks):
                    w = widths[j]
                    piece = dX[..., offset:offset + w]
                    d_blocks[j] = piece if d_blocks[j] is None else d_blocks[j] + piece
                    offset += w
                for name, g in layer_grads.items():
                    grads[f"l{ell}.{name}"] = g
            dE = d_blocks[0]
        else:
            d = dH_last
            for ell in range(L - 1, -1, -1):
                dX, layer_grads, _, _ = self.layers[ell].backward(
                    caches[ell], dH=d, prof=prof)
                if masks[ell] is not None:
                    dX = dX * masks[ell]
                d = dX
                for name, g in layer_grads.items():
                    grads[f"l{ell}.{name}"] = g
            dE = d
        return dE, grads
