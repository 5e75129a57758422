"""Embedding + QRNN stack models for language modeling and classification."""

import numpy as np

from .errors import ArgumentError, DimensionError, VocabularyError
from .qrnn import write_states_csv, _section
from .regularization import QRNNStack
from .tensor import DEFAULT_DTYPE


class _EmbedStackModel:
    """Shared plumbing: token embedding, QRNN stack, linear head."""

    def __init__(self, vocab_size, embed_dim, hidden_dim, num_layers, out_dim,
                 filter_width=2, first_filter_width=None, pooling="fo",
                 masking="masked", zoneout=0.0, dropout=0.0, dense=False,
                 dtype=DEFAULT_DTYPE):
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.out_dim = out_dim
        self.dtype = dtype
        self.stack = QRNNStack(embed_dim, hidden_dim, num_layers,
                               filter_width=filter_width,
                               first_filter_width=first_filter_width,
                               pooling=pooling, masking=masking,
                               zoneout=zoneout, dropout=dropout,
                               dense=dense, dtype=dtype)
        self.embedding = None
        self.out_W = None
        self.out_b = None

    def init_params(self, rng):
        self.embedding = rng.uniform((self.vocab_size, self.embed_dim),
                                     -0.1, 0.1, dtype=self.dtype)
        self.stack.init_params(rng)
        r = 1.0 / np.sqrt(self.hidden_dim)
        self.out_W = rng.uniform((self.hidden_dim, self.out_dim), -r, r,
                                 dtype=self.dtype)
        self.out_b = np.zeros(self.out_dim, dtype=self.dtype)
        return self

    @property
    def params(self):
        out = {"embed.W": self.embedding}
        for name, value in self.stack.params.items():
            out[f"stack.{name}"] = value
        out["out.W"] = self.out_W
        out["out.b"] = self.out_b
        return out

    def load_params(self, tensors):
        mine = self.params
        for name, arr in mine.items():
            if name not in tensors:
                raise DimensionError(f"missing parameter {name}")
            if tensors[name].shape != arr.shape:
                raise DimensionError(
                    f"parameter {name}: shape {tensors[name].shape} != {arr.shape}")
            arr[...] = tensors[name].astype(self.dtype, copy=False)
        return self

    def _embed(self, ids):
        ids = np.asarray(ids)
        if ids.min() < 0 or ids.max() >= self.vocab_size:
            raise VocabularyError(
                f"token id outside vocabulary of size {self.vocab_size}")
        return self.embedding[ids]

    def num_params(self):
        return sum(p.size for p in self.params.values())


class SequenceLM(_EmbedStackModel):
    """Next-token model: embed -> masked QRNN stack -> vocabulary logits.

    Convolutions are always masked here; anything else would let position t
    peek at the token it must predict.
    """

    def __init__(self, vocab_size, embed_dim, hidden_dim, num_layers,
                 filter_width=2, pooling="fo", zoneout=0.0, dropout=0.0,
                 dense=False, dtype=DEFAULT_DTYPE):
        super().__init__(vocab_size, embed_dim, hidden_dim, num_layers,
                         out_dim=vocab_size, filter_width=filter_width,
                         pooling=pooling, masking="masked", zoneout=zoneout,
                         dropout=dropout, dense=dense, dtype=dtype)

    def forward(self, ids, rng=None, training=False, states=None, prof=None):
        """ids [B, T] -> (logits [B, T, V], cache, new_states)."""
        with _section(prof, "conv"):
            E = self._embed(ids)
        H, stack_cache, new_states = self.stack.forward(
            E, rng=rng, training=training, states=states, prof=prof)
        with _section(prof, "softmax"):
            logits = H @ self.out_W + self.out_b
        cache = None
        if training:
            cache = {"ids": np.asarray(ids), "H": H, "stack": stack_cache}
        return logits, cache, new_states

    def backward(self, cache, dlogits, prof=None):
        with _section(prof, "softmax"):
            H = cache["H"]
            h2 = H.reshape(-1, self.hidden_dim)
            dl2 = dlogits.reshape(-1, self.out_dim)
            grads = {"out.W": h2.T @ dl2, "out.b": dl2.sum(axis=0)}
            dH = dlogits @ self.out_W.T
        dE, stack_grads = self.stack.backward(cache["stack"], dH, prof=prof)
        for name, g in stack_grads.items():
            grads[f"stack.{name}"] = g
        with _section(prof, "conv"):
            dEmb = np.zeros_like(self.embedding)
            np.add.at(dEmb, cache["ids"], dE)
            grads["embed.W"] = dEmb
        return grads

    def state_sequence(self, ids):
        """Un-gated pooling states of the last layer for one sequence [T]."""
        ids = np.asarray(ids)
        if ids.ndim != 1:
            raise DimensionError("state_sequence expects a single id sequence")
        E = self._embed(ids[None, :])
        _, cache, _ = self.stack.forward(E, training=False, need_cache=True)
        return cache["caches"][-1].C[0]


class SequenceClassifier(_EmbedStackModel):
    """Document classifier: embed -> (densely connected) stack -> pooled readout."""

    def __init__(self, vocab_size, embed_dim, hidden_dim, num_layers,
                 num_classes=2, filter_width=2, pooling="fo", zoneout=0.0,
                 dropout=0.0, dense=True, readout="mean", dtype=DEFAULT_DTYPE):
        if readout not in ("mean", "final"):
            raise ArgumentError("readout must be 'mean' or 'final'")
        super().__init__(vocab_size, embed_dim, hidden_dim, num_layers,
                         out_dim=num_classes, filter_width=filter_width,
                         pooling=pooling, masking="masked", zoneout=zoneout,
                         dropout=dropout, dense=dense, dtype=dtype)
        self.readout = readout

    def forward(self, ids, lengths, rng=None, training=False):
        """ids [B, T] padded, lengths [B] true lengths -> (logits [B, C], cache)."""
        ids = np.asarray(ids)
        lengths = np.asarray(lengths)
        E = self._embed(ids)
        H, stack_cache, _ = self.stack.forward(E, rng=rng, training=training)
        B, T, m = H.shape
        if self.readout == "mean":
            mask = (np.arange(T)[None, :] < lengths[:, None])
            w = (mask / lengths[:, None]).astype(self.dtype)
            R = np.einsum("btm,bt->bm", H, w)
        else:
            R = H[np.arange(B), lengths - 1]
        logits = R @ self.out_W + self.out_b
        cache = None
        if training:
            cache = {"ids": ids, "lengths": lengths, "H": H, "R": R,
                     "stack": stack_cache}
        return logits, cache

    def backward(self, cache, dlogits):
        R, H = cache["R"], cache["H"]
        lengths = cache["lengths"]
        grads = {"out.W": R.T @ dlogits, "out.b": dlogits.sum(axis=0)}
        dR = dlogits @ self.out_W.T
        B, T, m = H.shape
        dH = np.zeros_like(H)
        if self.readout == "mean":
            mask = (np.arange(T)[None, :] < lengths[:, None])
            w = (mask / lengths[:, None]).astype(self.dtype)
            dH += dR[:, None, :] * w[:, :, None]
        else:
            dH[np.arange(B), lengths - 1] = dR
        dE, stack_grads = self.stack.backward(cache["stack"], dH)
        for name, g in stack_grads.items():
            grads[f"stack.{name}"] = g
        dEmb = np.zeros_like(self.embedding)
        np.add.at(dEmb, cache["ids"], dE)
        grads["embed.W"] = dEmb
        return grads

    def state_sequence(self, ids):
        ids = np.asarray(ids)
        E = self._embed(ids[None, :])
        _, cache, _ = self.stack.forward(E, training=False, need_cache=True)
        return cache["caches"][-1].C[0]


def dump_hidden_states(model, ids, out_path):
    """Write the final layer's per-timestep pooling states c_t to CSV.

    One row per timestep, one column per channel (header c0,c1,...); values
    are the raw un-gated states (for f-pooling the state is the output h).
    """
    C = model.state_sequence(ids)
    write_states_csv(C, out_path)
    return C
