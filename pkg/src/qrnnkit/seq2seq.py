"""Attentional encoder-decoder built from quasi-recurrent layers.

The encoder is a plain stack (convolutions optionally un-masked, source
optionally fed reversed).  Each decoder layer's convolution output is
supplemented at every timestep by a linear projection of that layer's
final encoder state, so the encoder can steer the decoder's gates.  The
last decoder layer feeds attention: dot-product scores between its
un-gated states and the encoder's last-layer outputs, a softmax over
source positions, and an output-gated mix of context and state.

Decoding offers greedy and beam search with a length-bonus ranking
criterion that interpolates between raw and length-normalized
log-probability scoring.
"""

from dataclasses import dataclass

import numpy as np

from .data import BOS, EOS
from .errors import ArgumentError, DimensionError, VocabularyError
from .qrnn import QRNNLayer, masked_conv1d
from .regularization import _dropout_with_mask
from .tensor import DEFAULT_DTYPE, sigmoid, softmax, tanh
from .training import log_softmax

DECODER_GATES = ("z", "f", "o")


# ---------------------------------------------------------------------------
# Attention over encoder states.

def attend_forward(C, Htil, O, W_k, W_c):
    """Attention head: returns (H, cache).

    C [..., T, m] decoder un-gated states, Htil [..., S, m] encoder
    last-layer outputs, O [..., T, m] decoder output gate.  Scores are
    plain dot products, normalized over source positions; the context and
    state are mixed linearly and gated:
        alpha = softmax_s(c_t . htil_s);  k_t = sum_s alpha * htil_s;
        h_t = o_t * (W_k k_t + W_c c_t).
    """
    if C.shape[-1] != Htil.shape[-1]:
        raise DimensionError(
            f"state widths disagree: {C.shape[-1]} vs {Htil.shape[-1]}")
    scores = np.matmul(C, np.swapaxes(Htil, -1, -2))
    alpha = softmax(scores, axis=-1)
    K = np.matmul(alpha, Htil)
    P = K @ W_k.T + C @ W_c.T
    H = O * P
    return H, {"C": C, "Htil": Htil, "O": O, "alpha": alpha, "K": K, "P": P,
               "W_k": W_k, "W_c": W_c}


def attend(C, Htil, O, W_k, W_c):
    """Attention head output alone (see attend_forward)."""
    return attend_forward(C, Htil, O, W_k, W_c)[0]


def attend_backward(cache, dH):
    """Gradients of attend: returns (dC, dO, dHtil, dW_k, dW_c)."""
    C, Htil, O = cache["C"], cache["Htil"], cache["O"]
    alpha, K, P = cache["alpha"], cache["K"], cache["P"]
    W_k, W_c = cache["W_k"], cache["W_c"]
    m = C.shape[-1]
    dO = dH * P
    dP = dH * O
    dP2 = dP.reshape(-1, m)
    dW_k = dP2.T @ K.reshape(-1, m)
    dW_c = dP2.T @ C.reshape(-1, m)
    dK = dP @ W_k
    dC = dP @ W_c
    dalpha = np.matmul(dK, np.swapaxes(Htil, -1, -2))
    dHtil = np.matmul(np.swapaxes(alpha, -1, -2), dK)
    dscores = alpha * (dalpha - np.sum(alpha * dalpha, axis=-1, keepdims=True))
    dC = dC + np.matmul(dscores, Htil)
    dHtil = dHtil + np.matmul(np.swapaxes(dscores, -1, -2), C)
    return dC, dO, dHtil, dW_k, dW_c


def decoder_conv_supplemented(X, banks, biases, V, htil_T, masking="masked"):
    """Decoder gate sequences: conv output plus a broadcast projected encoder state.

    banks/biases/V are dicts over gates "z", "f", "o"; htil_T [..., m] is the
    encoder layer's final state.  Returns (Z, F, O).
    """
    out = []
    for g, act in (("z", tanh), ("f", sigmoid), ("o", sigmoid)):
        A = masked_conv1d(X, banks[g], biases[g], masking)
        A = A + (np.asarray(htil_T) @ V[g].T)[..., None, :]
        out.append(act(A))
    return tuple(out)


# ---------------------------------------------------------------------------
# Length-bonus hypothesis ranking.

def rank_hypothesis(sum_logp, length, target_length, alpha):
    """Beam ranking score: prod_{t=length..target_length} ((t+alpha)/t) * sum_logp.

    The empty product (length > target_length) is 1, so hypotheses at or
    past the target length are ranked by raw summed log-probability.  At
    alpha=0 this is ordinary beam scoring; at alpha=1 the factor telescopes
    to (target_length+1)/length, i.e. length normalization up to the
    target length.
    """
    if length < 1:
        raise ArgumentError("hypothesis length must be >= 1")
    factor = 1.0
    for t in range(length, target_length + 1):
        factor *= (t + alpha) / t
    return factor * sum_logp


@dataclass
class Hypothesis:
    tokens: tuple          # starts with BOS
    sum_logp: float
    state: object          # per-layer decode state; None once finished
    finished: bool
    score: float


@dataclass
class BeamResult:
    tokens: list           # generated ids, including the closing EOS if finished
    finished: bool
    score: float
    sum_logp: float

    @property
    def output_ids(self):
        return [t for t in self.tokens if t != EOS]


def beam_search(model, src_ids, beam_width=4, alpha=0.0, max_len=128):
    """Beam decode; returns the best finished hypothesis, or the best
    unfinished one (flagged) if none finished within max_len.

    Finished hypotheses keep competing for beam slots at their final score.
    The target length for the ranking bonus is the source length plus five.
    Ties break toward the lexicographically smaller token sequence.
    """
    src_ids = list(src_ids)
    if not src_ids:
        raise ArgumentError("empty source sequence")
    if beam_width < 1 or max_len < 1:
        raise ArgumentError("beam_width and max_len must be >= 1")
    t_trg = len(src_ids) + 5
    session = model.begin_decode(src_ids)
    beam = [Hypothesis(tokens=(BOS,), sum_logp=0.0,
                       state=session.initial_state(), finished=False,
                       score=-np.inf)]
    for _ in range(max_len):
        active = [h for h in beam if not h.finished]
        if not active:
            break
        logp, new_states = session.step([h.state for h in active],
                                        [h.tokens[-1] for h in active])
        candidates = [h for h in beam if h.finished]
        for i, h in enumerate(active):
            gen_len = len(h.tokens)        # generated count after this step
            row = logp[i]
            order = np.argsort(-row, kind="stable")[:beam_width]
            for v in order:
                v = int(v)
                s = h.sum_logp + float(row[v])
                candidates.append(Hypothesis(
                    tokens=h.tokens + (v,), sum_logp=s,
                    state=None if v == EOS else new_states[i],
                    finished=v == EOS,
                    score=rank_hypothesis(s, gen_len, t_trg, alpha)))
        candidates.sort(key=lambda c: (-c.score, c.tokens))
        beam = candidates[:beam_width]
    finished = [h for h in beam if h.finished]
    pool = finished if finished else beam
    best = min(pool, key=lambda c: (-c.score, c.tokens))
    return BeamResult(tokens=list(best.tokens[1:]), finished=best.finished,
                      score=best.score, sum_logp=best.sum_logp)


def greedy_decode(model, src_ids, max_len=128):
    """Argmax decoding (ties to the lowest token id)."""
    src_ids = list(src_ids)
    if not src_ids:
        raise ArgumentError("empty source sequence")
    session = model.begin_decode(src_ids)
    state = session.initial_state()
    tokens = []
    total = 0.0
    last = BOS
    finished = False
    for _ in range(max_len):
        logp, states = session.step([state], [last])
        v = int(np.argmax(logp[0]))
        total += float(logp[0, v])
        tokens.append(v)
        if v == EOS:
            finished = True
            break
        state = states[0]
        last = v
    return BeamResult(tokens=tokens, finished=finished, score=total,
                      sum_logp=total)


def decode_training(model, src_ids, tgt_ids):
    """Teacher-forced per-position log-probabilities [len(tgt)+1, V].

    The decoder input is BOS followed by tgt_ids; row t is the model's
    log-softmax over the token at position t (the last row predicts EOS).
    """
    dec_in = np.asarray([BOS] + list(tgt_ids), dtype=np.int64)
    logits, _ = model.forward_train(np.asarray(src_ids, dtype=np.int64)[None, :],
                                    dec_in[None, :], training=False)
    return log_softmax(logits[0])


# ---------------------------------------------------------------------------
# The model.

class _DecodeState:
    __slots__ = ("windows", "cs")

    def __init__(self, windows, cs):
        self.windows = windows   # per layer [k, n_l]
        self.cs = cs             # per layer [m]


class DecodeSession:
    """Incremental decoding context for one source sentence.

    Keeps per layer only the previous pooling state plus the last k-1
    layer inputs (enough for a width-k masked convolution), and the
    constant per-layer encoder supplements.
    """

    def __init__(self, model, src_ids):
        self.model = model
        htil_T, Htil = model.encode(src_ids)
        self.Htil = Htil
        self.offsets = []
        for ell in range(model.num_layers):
            self.offsets.append({
                g: htil_T[ell] @ model.params[f"dec.l{ell}.V_{g}"].T
                for g in DECODER_GATES})

    def initial_state(self):
        m = self.model
        windows = [np.zeros((layer.k, layer.n), dtype=m.dtype)
                   for layer in m.dec_layers]
        cs = [np.zeros(m.hidden_dim, dtype=m.dtype) for _ in m.dec_layers]
        return _DecodeState(windows, cs)

    def step(self, states, tokens):
        """Advance each hypothesis one timestep; returns (logp [n, V], new_states)."""
        model = self.model
        n = len(states)
        x = model.tgt_embedding[np.asarray(tokens, dtype=np.int64)]
        new_windows = []
        new_cs = []
        carry = x
        for ell, layer in enumerate(model.dec_layers):
            win = np.stack([s.windows[ell] for s in states])
            win = np.concatenate([win[:, 1:], carry[:, None, :]], axis=1)
            c_prev = np.stack([s.cs[ell] for s in states])
            h, c, o = layer.step(win, c_prev, gate_offsets=self.offsets[ell])
            new_windows.append(win)
            new_cs.append(c)
            if ell == model.num_layers - 1:
                scores = c @ self.Htil.T
                alpha = softmax(scores, axis=-1)
                context = alpha @ self.Htil
                h = o * (context @ model.params["attn.W_k"].T
                         + c @ model.params["attn.W_c"].T)
            carry = h
        logits = carry @ model.out_W + model.out_b
        logp = log_softmax(logits)
        new_states = [
            _DecodeState([new_windows[ell][i] for ell in range(model.num_layers)],
                         [new_cs[ell][i] for ell in range(model.num_layers)])
            for i in range(n)]
        return logp, new_states


class Seq2SeqModel:
    """Encoder-decoder QRNN with encoder-state-supplemented decoder gates.

    Encoder and decoder share layer count and hidden size; decoder
    convolutions are always masked, encoder masking is configurable (the
    translation recipe leaves them centered).  The source can be fed
    reversed.
    """

    def __init__(self, src_vocab_size, tgt_vocab_size, embed_dim, hidden_dim,
                 num_layers, filter_width=2, enc_first_width=None,
                 enc_masking="unmasked", reverse_source=True, zoneout=0.0,
                 dropout=0.0, dtype=DEFAULT_DTYPE):
        self.src_vocab_size = src_vocab_size
        self.tgt_vocab_size = tgt_vocab_size
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        self.reverse_source = reverse_source
        self.dropout = dropout
        self.dtype = dtype
        self.enc_layers = []
        self.dec_layers = []
        for ell in range(num_layers):
            n_in = embed_dim if ell == 0 else hidden_dim
            k_enc = enc_first_width if (ell == 0 and enc_first_width) else filter_width
            self.enc_layers.append(QRNNLayer(
                n_in, hidden_dim, filter_width=k_enc, pooling="fo",
                masking=enc_masking, zoneout=zoneout, dtype=dtype))
            self.dec_layers.append(QRNNLayer(
                n_in, hidden_dim, filter_width=filter_width, pooling="fo",
                masking="masked", zoneout=zoneout, dtype=dtype))
        self.V = [{} for _ in range(num_layers)]
        self.src_embedding = None
        self.tgt_embedding = None
        self.attn_W_k = None
        self.attn_W_c = None
        self.out_W = None
        self.out_b = None

    def init_params(self, rng):
        d, m = self.embed_dim, self.hidden_dim
        self.src_embedding = rng.uniform((self.src_vocab_size, d), -0.1, 0.1,
                                         dtype=self.dtype)
        self.tgt_embedding = rng.uniform((self.tgt_vocab_size, d), -0.1, 0.1,
                                         dtype=self.dtype)
        r = 1.0 / np.sqrt(m)
        for ell in range(self.num_layers):
            self.enc_layers[ell].init_params(rng)
            self.dec_layers[ell].init_params(rng)
            for g in DECODER_GATES:
                self.V[ell][g] = rng.uniform((m, m), -r, r, dtype=self.dtype)
        self.attn_W_k = rng.uniform((m, m), -r, r, dtype=self.dtype)
        self.attn_W_c = rng.uniform((m, m), -r, r, dtype=self.dtype)
        self.out_W = rng.uniform((m, self.tgt_vocab_size), -r, r, dtype=self.dtype)
        self.out_b = np.zeros(self.tgt_vocab_size, dtype=self.dtype)
        return self

    @property
    def params(self):
        out = {"src_embed.W": self.src_embedding, "tgt_embed.W": self.tgt_embedding}
        for ell in range(self.num_layers):
            for name, value in self.enc_layers[ell].params.items():
                out[f"enc.l{ell}.{name}"] = value
            for name, value in self.dec_layers[ell].params.items():
                out[f"dec.l{ell}.{name}"] = value
            for g in DECODER_GATES:
                out[f"dec.l{ell}.V_{g}"] = self.V[ell][g]
        out["attn.W_k"] = self.attn_W_k
        out["attn.W_c"] = self.attn_W_c
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

    def num_params(self):
        return sum(p.size for p in self.params.values())

    def _embed(self, table, ids, size):
        ids = np.asarray(ids)
        if ids.size == 0:
            raise ArgumentError("empty id sequence")
        if ids.min() < 0 or ids.max() >= size:
            raise VocabularyError(f"token id outside vocabulary of size {size}")
        return table[ids]

    def _process_source(self, src_ids):
        src_ids = np.asarray(src_ids, dtype=np.int64)
        return src_ids[..., ::-1] if self.reverse_source else src_ids

    def encode(self, src_ids):
        """Single sequence -> (per-layer final states [m], last-layer sequence [S, m]).

        The final states are the gated pooling outputs at the last processed
        position (source reversal, when on, happens before embedding).
        """
        src = self._process_source(src_ids)
        if src.ndim != 1:
            raise DimensionError("encode expects a single id sequence")
        x = self._embed(self.src_embedding, src, self.src_vocab_size)
        htil_T = []
        for layer in self.enc_layers:
            x, _, _ = layer.forward(x, training=False)
            htil_T.append(x[-1, :].copy())
        return htil_T, x

    def begin_decode(self, src_ids):
        return DecodeSession(self, src_ids)

    def forward_train(self, src_ids, tgt_in_ids, rng=None, training=True):
        """Teacher-forced forward over batches src [B, S], decoder input [B, T].

        Returns (logits [B, T, V], cache); cache is None unless training.
        """
        src = self._process_source(src_ids)
        E_src = self._embed(self.src_embedding, src, self.src_vocab_size)
        x = E_src
        enc_caches = []
        htil_T = []
        for layer in self.enc_layers:
            x_in, mask = _dropout_with_mask(x, self.dropout, rng, training)
            H, cache, _ = layer.forward(x_in, rng=rng, training=training)
            enc_caches.append((cache, mask))
            htil_T.append(H[..., -1, :])
            x = H
        Htil = x

        tgt_in = np.asarray(tgt_in_ids, dtype=np.int64)
        E_tgt = self._embed(self.tgt_embedding, tgt_in, self.tgt_vocab_size)
        x = E_tgt
        dec_caches = []
        offsets_all = []
        C_dec = O_dec = None
        last = self.num_layers - 1
        for ell, layer in enumerate(self.dec_layers):
            x_in, mask = _dropout_with_mask(x, self.dropout, rng, training)
            offs = {g: htil_T[ell] @ self.V[ell][g].T for g in DECODER_GATES}
            H, cache, _ = layer.forward(x_in, rng=rng, training=training,
                                        gate_offsets=offs,
                                        need_cache=training or ell == last)
            dec_caches.append((cache, mask))
            offsets_all.append(offs)
            if ell == last:
                C_dec, O_dec = cache.C, cache.O
            x = H
        H_att, att_cache = attend_forward(C_dec, Htil, O_dec,
                                          self.attn_W_k, self.attn_W_c)
        logits = H_att @ self.out_W + self.out_b
        cache = None
        if training:
            cache = {"src": src, "tgt_in": tgt_in, "enc": enc_caches,
                     "dec": dec_caches, "htil_T": htil_T, "att": att_cache,
                     "H_att": H_att}
        return logits, cache

    def backward(self, cache, dlogits):
        """Gradients for every parameter from a forward_train cache."""
        m, V = self.hidden_dim, self.tgt_vocab_size
        grads = {}
        H2 = cache["H_att"].reshape(-1, m)
        dl2 = dlogits.reshape(-1, V)
        grads["out.W"] = H2.T @ dl2
        grads["out.b"] = dl2.sum(axis=0)
        dH_att = dlogits @ self.out_W.T

        dC, dO, dHtil, dW_k, dW_c = attend_backward(cache["att"], dH_att)
        grads["attn.W_k"] = dW_k
        grads["attn.W_c"] = dW_c

        htil_T = cache["htil_T"]
        dhtil_T = [None] * self.num_layers
        d = None
        for ell in range(self.num_layers - 1, -1, -1):
            layer_cache, mask = cache["dec"][ell]
            if ell == self.num_layers - 1:
                dX, layer_grads, _, doffs = self.dec_layers[ell].backward(
                    layer_cache, dH=None, dC_extra=dC, dO_extra=dO)
            else:
                dX, layer_grads, _, doffs = self.dec_layers[ell].backward(
                    layer_cache, dH=d)
            for name, g in layer_grads.items():
                grads[f"dec.l{ell}.{name}"] = g
            ht = htil_T[ell]
            dht = None
            for g in DECODER_GATES:
                dog = doffs[g]
                grads[f"dec.l{ell}.V_{g}"] = dog.reshape(-1, m).T @ ht.reshape(-1, m)
                contrib = dog @ self.V[ell][g]
                dht = contrib if dht is None else dht + contrib
            dhtil_T[ell] = dht
            if mask is not None:
                dX = dX * mask
            d = dX
        dE_tgt = d
        dTgtEmb = np.zeros_like(self.tgt_embedding)
        np.add.at(dTgtEmb, cache["tgt_in"], dE_tgt)
        grads["tgt_embed.W"] = dTgtEmb

        dH = dHtil
        for ell in range(self.num_layers - 1, -1, -1):
            dH[..., -1, :] += dhtil_T[ell]
            layer_cache, mask = cache["enc"][ell]
            dX, layer_grads, _, _ = self.enc_layers[ell].backward(layer_cache, dH=dH)
            for name, g in layer_grads.items():
                grads[f"enc.l{ell}.{name}"] = g
            if mask is not None:
                dX = dX * mask
            dH = dX
        dSrcEmb = np.zeros_like(self.src_embedding)
        np.add.at(dSrcEmb, cache["src"], dH)
        grads["src_embed.W"] = dSrcEmb
        return grads
