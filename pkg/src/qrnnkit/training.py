"""Optimizers, gradient conditioning, losses, and evaluation metrics.

Gradient pipeline order per step: loss grads -> l2_apply -> rescale_gradients
-> optimizer step.  The L2 penalty is added to the gradients rather than the
loss so reported NLL stays comparable across coefficients.
"""

import math
from collections import Counter

import numpy as np

from .errors import ArgumentError, DimensionError


# ---------------------------------------------------------------------------
# Optimizers. All of them update parameter arrays in place so that any views
# held elsewhere (layer params, checkpoints dicts) stay consistent.

class SGD:
    """Plain stochastic gradient descent, no momentum: p <- p - lr * g."""

    def __init__(self, lr=1.0):
        self.lr = lr

    def step(self, params, grads):
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise DimensionError(f"grad shape {g.shape} != param {p.shape} ({name})")
            p -= p.dtype.type(self.lr) * g


class RMSprop:
    """s <- a*s + (1-a)*g^2;  p <- p - lr * g / (sqrt(s) + eps)."""

    def __init__(self, lr=0.001, alpha=0.9, eps=1e-8):
        self.lr = lr
        self.alpha = alpha
        self.eps = eps
        self.state = {}

    def step(self, params, grads):
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise DimensionError(f"grad shape {g.shape} != param {p.shape} ({name})")
            s = self.state.get(name)
            if s is None:
                s = self.state[name] = np.zeros_like(p)
            s *= p.dtype.type(self.alpha)
            s += p.dtype.type(1 - self.alpha) * g * g
            p -= p.dtype.type(self.lr) * g / (np.sqrt(s) + p.dtype.type(self.eps))


class Adam:
    """Bias-corrected Adam. First step moves every touched weight by exactly lr."""

    def __init__(self, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.state = {}

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise DimensionError(f"grad shape {g.shape} != param {p.shape} ({name})")
            st = self.state.get(name)
            if st is None:
                st = self.state[name] = (np.zeros_like(p), np.zeros_like(p))
            m, v = st
            m *= p.dtype.type(b1)
            m += p.dtype.type(1 - b1) * g
            v *= p.dtype.type(b2)
            v += p.dtype.type(1 - b2) * g * g
            mhat = m / p.dtype.type(corr1)
            vhat = v / p.dtype.type(corr2)
            p -= p.dtype.type(self.lr) * mhat / (np.sqrt(vhat) + p.dtype.type(self.eps))


def make_optimizer(name, lr, rmsprop_alpha=0.9, adam_beta1=0.9, adam_beta2=0.999,
                   eps=1e-8):
    if name == "sgd":
        return SGD(lr)
    if name == "rmsprop":
        return RMSprop(lr, alpha=rmsprop_alpha, eps=eps)
    if name == "adam":
        return Adam(lr, beta1=adam_beta1, beta2=adam_beta2, eps=eps)
    raise ArgumentError(f"unknown optimizer {name!r}")


def rescale_gradients(grads, max_norm):
    """Scale all grads by max_norm/norm when the global L2 norm exceeds max_norm.

    Direction is preserved exactly; zero gradients pass through untouched.
    """
    if max_norm <= 0:
        raise ArgumentError("max_norm must be positive")
    total = 0.0
    for g in grads.values():
        total += float(np.vdot(g, g))
    norm = math.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= g.dtype.type(scale)
    return grads


def l2_apply(grads, params, coeff):
    """Weight decay as a gradient term: g <- g + coeff * p."""
    if coeff < 0:
        raise ArgumentError("L2 coefficient must be >= 0")
    if coeff == 0:
        return grads
    for name, g in grads.items():
        g += g.dtype.type(coeff) * params[name]
    return grads


def lr_schedule(epoch, initial=1.0, flat_epochs=6, decay=0.95):
    """Constant for the first flat_epochs, then multiplied by decay per epoch."""
    if epoch <= flat_epochs:
        return initial
    return initial * decay ** (epoch - flat_epochs)


def log_softmax(logits, axis=-1):
    m = np.max(logits, axis=axis, keepdims=True)
    shifted = logits - m
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    return shifted - lse


def nll_loss(log_probs, targets, pad_id=None):
    """Mean negative log-likelihood plus the fused-softmax gradient.

    log_probs holds log-softmax rows [..., V]; targets the index per row.
    Rows whose target equals pad_id are excluded from the mean and get a
    zero gradient.  Returns (loss, dlogits) where dlogits is the gradient
    w.r.t. the logits that produced log_probs: (softmax - onehot) / count.
    """
    log_probs = np.asarray(log_probs)
    targets = np.asarray(targets)
    V = log_probs.shape[-1]
    if targets.min() < 0 or targets.max() >= V:
        raise ArgumentError(f"target index outside [0, {V})")
    flat_lp = log_probs.reshape(-1, V)
    flat_t = targets.reshape(-1)
    if pad_id is None:
        keep = np.ones(flat_t.shape, dtype=bool)
    else:
        keep = flat_t != pad_id
    count = int(keep.sum())
    if count == 0:
        raise ArgumentError("no non-pad targets to average over")
    rows = np.arange(flat_t.shape[0])
    picked = flat_lp[rows, flat_t]
    loss = -float(picked[keep].sum()) / count
    dlogits = np.exp(flat_lp)
    dlogits[rows, flat_t] -= 1.0
    dlogits[~keep] = 0.0
    dlogits /= dlogits.dtype.type(count)
    return loss, dlogits.reshape(log_probs.shape)


def perplexity(mean_nll):
    """exp of the mean per-token NLL (natural log throughout)."""
    return float(np.exp(mean_nll))


def unigram_perplexity(train_ids, valid_ids, vocab_size):
    """Counting-oracle baseline: add-one-smoothed unigram fit on train_ids,
    perplexity evaluated on valid_ids."""
    counts = np.bincount(np.asarray(train_ids), minlength=vocab_size).astype(np.float64)
    probs = (counts + 1.0) / (counts.sum() + vocab_size)
    nll = -float(np.mean(np.log(probs[np.asarray(valid_ids)])))
    return perplexity(nll)


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _tokens(text, level):
    if level == "char":
        return list(text)
    if level == "word":
        return text.split()
    raise ArgumentError(f"level must be 'char' or 'word', got {level!r}")


def corpus_bleu(hypotheses, references, max_n=4, level="word", smooth=False):
    """Corpus BLEU in [0, 1]: geometric mean of clipped n-gram precisions
    times a brevity penalty.

    Orders with zero candidate n-grams anywhere in the corpus are skipped;
    with smoothing off, any remaining order with zero matches gives 0.
    Smoothing is add-one on match and candidate counts.
    """
    if len(hypotheses) != len(references):
        raise ArgumentError("hypothesis/reference counts differ")
    if not hypotheses:
        raise ArgumentError("empty corpus")
    matches = [0] * max_n
    candidates = [0] * max_n
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        h = _tokens(hyp, level)
        r = _tokens(ref, level)
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, max_n + 1):
            hc = _ngrams(h, n)
            rc = _ngrams(r, n)
            candidates[n - 1] += max(len(h) - n + 1, 0)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
    log_prec = 0.0
    orders = 0
    for n in range(max_n):
        if candidates[n] == 0:
            continue
        orders += 1
        num, den = matches[n], candidates[n]
        if smooth:
            num, den = num + 1, den + 1
        if num == 0:
            return 0.0
        log_prec += math.log(num / den)
    if orders == 0 or hyp_len == 0:
        return 0.0
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(log_prec / orders)
