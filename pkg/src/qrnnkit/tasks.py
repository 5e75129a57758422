"""End-to-end task runners: LM, classification, translation, state dumps.

Each trainer writes to the run's output directory: the resolved config
echo, a per-epoch CSV log (also printed), final and best-validation
checkpoints, and a metrics summary.  Runs are reproducible from (config,
seed, corpus files) alone.
"""

import json
import os
import sys
import time
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import data as D
from .checkpoint import load_checkpoint, save_checkpoint
from .config import parse_config_text, render_config
from .errors import ArgumentError, ConfigError
from .models import SequenceClassifier, SequenceLM, dump_hidden_states
from .seq2seq import Seq2SeqModel, beam_search
from .tensor import Rng
from .training import (l2_apply, log_softmax, lr_schedule, make_optimizer,
                       nll_loss, perplexity, rescale_gradients)

LOG_HEADER = "epoch,lr,train_nll,valid_nll,valid_ppl,seconds"


@dataclass
class RunResult:
    out_dir: str
    checkpoint: str
    best_checkpoint: str
    best_valid_nll: float
    best_valid_ppl: float
    final_valid_nll: float
    log_rows: list
    extra: dict


class _RunLog:
    def __init__(self, out_dir, echo=True):
        self.rows = []
        self.echo = echo
        self.path = os.path.join(out_dir, "train-log.csv")
        with open(self.path, "w", encoding="utf-8") as fh:
            fh.write(LOG_HEADER + "\n")
        if echo:
            print(LOG_HEADER)

    def row(self, epoch, lr, train_nll, valid_nll, seconds):
        line = (f"{epoch},{lr:.6g},{train_nll:.6f},{valid_nll:.6f},"
                f"{perplexity(valid_nll):.4f},{seconds:.3f}")
        self.rows.append(line)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
        if self.echo:
            print(line)


def _prepare_out(cfg):
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, "config-resolved.cfg"), "w",
              encoding="utf-8") as fh:
        fh.write(render_config(cfg, include_runtime=True))


def _optimizer(cfg):
    t = cfg.train
    return make_optimizer(t.optimizer, t.lr, rmsprop_alpha=t.rmsprop_alpha,
                          adam_beta1=t.adam_beta1, adam_beta2=t.adam_beta2,
                          eps=t.eps)


def _apply_grad_pipeline(cfg, model, grads):
    if cfg.train.l2 > 0:
        l2_apply(grads, model.params, cfg.train.l2)
    if cfg.train.max_grad_norm > 0:
        rescale_gradients(grads, cfg.train.max_grad_norm)
    return grads


def _save_model(path, cfg, model, vocabs):
    tensors = {}
    for name, vocab in vocabs.items():
        tensors[f"vocab.{name}"] = np.frombuffer(
            vocab.to_json().encode("utf-8"), dtype=np.uint8).copy()
    for name, p in model.params.items():
        tensors[f"param.{name}"] = p
    save_checkpoint(path, render_config(cfg, include_runtime=False), tensors)


def _snapshot(model):
    return {name: p.copy() for name, p in model.params.items()}


def _write_metrics(cfg, payload):
    with open(os.path.join(cfg.out, "metrics.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Language modeling.

def _lm_splits(cfg):
    text = D.read_text(cfg.data.train)
    if cfg.data.valid:
        return text, D.read_text(cfg.data.valid)
    n_valid = max(1, int(len(text) * cfg.data.valid_fraction))
    return text[:-n_valid], text[-n_valid:]


def build_lm(cfg, vocab_size, dtype=np.float32):
    m = cfg.model
    return SequenceLM(vocab_size, m.embed, m.hidden, m.layers, filter_width=m.k,
                      pooling=m.pooling, zoneout=cfg.train.zoneout,
                      dropout=cfg.train.dropout, dense=m.dense, dtype=dtype)


def evaluate_lm(model, ids, batch_size, bptt):
    """Mean per-token NLL over a stream, state carried across windows."""
    if len(ids) < batch_size * 2:
        batch_size = max(1, len(ids) // (bptt + 1)) or 1
        batch_size = max(1, min(batch_size, len(ids) // 2))
    total, count = 0.0, 0
    states = None
    for batch in D.batch_lm(ids, batch_size, bptt):
        if not batch.continued:
            states = None
        logits, _, states = model.forward(batch.inputs, training=False,
                                          states=states)
        loss, _ = nll_loss(log_softmax(logits), batch.targets, pad_id=D.PAD)
        total += loss * batch.targets.size
        count += batch.targets.size
    return total / count


def train_lm(cfg, echo=True):
    _prepare_out(cfg)
    rng = Rng(cfg.seed)
    train_text, valid_text = _lm_splits(cfg)
    counts = Counter(D._split(train_text, cfg.data.level))
    vocab = D.Vocabulary.from_counts(counts, cfg.data.level,
                                     max_size=cfg.data.vocab_max or None)
    train_ids = np.asarray(vocab.encode(train_text), dtype=np.int64)
    valid_ids = np.asarray(vocab.encode(valid_text), dtype=np.int64)

    model = build_lm(cfg, len(vocab)).init_params(rng)
    opt = _optimizer(cfg)
    log = _RunLog(cfg.out, echo=echo)
    best_nll, best_params = np.inf, None
    valid_nll = np.inf
    for epoch in range(1, cfg.train.epochs + 1):
        t0 = time.perf_counter()
        opt.lr = lr_schedule(epoch, cfg.train.lr, cfg.train.lr_flat_epochs,
                             cfg.train.lr_decay)
        states = None
        total, count = 0.0, 0
        for batch in D.batch_lm(train_ids, cfg.train.batch_size, cfg.train.bptt):
            if not batch.continued:
                states = None
            logits, cache, states = model.forward(batch.inputs, rng=rng,
                                                  training=True, states=states)
            loss, dlogits = nll_loss(log_softmax(logits), batch.targets,
                                     pad_id=D.PAD)
            grads = model.backward(cache, dlogits)
            _apply_grad_pipeline(cfg, model, grads)
            opt.step(model.params, grads)
            total += loss * batch.targets.size
            count += batch.targets.size
        valid_nll = evaluate_lm(model, valid_ids, cfg.train.batch_size,
                                cfg.train.bptt)
        log.row(epoch, opt.lr, total / count, valid_nll,
                time.perf_counter() - t0)
        if valid_nll < best_nll:
            best_nll, best_params = valid_nll, _snapshot(model)

    final_path = os.path.join(cfg.out, "checkpoint.bin")
    best_path = os.path.join(cfg.out, "checkpoint-best.bin")
    _save_model(final_path, cfg, model, {"main": vocab})
    if best_params is not None:
        current = _snapshot(model)
        model.load_params(best_params)
        _save_model(best_path, cfg, model, {"main": vocab})
        model.load_params(current)
    _write_metrics(cfg, {"task": "lm", "best_valid_nll": best_nll,
                         "best_valid_ppl": perplexity(best_nll),
                         "final_valid_nll": valid_nll,
                         "vocab_size": len(vocab)})
    return RunResult(cfg.out, final_path, best_path, best_nll,
                     perplexity(best_nll), valid_nll, log.rows,
                     extra={"vocab": vocab, "model": model,
                            "valid_ids": valid_ids, "train_ids": train_ids})


# ---------------------------------------------------------------------------
# Classification.

def _doc_batches(docs, batch_size):
    """Length-sorted padded batches: (ids [B, T], lengths [B], labels [B])."""
    order = sorted(range(len(docs)), key=lambda i: len(docs[i][0]))
    batches = []
    for start in range(0, len(order), batch_size):
        chunk = [docs[i] for i in order[start:start + batch_size]]
        maxlen = max(len(d[0]) for d in chunk)
        ids = np.full((len(chunk), maxlen), D.PAD, dtype=np.int64)
        lengths = np.zeros(len(chunk), dtype=np.int64)
        labels = np.zeros(len(chunk), dtype=np.int64)
        for b, (tok, lab) in enumerate(chunk):
            ids[b, :len(tok)] = tok
            lengths[b] = len(tok)
            labels[b] = lab
        batches.append((ids, lengths, labels))
    return batches


def build_classifier(cfg, vocab_size, dtype=np.float32):
    m = cfg.model
    return SequenceClassifier(vocab_size, m.embed, m.hidden, m.layers,
                              num_classes=2, filter_width=m.k,
                              pooling=m.pooling, zoneout=cfg.train.zoneout,
                              dropout=cfg.train.dropout, dense=m.dense,
                              readout=m.readout, dtype=dtype)


def _classify_eval(model, batches):
    total, count, correct = 0.0, 0, 0
    for ids, lengths, labels in batches:
        logits, _ = model.forward(ids, lengths, training=False)
        loss, _ = nll_loss(log_softmax(logits), labels)
        total += loss * len(labels)
        count += len(labels)
        correct += int((np.argmax(logits, axis=-1) == labels).sum())
    return total / count, correct / count


def train_classify(cfg, echo=True):
    _prepare_out(cfg)
    rng = Rng(cfg.seed)
    raw_lines = D.read_text(cfg.data.labeled_train).splitlines()
    counts = Counter()
    for line in raw_lines:
        _, sep, text = line.partition("\t")
        if sep:
            counts.update(D._split(text, cfg.data.level))
    vocab = D.Vocabulary.from_counts(counts, cfg.data.level,
                                     max_size=cfg.data.vocab_max or None)
    train_docs = D.load_labeled_docs(cfg.data.labeled_train, vocab)
    if cfg.data.labeled_valid:
        valid_docs = D.load_labeled_docs(cfg.data.labeled_valid, vocab)
    else:
        n_valid = max(1, int(len(train_docs) * cfg.data.valid_fraction))
        valid_docs, train_docs = train_docs[-n_valid:], train_docs[:-n_valid]

    model = build_classifier(cfg, len(vocab)).init_params(rng)
    if cfg.data.embeddings:
        model.embedding[...] = D.load_embeddings(
            cfg.data.embeddings, vocab, cfg.model.embed, rng.spawn())
    opt = _optimizer(cfg)
    log = _RunLog(cfg.out, echo=echo)
    valid_batches = _doc_batches(valid_docs, cfg.train.batch_size)
    best_nll, best_params, best_acc = np.inf, None, 0.0
    valid_nll = acc = None
    for epoch in range(1, cfg.train.epochs + 1):
        t0 = time.perf_counter()
        opt.lr = lr_schedule(epoch, cfg.train.lr, cfg.train.lr_flat_epochs,
                             cfg.train.lr_decay)
        batches = _doc_batches(train_docs, cfg.train.batch_size)
        rng.shuffle(batches)
        total, count = 0.0, 0
        for ids, lengths, labels in batches:
            logits, cache = model.forward(ids, lengths, rng=rng, training=True)
            loss, dlogits = nll_loss(log_softmax(logits), labels)
            grads = model.backward(cache, dlogits)
            _apply_grad_pipeline(cfg, model, grads)
            opt.step(model.params, grads)
            total += loss * len(labels)
            count += len(labels)
        valid_nll, acc = _classify_eval(model, valid_batches)
        log.row(epoch, opt.lr, total / count, valid_nll,
                time.perf_counter() - t0)
        if valid_nll < best_nll:
            best_nll, best_params, best_acc = valid_nll, _snapshot(model), acc

    final_path = os.path.join(cfg.out, "checkpoint.bin")
    best_path = os.path.join(cfg.out, "checkpoint-best.bin")
    _save_model(final_path, cfg, model, {"main": vocab})
    if best_params is not None:
        current = _snapshot(model)
        model.load_params(best_params)
        _save_model(best_path, cfg, model, {"main": vocab})
        model.load_params(current)
    _write_metrics(cfg, {"task": "classify", "best_valid_nll": best_nll,
                         "best_valid_acc": best_acc, "final_valid_acc": acc,
                         "vocab_size": len(vocab)})
    return RunResult(cfg.out, final_path, best_path, best_nll,
                     perplexity(best_nll), valid_nll, log.rows,
                     extra={"vocab": vocab, "model": model, "accuracy": acc,
                            "best_accuracy": best_acc})


# ---------------------------------------------------------------------------
# Translation.

def _pair_batches(pairs, batch_size):
    """Bucket pairs by exact (src_len, tgt_len) so batches need no padding."""
    buckets = {}
    for idx, (s, t) in enumerate(pairs):
        buckets.setdefault((len(s), len(t)), []).append(idx)
    batches = []
    for key in sorted(buckets):
        idxs = buckets[key]
        for start in range(0, len(idxs), batch_size):
            chunk = idxs[start:start + batch_size]
            src = np.asarray([pairs[i][0] for i in chunk], dtype=np.int64)
            tgt = np.asarray([pairs[i][1] for i in chunk], dtype=np.int64)
            batches.append((src, tgt))
    return batches


def build_seq2seq(cfg, src_vocab_size, tgt_vocab_size, dtype=np.float32):
    m = cfg.model
    return Seq2SeqModel(src_vocab_size, tgt_vocab_size, m.embed, m.hidden,
                        m.layers, filter_width=m.k,
                        enc_first_width=m.k_first or None,
                        enc_masking="masked" if m.masked else "unmasked",
                        reverse_source=m.reverse_source,
                        zoneout=cfg.train.zoneout, dropout=cfg.train.dropout,
                        dtype=dtype)


def _mt_loss_batch(model, src, tgt, rng=None, training=False):
    B, T = tgt.shape
    dec_in = np.concatenate(
        [np.full((B, 1), D.BOS, dtype=np.int64), tgt], axis=1)
    targets = np.concatenate(
        [tgt, np.full((B, 1), D.EOS, dtype=np.int64)], axis=1)
    logits, cache = model.forward_train(src, dec_in, rng=rng, training=training)
    loss, dlogits = nll_loss(log_softmax(logits), targets, pad_id=D.PAD)
    return loss, dlogits, cache, targets.size


def _mt_eval(model, batches):
    total, count = 0.0, 0
    for src, tgt in batches:
        loss, _, _, n = _mt_loss_batch(model, src, tgt, training=False)
        total += loss * n
        count += n
    return total / count


def train_translate(cfg, echo=True):
    _prepare_out(cfg)
    rng = Rng(cfg.seed)
    vocab = D.build_vocab([cfg.data.src_train, cfg.data.tgt_train],
                          cfg.data.level, max_size=cfg.data.vocab_max or None)
    pairs = D.load_parallel_corpus(cfg.data.src_train, cfg.data.tgt_train,
                                   vocab, vocab, max_chars=cfg.data.max_chars)
    if cfg.data.src_valid:
        valid_pairs = D.load_parallel_corpus(cfg.data.src_valid,
                                             cfg.data.tgt_valid, vocab, vocab,
                                             max_chars=cfg.data.max_chars)
    else:
        n_valid = max(1, int(len(pairs) * cfg.data.valid_fraction))
        valid_pairs, pairs = pairs[-n_valid:], pairs[:-n_valid]
    if not pairs:
        raise ArgumentError("no training pairs left after filtering")

    model = build_seq2seq(cfg, len(vocab), len(vocab)).init_params(rng)
    opt = _optimizer(cfg)
    log = _RunLog(cfg.out, echo=echo)
    valid_batches = _pair_batches(valid_pairs, cfg.train.batch_size)
    best_nll, best_params = np.inf, None
    valid_nll = None
    for epoch in range(1, cfg.train.epochs + 1):
        t0 = time.perf_counter()
        opt.lr = lr_schedule(epoch, cfg.train.lr, cfg.train.lr_flat_epochs,
                             cfg.train.lr_decay)
        batches = _pair_batches(pairs, cfg.train.batch_size)
        rng.shuffle(batches)
        total, count = 0.0, 0
        for src, tgt in batches:
            loss, dlogits, cache, n = _mt_loss_batch(model, src, tgt, rng=rng,
                                                     training=True)
            grads = model.backward(cache, dlogits)
            _apply_grad_pipeline(cfg, model, grads)
            opt.step(model.params, grads)
            total += loss * n
            count += n
        valid_nll = _mt_eval(model, valid_batches)
        log.row(epoch, opt.lr, total / count, valid_nll,
                time.perf_counter() - t0)
        if valid_nll < best_nll:
            best_nll, best_params = valid_nll, _snapshot(model)

    final_path = os.path.join(cfg.out, "checkpoint.bin")
    best_path = os.path.join(cfg.out, "checkpoint-best.bin")
    _save_model(final_path, cfg, model, {"src": vocab, "tgt": vocab})
    if best_params is not None:
        current = _snapshot(model)
        model.load_params(best_params)
        _save_model(best_path, cfg, model, {"src": vocab, "tgt": vocab})
        model.load_params(current)
    _write_metrics(cfg, {"task": "translate", "best_valid_nll": best_nll,
                         "final_valid_nll": valid_nll, "vocab_size": len(vocab)})
    return RunResult(cfg.out, final_path, best_path, best_nll,
                     perplexity(best_nll), valid_nll, log.rows,
                     extra={"vocab": vocab, "model": model,
                            "valid_pairs": valid_pairs, "train_pairs": pairs})


def translate_ids(model, src_ids, beam_width, alpha, max_len):
    result = beam_search(model, src_ids, beam_width=beam_width, alpha=alpha,
                         max_len=max_len)
    return result.output_ids


def translate_lines(model, src_vocab, tgt_vocab, lines, beam_width=4,
                    alpha=0.0, max_len=128):
    out = []
    for line in lines:
        ids = src_vocab.encode(line)
        if not ids:
            out.append("")
            continue
        hyp = translate_ids(model, ids, beam_width, alpha, max_len)
        out.append(tgt_vocab.decode(hyp))
    return out


# ---------------------------------------------------------------------------
# Checkpoint loading.

def model_from_checkpoint(path, dtype=np.float32):
    """Rebuild (cfg, model, vocabs) from a checkpoint file."""
    config_text, tensors = load_checkpoint(path)
    cfg = parse_config_text(config_text)
    vocabs = {}
    for name, arr in tensors.items():
        if name.startswith("vocab."):
            vocabs[name[len("vocab."):]] = D.Vocabulary.from_json(
                arr.tobytes().decode("utf-8"))
    params = {name[len("param."):]: arr for name, arr in tensors.items()
              if name.startswith("param.")}
    if cfg.task == "lm":
        model = build_lm(cfg, len(vocabs["main"]), dtype=dtype)
    elif cfg.task == "classify":
        model = build_classifier(cfg, len(vocabs["main"]), dtype=dtype)
    elif cfg.task == "translate":
        model = build_seq2seq(cfg, len(vocabs["src"]), len(vocabs["tgt"]),
                              dtype=dtype)
    else:
        raise ConfigError(f"checkpoint has no model for task {cfg.task!r}")
    model.init_params(Rng(0))
    model.load_params(params)
    return cfg, model, vocabs


def run_dump_states(checkpoint_path, text, out_path):
    """Dump the final layer's pooling states for one encoded sequence."""
    cfg, model, vocabs = model_from_checkpoint(checkpoint_path)
    vocab = vocabs.get("main")
    if vocab is None:
        raise ConfigError("state dumps need an lm or classify checkpoint")
    ids = np.asarray(vocab.encode(text), dtype=np.int64)
    if ids.size == 0:
        raise ArgumentError("empty input sequence")
    return dump_hidden_states(model, ids, out_path)


def run_translate(checkpoint_path, lines, beam_width=None, alpha=None,
                  max_len=None):
    cfg, model, vocabs = model_from_checkpoint(checkpoint_path)
    if cfg.task != "translate":
        raise ConfigError("translate needs a translation checkpoint")
    return translate_lines(
        model, vocabs["src"], vocabs["tgt"], lines,
        beam_width=beam_width or cfg.train.beam_width,
        alpha=cfg.train.beam_alpha if alpha is None else alpha,
        max_len=max_len or cfg.train.beam_max_len)
