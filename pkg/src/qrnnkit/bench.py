"""Throughput harness: QRNN vs LSTM layers over a batch x length grid.

Both layer kinds get identical random inputs per (seed, shape), the same
dtype, pre-allocated buffers, and the same BLAS thread count; timings are
medians over several reps after warmups to shrug off scheduler noise.
The headline number is the per-cell speedup lstm_time / qrnn_time.
"""

import json
import time
from contextlib import contextmanager
from dataclasses import dataclass, asdict

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import ArgumentError
from .lstm import LSTMLayer
from .models import SequenceLM
from .qrnn import QRNNLayer
from .tensor import Rng
from .training import SGD, l2_apply, log_softmax, nll_loss, rescale_gradients

KINDS = ("qrnn-f", "qrnn-fo", "qrnn-ifo", "lstm")
DEFAULT_BATCHES = (8, 16, 32, 64, 128, 256)
DEFAULT_SEQLENS = (32, 64, 128, 256, 512)


@contextmanager
def thread_limit(threads):
    """Cap BLAS thread pools; None or 0 leaves the library default."""
    if threads:
        with threadpool_limits(limits=int(threads)):
            yield
    else:
        yield


@dataclass
class BenchResult:
    kind: str
    batch: int
    seqlen: int
    hidden: int
    k: int
    mode: str
    reps: int
    warmup: int
    median_seconds: float
    throughput: float     # timestep*channels per second


def _make_layer(kind, hidden, k, dtype, seed):
    rng = Rng(seed)
    if kind == "lstm":
        return LSTMLayer(hidden, hidden, dtype=dtype).init_params(rng)
    pooling = kind.split("-", 1)[1]
    return QRNNLayer(hidden, hidden, filter_width=k, pooling=pooling,
                     masking="masked", dtype=dtype).init_params(rng)


def time_layer(kind, batch, seqlen, hidden, k=2, mode="training", reps=5,
               warmup=2, threads=None, seed=0, dtype=np.float32):
    """Median wall time of forward (and backward, in training mode) passes."""
    if kind not in KINDS:
        raise ArgumentError(f"kind must be one of {KINDS}")
    if min(batch, seqlen, hidden, reps) < 1:
        raise ArgumentError("batch, seqlen, hidden, and reps must be positive")
    layer = _make_layer(kind, hidden, k, dtype, seed)
    data_rng = Rng(seed + 1)
    X = data_rng.normal((batch, seqlen, hidden), scale=0.5, dtype=dtype)
    dH = data_rng.normal((batch, seqlen, hidden), scale=0.5, dtype=dtype)
    training = mode == "training"

    def run():
        if kind == "lstm":
            H, cache = layer.forward(X, training=training)
            if training:
                layer.backward(cache, dH)
        else:
            H, cache, _ = layer.forward(X, training=training)
            if training:
                layer.backward(cache, dH)
        return H

    with thread_limit(threads):
        out = run()
        if not np.isfinite(out).all() or not np.any(out):
            raise ArgumentError(f"{kind} produced degenerate output; refusing to time")
        for _ in range(max(warmup - 1, 0)):
            run()
        times = []
        for _ in range(reps):
            t0 = time.perf_counter()
            run()
            times.append(time.perf_counter() - t0)
    med = float(np.median(times))
    return BenchResult(kind=kind, batch=batch, seqlen=seqlen, hidden=hidden,
                       k=k, mode=mode, reps=reps, warmup=warmup,
                       median_seconds=med,
                       throughput=batch * seqlen * hidden / med)


def speed_grid(batches=DEFAULT_BATCHES, seqlens=DEFAULT_SEQLENS, hidden=320,
               k=2, out_path=None, qrnn_kind="qrnn-fo", mode="training",
               reps=5, warmup=2, threads=None, seed=0):
    """Speedup (lstm_time / qrnn_time) for each grid cell.

    Returns (grid [len(batches), len(seqlens)], results list).  When
    out_path is given the grid is written as CSV: a header row of sequence
    lengths and a leading column of batch sizes.
    """
    grid = np.zeros((len(batches), len(seqlens)))
    results = []
    for i, b in enumerate(batches):
        for j, s in enumerate(seqlens):
            q = time_layer(qrnn_kind, b, s, hidden, k=k, mode=mode, reps=reps,
                           warmup=warmup, threads=threads, seed=seed)
            l = time_layer("lstm", b, s, hidden, k=k, mode=mode, reps=reps,
                           warmup=warmup, threads=threads, seed=seed)
            grid[i, j] = l.median_seconds / q.median_seconds
            results.extend([q, l])
    if out_path is not None:
        write_grid_csv(grid, batches, seqlens, out_path)
    return grid, results


def write_grid_csv(grid, batches, seqlens, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("batch," + ",".join(str(s) for s in seqlens) + "\n")
        for i, b in enumerate(batches):
            fh.write(str(b) + "," + ",".join(f"{v:.3f}" for v in grid[i]) + "\n")


def write_results_json(results, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([asdict(r) for r in results], fh, indent=2)
        fh.write("\n")


class PhaseProfiler:
    """Accumulates wall time into named phase buckets via context managers."""

    def __init__(self):
        self.times = {}

    @contextmanager
    def section(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.times[name] = self.times.get(name, 0.0) + time.perf_counter() - t0


def profile_breakdown(model_config, batch, bptt, steps=3, threads=None, seed=0):
    """Per-phase timing of full LM training steps.

    model_config needs vocab_size/embed/hidden/layers (dict); returns phase
    seconds {conv_matmul, pooling, softmax, optimizer} plus the total step
    wall time, averaged over ``steps`` steps after one warmup.
    """
    mc = dict(model_config)
    rng = Rng(seed)
    model = SequenceLM(vocab_size=mc["vocab_size"], embed_dim=mc.get("embed", 64),
                       hidden_dim=mc["hidden"], num_layers=mc.get("layers", 2),
                       filter_width=mc.get("k", 2)).init_params(rng)
    opt = SGD(lr=0.1)
    data_rng = np.random.Generator(np.random.Philox(seed + 1))
    ids = data_rng.integers(0, mc["vocab_size"], size=(batch, bptt))
    targets = data_rng.integers(0, mc["vocab_size"], size=(batch, bptt))

    def one_step(prof):
        logits, cache, _ = model.forward(ids, rng=rng, training=True, prof=prof)
        with prof.section("softmax"):
            lp = log_softmax(logits)
            loss, dlogits = nll_loss(lp, targets)
        grads = model.backward(cache, dlogits.astype(model.dtype), prof=prof)
        with prof.section("optimizer"):
            l2_apply(grads, model.params, 1e-4)
            rescale_gradients(grads, 10.0)
            opt.step(model.params, grads)
        return loss

    with thread_limit(threads):
        one_step(PhaseProfiler())          # warmup
        prof = PhaseProfiler()
        t0 = time.perf_counter()
        for _ in range(steps):
            one_step(prof)
        total = time.perf_counter() - t0
    phases = {"conv_matmul": prof.times.get("conv", 0.0) / steps,
              "pooling": prof.times.get("pooling", 0.0) / steps,
              "softmax": prof.times.get("softmax", 0.0) / steps,
              "optimizer": prof.times.get("optimizer", 0.0) / steps}
    phases["total"] = total / steps
    return phases
