"""Compute scaling of native multitask inference against a one-target-at-a-time loop.

FLOPs are counted analytically from the layer shapes, using the per-primitive
charges of :mod:`mtpfn.core`:

* matmul ``(m,k)@(k,n)``: ``2mkn`` forward, ``2mkn`` backward per operand that
  needs a gradient;
* add / mul / scale: one per output element forward, one per element and
  gradient-carrying operand backward;
* layer norm, softmax, GELU, cross-entropy: :data:`mtpfn.core.ELEMENTWISE_COST`
  per element;
* reshapes, transposes and row slices are free, as is summing gradients that
  fan in to the same tensor.
"""

import csv
import statistics
import time
from dataclasses import dataclass, replace

import numpy as np

from . import core
from .core import ELEMENTWISE_COST
from .estimator import MultitaskPFNClassifier
from .model import forward_call_count, parameter_count
from .prior import PriorConfig, sample_dataset
from .training import ADAM_FLOPS, CLIP_FLOPS

PHASES = ("forward", "train_step", "inference")


def _fwd(name, n):
    return ELEMENTWISE_COST[name][0] * n


def _bwd(name, n):
    return ELEMENTWISE_COST[name][1] * n


def forward_flops(config, n_rows, n_query):
    """Forward flops of one dataset; independent of the task count and the feature count."""
    n, q = n_rows, n_query
    d, f, h = config.d_emb, config.d_ff, config.n_heads
    dh = d // h
    total = 2 * n * config.k_max * d + n * d            # x encoder
    total += 2 * n * config.t_max * d + n * d + n * d   # y encoder, context gate
    total += n * d                                      # x + y embeddings
    per_layer = (
        _fwd("layer_norm", n * d)
        + 3 * (2 * n * d * d + n * d)                   # q, k, v
        + 2 * h * n * dh * n + h * n * n                # scores, scaling
        + _fwd("softmax", h * n * n)
        + 2 * h * n * n * dh                            # weighted values
        + 2 * n * d * d + n * d + n * d                 # output projection, residual
        + _fwd("layer_norm", n * d)
        + 2 * n * d * f + n * f + _fwd("gelu", n * f)
        + 2 * n * f * d + n * d + n * d                 # second linear, residual
    )
    total += config.n_layers * per_layer
    total += _fwd("layer_norm", n * d)
    hid, out = config.d_hid, config.n_out
    total += 2 * q * d * hid + q * hid + _fwd("gelu", q * hid)
    total += 2 * q * hid * out + q * out
    return total


def backward_flops(config, n_rows, n_query):
    n, q = n_rows, n_query
    d, f, h = config.d_emb, config.d_ff, config.n_heads
    dh = d // h
    total = 2 * n * config.k_max * d + 2 * n * d         # x encoder: weight grad only
    total += 2 * n * config.t_max * d + 2 * n * d + n * d + 2 * n * d
    per_layer = (
        _bwd("layer_norm", n * d)
        + 3 * (2 * 2 * n * d * d + 2 * n * d)
        + 2 * 2 * h * n * dh * n + h * n * n
        + _bwd("softmax", h * n * n)
        + 2 * 2 * h * n * n * dh
        + 2 * 2 * n * d * d + 2 * n * d + 2 * n * d
        + _bwd("layer_norm", n * d)
        + 2 * 2 * n * d * f + 2 * n * f + _bwd("gelu", n * f)
        + 2 * 2 * n * f * d + 2 * n * d + 2 * n * d
    )
    total += config.n_layers * per_layer
    total += _bwd("layer_norm", n * d)
    hid, out = config.d_hid, config.n_out
    total += 2 * 2 * q * d * hid + 2 * q * hid + _bwd("gelu", q * hid)
    total += 2 * 2 * q * hid * out + 2 * q * out
    return total


def loss_flops(config, n_query, n_tasks):
    return _fwd("cross_entropy", n_query * n_tasks * config.c_max)


def loss_backward_flops(config, n_query, n_tasks):
    return _bwd("cross_entropy", n_query * n_tasks * config.c_max)


def count_flops(config, n_rows, k, phase, n_query=None, n_tasks=1, batch_size=1):
    """Closed-form flop count of one phase.

    ``train_step`` is forward, loss and backward for each of ``batch_size``
    datasets followed by clipping and one Adam update.  ``inference`` is
    ``batch_size`` forward passes.
    """
    if phase not in PHASES:
        raise ValueError(f"phase must be one of {PHASES}")
    if not 1 <= k <= config.k_max:
        raise ValueError(f"k={k} outside [1, {config.k_max}]")
    q = n_rows // 2 if n_query is None else n_query
    fwd = forward_flops(config, n_rows, q)
    if phase == "forward":
        return fwd
    if phase == "inference":
        return batch_size * fwd
    per_ds = fwd + loss_flops(config, q, n_tasks) + loss_backward_flops(config, q, n_tasks) \
        + backward_flops(config, n_rows, q)
    return batch_size * per_ds + (CLIP_FLOPS + ADAM_FLOPS) * parameter_count(config)


@dataclass
class FlopLedger:
    """Per-phase counts and the factors that extrapolate them to a whole run."""

    forward_batch: int
    train_step: int
    inference_batch: int
    batches_per_epoch: int = 0
    epochs: int = 0
    inference_batches: int = 1

    @property
    def training_total(self):
        return self.train_step * self.batches_per_epoch * self.epochs

    @property
    def inference_total(self):
        return self.inference_batch * self.inference_batches

    @property
    def total(self):
        return self.training_total + self.inference_total


@dataclass
class ScalingRun:
    T: int
    mode: str
    fit_seconds: float
    infer_seconds: float
    forward_calls: int
    flops_forward_total: int
    scaling_factor: float = 1.0

    @property
    def total_seconds(self):
        return self.fit_seconds + self.infer_seconds


def make_scaling_datasets(N=1000, k=50, T=5, seed=0, split=None, prior=None):
    """A prior dataset of fixed shape; every T from the same seed shares the same X."""
    if not 1 <= T <= 5:
        raise ValueError("T must be in [1, 5]")
    prior = prior or PriorConfig()
    ds = sample_dataset(prior, N, np.random.default_rng(seed), T=5, k=k)
    return replace(ds, Y=ds.Y[:, :T].copy(), class_counts=ds.class_counts[:T],
                   split_position=int(split if split is not None else 4 * N // 5))


def _time_once(params, X_ctx, Y_ctx, X_query, per_target):
    """Fit and inference seconds, forward calls and counted flops for one evaluation."""
    targets = [Y_ctx[:, [t]] for t in range(Y_ctx.shape[1])] if per_target else [Y_ctx]
    fit_s = infer_s = 0.0
    calls0 = forward_call_count()
    with core.count_flops() as counter:
        for y in targets:
            t0 = time.perf_counter()
            est = MultitaskPFNClassifier(params).fit(X_ctx, y)
            t1 = time.perf_counter()
            est.predict_proba(X_query)
            t2 = time.perf_counter()
            fit_s += t1 - t0
            infer_s += t2 - t1
    return fit_s, infer_s, forward_call_count() - calls0, counter.total


def run_scaling(params, dataset, t_values=(1, 2, 3, 4, 5), repeats=3, warmup=True):
    """Median timings per T for native multitask and the single-target loop."""
    s = dataset.split_position
    X_ctx, X_query = dataset.X[:s], dataset.X[s:]
    runs = []
    for mode, per_target in (("multitask", False), ("single_task", True)):
        base = None
        for T in t_values:
            Y_ctx = dataset.Y[:s, :T]
            if warmup:
                _time_once(params, X_ctx, Y_ctx, X_query, per_target)
            samples = [_time_once(params, X_ctx, Y_ctx, X_query, per_target) for _ in range(repeats)]
            run = ScalingRun(
                T=T, mode=mode,
                fit_seconds=statistics.median(x[0] for x in samples),
                infer_seconds=statistics.median(x[1] for x in samples),
                forward_calls=samples[0][2],
                flops_forward_total=samples[0][3],
            )
            if base is None:
                base = run.total_seconds
            run.scaling_factor = run.total_seconds / base
            runs.append(run)
    return runs


def write_scaling_csv(runs, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["T", "mode", "fit_seconds", "infer_seconds", "forward_calls",
                    "flops_forward_total", "scaling_factor"])
        for r in runs:
            w.writerow([r.T, r.mode, f"{r.fit_seconds:.6f}", f"{r.infer_seconds:.6f}",
                        r.forward_calls, r.flops_forward_total, f"{r.scaling_factor:.4f}"])
