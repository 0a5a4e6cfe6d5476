"""Prior fitting: Adam on freshly sampled synthetic datasets."""

import csv
import logging
import math
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import core
from .core import NonFiniteError, Tape
from .model import ModelParameters, forward, load_checkpoint, make_batch
from .preprocessing import preprocess_split
from .prior import sample_dataset

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
# flops per parameter element: clipping norm + rescale, Adam moments and update
CLIP_FLOPS = 3
ADAM_FLOPS = 12


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batches_per_epoch: int = 16
    batch_size: int = 8
    grad_accumulation: int = 1
    peak_lr: float = 9.379e-4
    warmup_epochs: int = 5
    clip_norm: float = 1.0
    seed: int = 0
    n_samples: int = 256
    checkpoint_every: int = 5

    def __post_init__(self):
        for name in ("epochs", "batches_per_epoch", "batch_size", "grad_accumulation", "n_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.batch_size % self.grad_accumulation:
            raise ValueError("batch_size must be divisible by grad_accumulation")
        if self.warmup_epochs < 0 or self.peak_lr <= 0 or self.clip_norm <= 0:
            raise ValueError("warmup_epochs >= 0, peak_lr > 0 and clip_norm > 0 required")

    @classmethod
    def full_scale(cls, **kw):
        return cls(**{"epochs": 200, "batches_per_epoch": 128, "batch_size": 128, "n_samples": 1024,
                      "grad_accumulation": 4, **kw})

    @property
    def total_steps(self):
        return self.epochs * self.batches_per_epoch

    @property
    def warmup_steps(self):
        return min(self.warmup_epochs * self.batches_per_epoch, self.total_steps)

    @property
    def total_datasets(self):
        return self.total_steps * self.batch_size


def lr_at(step, config):
    """Linear warmup from 0 to ``peak_lr``, then cosine decay reaching 0 at ``total_steps``."""
    if step < 0:
        raise ValueError("step must be non-negative")
    w, total = config.warmup_steps, config.total_steps
    if step < w:
        return config.peak_lr * step / w
    if step >= total:
        return 0.0
    frac = (step - w) / (total - w)
    return config.peak_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


class TrainState:
    """Step counter, Adam moments and loss history."""

    def __init__(self, params):
        self.step = 0
        self.m = {k: np.zeros_like(v) for k, v in params.arrays().items()}
        self.v = {k: np.zeros_like(v) for k, v in params.arrays().items()}
        self.lr = 0.0
        self.losses = []

    def moments(self):
        out = {f"adam_m.{k}": v for k, v in self.m.items()}
        out.update({f"adam_v.{k}": v for k, v in self.v.items()})
        return out


def prepare(ds, config):
    """ForwardBatch and query labels for one synthetic dataset."""
    x = preprocess_split(ds.X, ds.split_position)
    batch = make_batch(x, ds.Y[:ds.split_position], ds.class_counts, config)
    return batch, ds.Y[ds.split_position:]


def multitask_loss(logits, labels, n_tasks, c_max):
    """Task-averaged cross-entropy over query rows; ``logits`` is a Tensor."""
    return core.sliced_cross_entropy(logits, labels, n_tasks, c_max)


def loss_and_grads(params, ds):
    batch, labels = prepare(ds, params.config)
    with Tape() as tape:
        loss = multitask_loss(forward(params, batch), labels, batch.n_tasks, params.config.c_max)
    grads = core.backward(loss, tape, params.values())
    return float(loss.data), grads


def clip_gradients(grads, max_norm):
    """Rescale in place so the global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    core.add_flops("clip", CLIP_FLOPS * sum(g.size for g in grads.values()))
    if norm > max_norm:
        factor = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * factor
    return norm


def adam_update(params, state, grads, lr):
    t = state.step + 1
    bc1 = 1.0 - ADAM_BETA1 ** t
    bc2 = 1.0 - ADAM_BETA2 ** t
    for name, tensor in params.tensors.items():
        g = grads[name]
        state.m[name] = ADAM_BETA1 * state.m[name] + (1 - ADAM_BETA1) * g
        state.v[name] = ADAM_BETA2 * state.v[name] + (1 - ADAM_BETA2) * g * g
        update = lr * (state.m[name] / bc1) / (np.sqrt(state.v[name] / bc2) + ADAM_EPS)
        tensor.data = tensor.data - update
        core.add_flops("adam", ADAM_FLOPS * g.size)


def train_step(state, params, datasets, config):
    """One optimizer step over ``datasets`` split into ``grad_accumulation`` micro-batches."""
    names = list(params)
    summed = {k: np.zeros_like(params[k].data) for k in names}
    losses = []
    micro = len(datasets) // config.grad_accumulation or 1
    for start in range(0, len(datasets), micro):
        for ds in datasets[start:start + micro]:
            try:
                loss, grads = loss_and_grads(params, ds)
            except NonFiniteError as exc:
                raise NonFiniteError(
                    f"step {state.step}: {exc} (T={ds.T}, k={ds.n_features}, "
                    f"split={ds.split_position})") from exc
            losses.append(loss)
            for t, g in grads.items():
                summed[t.name] += g
    grads = {k: g / len(datasets) for k, g in summed.items()}
    clip_gradients(grads, config.clip_norm)
    state.lr = lr_at(state.step, config)
    adam_update(params, state, grads, state.lr)
    state.step += 1
    mean_loss = sum(losses) / len(losses)
    state.losses.append(mean_loss)
    return mean_loss


def step_rng(seed, step):
    """Independent generator for the datasets of one optimizer step."""
    return np.random.default_rng([seed, step])


def train(config, prior_config, model_config, out_dir=None, resume=None, callback=None):
    """Run the full schedule; returns ``(params, state)``.

    With ``out_dir`` writes ``loss.csv`` and versioned checkpoints.  ``resume``
    is a checkpoint path written by this function.
    """
    if resume is not None:
        params, extra, meta = load_checkpoint(resume)
        state = TrainState(params)
        state.step = int(meta["step"])
        state.losses = [float(x) for x in meta.get("losses", [])]
        for k in state.m:
            state.m[k] = extra[f"adam_m.{k}"].copy()
            state.v[k] = extra[f"adam_v.{k}"].copy()
    else:
        params = ModelParameters.initialize(model_config, np.random.default_rng(config.seed))
        state = TrainState(params)

    writer = fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        fh = open(os.path.join(out_dir, "loss.csv"), "a" if resume else "w", newline="")
        writer = csv.writer(fh)
        if not resume:
            writer.writerow(["step", "lr", "loss"])
    try:
        while state.step < config.total_steps:
            rng = step_rng(config.seed, state.step)
            datasets = [sample_dataset(prior_config, config.n_samples, rng)
                        for _ in range(config.batch_size)]
            loss = train_step(state, params, datasets, config)
            if writer:
                writer.writerow([state.step, repr(state.lr), repr(loss)])
            if callback:
                callback(state, params)
            if state.step % config.batches_per_epoch == 0:
                epoch = state.step // config.batches_per_epoch
                log.info("epoch %d step %d loss %.4f", epoch, state.step, loss)
                if out_dir and (epoch % config.checkpoint_every == 0 or state.step == config.total_steps):
                    save_training_checkpoint(os.path.join(out_dir, f"checkpoint_{epoch:04d}.ckpt"),
                                             params, state, config)
    finally:
        if fh:
            fh.close()
    if out_dir:
        save_training_checkpoint(os.path.join(out_dir, "model.ckpt"), params, state, config)
    return params, state


def save_training_checkpoint(path, params, state, config):
    meta = {"step": state.step, "losses": [float(x) for x in state.losses],
            "train_config": asdict(config)}
    params.save(path, extra=state.moments(), meta=meta)
