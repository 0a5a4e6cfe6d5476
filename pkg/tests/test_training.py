import csv
import dataclasses
import math

import numpy as np
import pytest

from mtpfn import core
from mtpfn.core import Tensor
from mtpfn.model import ModelConfig, ModelParameters, load_checkpoint
from mtpfn.prior import PriorConfig, fixed, tnlu
from mtpfn.training import (
    TrainConfig, TrainState, adam_update, clip_gradients, lr_at, multitask_loss, train, train_step,
)

TINY = ModelConfig(d_emb=8, n_layers=1, n_heads=2, t_max=3, c_max=4, k_max=6)
PRIOR = PriorConfig(n_layers=fixed(2), hidden_dim=fixed(8), n_features=tnlu(2, 6, min=1, max=6, integer=True),
                    n_outputs=fixed(2), n_classes=fixed(3))
QUICK = TrainConfig(epochs=3, batches_per_epoch=2, batch_size=2, warmup_epochs=1, n_samples=24,
                    checkpoint_every=1, peak_lr=1e-3)


def test_uniform_logits_give_log_c():
    logits = Tensor(np.zeros((7, 20)))
    labels = np.random.default_rng(0).integers(0, 10, size=(7, 2))
    assert abs(float(multitask_loss(logits, labels, 2, 10).data) - math.log(10)) < 1e-12


def test_loss_matches_hand_reference_and_task_order():
    rng = np.random.default_rng(1)
    logits = rng.normal(size=(5, 12))
    labels = rng.integers(0, 4, size=(5, 3))
    ref = 0.0
    for t in range(3):
        z = logits[:, 4 * t:4 * t + 4]
        lse = np.log(np.exp(z).sum(axis=1))
        ref += np.mean(lse - z[np.arange(5), labels[:, t]])
    got = float(multitask_loss(Tensor(logits), labels, 3, 4).data)
    assert abs(got - ref / 3) < 1e-12
    perm = [2, 0, 1]
    shuffled = np.hstack([logits[:, 4 * t:4 * t + 4] for t in perm])
    assert abs(float(multitask_loss(Tensor(shuffled), labels[:, perm], 3, 4).data) - got) < 1e-12


def test_lr_schedule_shape():
    cfg = TrainConfig(epochs=10, batches_per_epoch=4, warmup_epochs=2, peak_lr=0.1)
    lrs = [lr_at(s, cfg) for s in range(cfg.total_steps + 1)]
    assert lrs[0] == 0.0
    assert lrs[8] == 0.1
    assert all(a < b for a, b in zip(lrs[:8], lrs[1:9]))
    assert all(a >= b for a, b in zip(lrs[8:], lrs[9:]))
    assert lrs[-1] < 1e-12
    with pytest.raises(ValueError):
        lr_at(-1, cfg)


def test_run_totals():
    cfg = TrainConfig.full_scale()
    assert cfg.total_steps == 200 * 128
    assert cfg.total_datasets == 200 * 128 * 128 == 3_276_800


def test_clipping():
    grads = {"a": np.array([3.0, 0.0]), "b": np.array([[4.0]])}
    norm = clip_gradients(grads, 1.0)
    assert norm == 5.0
    total = math.sqrt(sum(float((g ** 2).sum()) for g in grads.values()))
    assert abs(total - 1.0) < 1e-12
    small = {"a": np.array([0.1])}
    clip_gradients(small, 1.0)
    assert small["a"][0] == 0.1


def test_adam_first_step_moves_by_lr():
    params = ModelParameters.initialize(TINY, np.random.default_rng(2))
    before = params.arrays()
    state = TrainState(params)
    grads = {k: np.full_like(v, 0.5) for k, v in before.items()}
    adam_update(params, state, grads, 0.01)
    for k, v in params.arrays().items():
        np.testing.assert_allclose(before[k] - v, 0.01, rtol=1e-6)


def test_gradient_accumulation_equals_full_batch():
    rng = np.random.default_rng(3)
    from mtpfn.prior import sample_batch
    datasets = sample_batch(PRIOR, 4, 20, rng)
    results = []
    for acc in (1, 2, 4):
        params = ModelParameters.initialize(TINY, np.random.default_rng(4))
        state = TrainState(params)
        cfg = dataclasses.replace(QUICK, batch_size=4, grad_accumulation=acc)
        train_step(state, params, datasets, cfg)
        train_step(state, params, datasets, cfg)
        results.append(params.arrays())
    for other in results[1:]:
        for k in other:
            np.testing.assert_allclose(other[k], results[0][k], rtol=0, atol=1e-12)


def test_train_step_counts_flops():
    params = ModelParameters.initialize(TINY, np.random.default_rng(5))
    from mtpfn.prior import sample_batch
    datasets = sample_batch(PRIOR, 2, 20, np.random.default_rng(6))
    with core.count_flops() as c:
        train_step(TrainState(params), params, datasets, QUICK)
    assert c.total > 0 and "adam" in c.by_op and "matmul" in c.by_op


def test_training_is_deterministic_and_writes_outputs(tmp_path):
    p1, s1 = train(QUICK, PRIOR, TINY, out_dir=tmp_path / "a")
    p2, s2 = train(QUICK, PRIOR, TINY, out_dir=tmp_path / "b")
    assert s1.losses == s2.losses
    for name in ("loss.csv", "model.ckpt", "checkpoint_0001.ckpt", "checkpoint_0003.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    with open(tmp_path / "a" / "loss.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["step", "lr", "loss"] and len(rows) == QUICK.total_steps + 1
    assert all(math.isfinite(float(r[2])) for r in rows[1:])


def test_resume_reproduces_uninterrupted_run(tmp_path):
    full, _ = train(QUICK, PRIOR, TINY, out_dir=tmp_path / "full")
    resumed, state = train(QUICK, PRIOR, TINY, out_dir=tmp_path / "full",
                           resume=tmp_path / "full" / "checkpoint_0001.ckpt")
    assert state.step == QUICK.total_steps
    for k, v in full.arrays().items():
        assert resumed[k].data.tobytes() == v.tobytes()
    _, _, meta = load_checkpoint(tmp_path / "full" / "model.ckpt")
    assert meta["step"] == QUICK.total_steps


def test_loss_decreases_on_fixed_batch():
    from mtpfn.prior import sample_batch
    datasets = sample_batch(PRIOR, 4, 32, np.random.default_rng(7))
    params = ModelParameters.initialize(TINY, np.random.default_rng(8))
    state = TrainState(params)
    cfg = TrainConfig(epochs=30, batches_per_epoch=1, batch_size=4, warmup_epochs=1, peak_lr=3e-3)
    losses = [train_step(state, params, datasets, cfg) for _ in range(30)]
    assert losses[-1] < losses[0]


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=6, grad_accumulation=4)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
