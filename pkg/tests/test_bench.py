import csv

import numpy as np
import pytest

from mtpfn import core
from mtpfn.bench import (
    FlopLedger, count_flops, make_scaling_datasets, run_scaling, write_scaling_csv,
)
from mtpfn.model import ModelConfig, ModelParameters, forward, make_batch
from mtpfn.prior import PriorConfig, int_uniform, sample_dataset, tnlu
from mtpfn.training import TrainConfig, TrainState, train_step

CFG = ModelConfig(d_emb=8, n_layers=2, n_heads=2, t_max=3, c_max=4, k_max=6)
SMALL_PRIOR = PriorConfig(n_layers=tnlu(2, 3, min=2, integer=True), hidden_dim=tnlu(8, 16, min=4, integer=True))


@pytest.mark.parametrize("n,split,k", [(10, 6, 3), (7, 2, 6)])
def test_forward_flops_match_instrumented_count(n, split, k):
    params = ModelParameters.initialize(CFG, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    batch = make_batch(rng.normal(size=(n, k)), rng.integers(0, 2, size=(split, 2)), [2, 2], CFG)
    with core.count_flops() as c:
        forward(params, batch)
    assert count_flops(CFG, n, k, "forward", n_query=n - split) == c.total


def test_train_step_flops_match_instrumented_count():
    params = ModelParameters.initialize(CFG, np.random.default_rng(2))
    prior = SMALL_PRIOR.with_overrides(split_low=7, split_high=7, n_classes=int_uniform(2, 4))
    rng = np.random.default_rng(3)
    datasets = [sample_dataset(prior, 12, rng, T=2, k=4) for _ in range(2)]
    with core.count_flops() as c:
        train_step(TrainState(params), params, datasets, TrainConfig(batch_size=2))
    expected = count_flops(CFG, 12, 4, "train_step", n_query=5, n_tasks=2, batch_size=2)
    assert expected == c.total


def test_flops_do_not_depend_on_k_or_t():
    a = count_flops(CFG, 20, 1, "forward", n_query=5)
    b = count_flops(CFG, 20, 6, "forward", n_query=5)
    assert a == b
    with pytest.raises(ValueError):
        count_flops(CFG, 20, 7, "forward")
    with pytest.raises(ValueError):
        count_flops(CFG, 20, 2, "backward")


def test_ledger_totals():
    led = FlopLedger(forward_batch=10, train_step=100, inference_batch=20, batches_per_epoch=3,
                     epochs=2, inference_batches=4)
    assert led.training_total == 600 and led.inference_total == 80 and led.total == 680


def test_scaling_datasets_share_features():
    a = make_scaling_datasets(N=60, k=5, T=2, seed=4, prior=SMALL_PRIOR)
    b = make_scaling_datasets(N=60, k=5, T=5, seed=4, prior=SMALL_PRIOR)
    assert a.X.shape == (60, 5) and a.Y.shape == (60, 2)
    assert a.X.tobytes() == b.X.tobytes()
    assert np.array_equal(a.Y, b.Y[:, :2])
    assert a.split_position == 48


def test_run_scaling_counts(tmp_path):
    cfg = ModelConfig(d_emb=8, n_layers=1, n_heads=2, t_max=5, c_max=10, k_max=10)
    params = ModelParameters.initialize(cfg, np.random.default_rng(5))
    ds = make_scaling_datasets(N=40, k=6, T=5, seed=6, prior=SMALL_PRIOR)
    runs = run_scaling(params, ds, t_values=(1, 3), repeats=1, warmup=False)
    by = {(r.mode, r.T): r for r in runs}
    assert by["multitask", 1].forward_calls == by["multitask", 3].forward_calls == 1
    assert by["multitask", 1].flops_forward_total == by["multitask", 3].flops_forward_total
    assert by["single_task", 3].forward_calls == 3
    assert by["single_task", 3].flops_forward_total == 3 * by["single_task", 1].flops_forward_total
    write_scaling_csv(runs, tmp_path / "s.csv")
    with open(tmp_path / "s.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 and rows[0]["scaling_factor"] == "1.0000"
