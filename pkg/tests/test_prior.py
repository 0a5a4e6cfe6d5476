import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.stats.contingency import association

from mtpfn.prior import (
    HyperSampler, PriorConfig, build_scm, choice, fixed, int_uniform, propagate, quantile_bin,
    read_dataset, sample_batch, sample_dataset, sample_hyperparameters, select_and_discretize,
    tnlu, write_dataset,
)

SMALL = PriorConfig(n_layers=tnlu(2, 3, min=2, integer=True), hidden_dim=tnlu(8, 24, min=4, integer=True),
                    n_features=tnlu(2, 12, min=1, max=12, integer=True))


def test_fixed_and_choice_samplers():
    rng = np.random.default_rng(0)
    assert fixed(0.5).sample(rng) == 0.5
    draws = [choice("a", "b", "c").sample(rng) for _ in range(3000)]
    counts = [draws.count(x) for x in "abc"]
    assert stats.chisquare(counts).pvalue > 0.001


def test_int_uniform_is_uniform_and_inclusive():
    rng = np.random.default_rng(1)
    draws = np.array([int_uniform(1, 5).sample(rng) for _ in range(5000)])
    assert set(draws) == {1, 2, 3, 4, 5}
    assert stats.chisquare(np.bincount(draws)[1:]).pvalue > 0.001


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 50), st.floats(1.0, 20.0), st.integers(0, 2**31))
def test_tnlu_respects_clamps(low, ratio, seed):
    s = tnlu(low, low * ratio, min=low / 2, max=low * ratio * 2, integer=False)
    rng = np.random.default_rng(seed)
    for _ in range(20):
        v = s.sample(rng)
        assert low / 2 <= v <= low * ratio * 2


def test_integer_sampler_rounds_within_bounds():
    rng = np.random.default_rng(2)
    s = tnlu(1, 100, min=10, max=100, integer=True)
    vals = [s.sample(rng) for _ in range(500)]
    assert all(isinstance(v, int) and 10 <= v <= 100 for v in vals)


def test_beta_meta_uniform_range():
    s = PriorConfig().dropout_prob
    rng = np.random.default_rng(3)
    vals = np.array([s.sample(rng) for _ in range(500)])
    assert vals.min() >= 0 and vals.max() <= 0.9


def test_sampler_validation():
    with pytest.raises(ValueError):
        HyperSampler("tnlu", low=0, high=1)
    with pytest.raises(ValueError):
        HyperSampler("nope")
    with pytest.raises(ValueError):
        choice()
    with pytest.raises(ValueError):
        PriorConfig(paradigm="other")


def test_default_prior_matches_resolved_table():
    cfg = PriorConfig()
    assert (cfg.n_layers.low, cfg.n_layers.high, cfg.n_layers.min) == (5, 8, 2)
    assert (cfg.hidden_dim.low, cfg.hidden_dim.high, cfg.hidden_dim.min) == (57, 278, 4)
    assert cfg.categorical_prob.value == 0.287047
    assert (cfg.n_causes.low, cfg.n_causes.high) == (1, 12)
    assert cfg.paradigm == "single_shared"


def test_quantile_bin_example():
    labels = quantile_bin(np.arange(1, 13), n_bins=3)
    assert labels.tolist() == [0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2]


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 10), st.integers(0, 2**31))
def test_quantile_bin_is_monotone_and_in_range(c, seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=60)
    q = np.sort(rng.uniform(size=c - 1))
    lab = quantile_bin(v, quantiles=q)
    assert lab.min() >= 0 and lab.max() < c
    order = np.argsort(v)
    assert np.all(np.diff(lab[order]) >= 0)


@pytest.mark.parametrize("paradigm,expected", [("single_shared", {1}), ("t_distinct", {4}),
                                               ("distributed_n", {1, 2, 3, 4})])
def test_build_scm_instance_counts(paradigm, expected):
    rng = np.random.default_rng(4)
    seen = set()
    for _ in range(40):
        params = sample_hyperparameters(SMALL, rng)
        seen.add(len(build_scm(params, paradigm, 4, rng)))
    assert seen == expected


def test_mask_keep_rate_and_weight_scale():
    params = {"n_causes": 40, "hidden_dim": 200, "dropout_prob": 0.6, "init_std": 1.0,
              "n_layers": 2, "block_dropout": False, "activations": ["identity"] * 2,
              "noise_std": 0.0, "is_causal": True, "sampling": "normal"}
    scm = build_scm(params, "single_shared", 1, np.random.default_rng(5))[0]
    assert abs(scm.masks[1].mean() - 0.4) < 0.02
    # masked fan-in scaling keeps unit-variance inputs at unit variance
    out = propagate(scm, 4000, np.random.default_rng(6))
    assert 0.8 < out[:, 200:].var(axis=0).mean() < 1.25


def test_block_dropout_masks_are_blocky():
    params = {"n_causes": 16, "hidden_dim": 16, "dropout_prob": 0.5, "init_std": 1.0,
              "n_layers": 1, "block_dropout": True, "activations": ["tanh"],
              "noise_std": 0.0, "is_causal": True, "sampling": "normal"}
    mask = build_scm(params, "single_shared", 1, np.random.default_rng(7))[0].masks[0]
    blocks = mask.reshape(4, 4, 4, 4)
    assert np.all(blocks.min(axis=(1, 3)) == blocks.max(axis=(1, 3)))


def test_select_and_discretize_disjoint_and_labels():
    rng = np.random.default_rng(8)
    acts = rng.normal(size=(50, 20))
    ds = select_and_discretize(acts, 6, 3, 0.5, int_uniform(2, 10), rng, rotate=True)
    ds.validate()
    assert ds.X.shape == (50, 6) and ds.Y.shape == (50, 3)
    with pytest.raises(ValueError):
        select_and_discretize(acts, 19, 3, 0.0, int_uniform(2, 3), rng)


@pytest.mark.parametrize("paradigm", ["single_shared", "t_distinct", "distributed_n"])
def test_generated_datasets_are_valid(paradigm):
    rng = np.random.default_rng(9)
    cfg = SMALL.with_overrides(paradigm=paradigm)
    for ds in sample_batch(cfg, 25, 64, rng):
        ds.validate()
        assert 1 <= ds.split_position <= 63
        # categorical columns hold small non-negative integer codes
        for j in np.flatnonzero(ds.categorical):
            col = ds.X[:, j]
            assert np.all(col == np.round(col)) and col.min() >= 0 and col.max() < 10


def test_non_causal_features_come_from_roots():
    cfg = SMALL.with_overrides(is_causal=fixed(False), feature_rotation=fixed(False),
                               categorical_prob=fixed(0.0), noise_std=fixed(0.0),
                               sampling=fixed("normal"))
    ds = sample_dataset(cfg, 500, np.random.default_rng(10), T=2, k=4)
    # root causes are independent, so features are uncorrelated
    c = np.corrcoef(ds.X.T)
    assert np.max(np.abs(c - np.eye(4))) < 0.2


def test_split_respects_bounds():
    cfg = SMALL.with_overrides(split_low=10, split_high=20)
    rng = np.random.default_rng(11)
    splits = {sample_dataset(cfg, 64, rng).split_position for _ in range(40)}
    assert min(splits) >= 10 and max(splits) <= 20


def test_same_seed_same_dataset():
    a = sample_dataset(SMALL, 64, np.random.default_rng(12))
    b = sample_dataset(SMALL, 64, np.random.default_rng(12))
    assert a.X.tobytes() == b.X.tobytes() and a.Y.tobytes() == b.Y.tobytes()


def test_dataset_file_round_trip(tmp_path):
    ds = sample_dataset(SMALL, 32, np.random.default_rng(13))
    write_dataset(ds, tmp_path / "d.bin")
    back = read_dataset(tmp_path / "d.bin")
    np.testing.assert_allclose(back.X, ds.X.astype(np.float32))
    assert np.array_equal(back.Y, ds.Y)
    assert back.class_counts == ds.class_counts and back.split_position == ds.split_position


def _mean_pairwise_cramers_v(cfg, n_datasets, seed):
    rng = np.random.default_rng(seed)
    vals = []
    for _ in range(n_datasets):
        ds = sample_dataset(cfg, 200, rng, T=3)
        for a, b in itertools.combinations(range(3), 2):
            table = np.zeros((ds.class_counts[a], ds.class_counts[b]), dtype=np.int64)
            np.add.at(table, (ds.Y[:, a], ds.Y[:, b]), 1)
            table = table[table.sum(axis=1) > 0][:, table.sum(axis=0) > 0]
            if min(table.shape) > 1:
                vals.append(association(table, method="cramer"))
    return float(np.mean(vals))


def test_shared_scm_targets_more_associated_than_distinct():
    shared = _mean_pairwise_cramers_v(SMALL, 200, 14)
    distinct = _mean_pairwise_cramers_v(SMALL.with_overrides(paradigm="t_distinct"), 200, 14)
    assert shared > distinct
    assert math.isfinite(shared)
