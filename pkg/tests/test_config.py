import pytest

from mtpfn.config import ConfigError, dump_config, parse_config, parse_sampler
from mtpfn.model import ModelConfig
from mtpfn.prior import HyperSampler, PriorConfig, choice, fixed, int_uniform, tnlu
from mtpfn.training import TrainConfig


def test_parse_samplers():
    assert parse_sampler("tnlu(low=5, high=8, min=2, int)") == tnlu(5, 8, min=2, integer=True)
    assert parse_sampler("choice(elu, tanh)") == choice("elu", "tanh")
    assert parse_sampler("fixed(0.01)") == fixed(0.01)
    assert parse_sampler("int_uniform(1, 5)") == int_uniform(1, 5)
    assert parse_sampler("choice(True, False)") == choice(True, False)
    with pytest.raises(ConfigError):
        parse_sampler("0.5")


@pytest.mark.parametrize("cfg", [PriorConfig(), ModelConfig(), TrainConfig(),
                                 PriorConfig(paradigm="t_distinct", n_layers=fixed(3))])
def test_dump_parse_round_trip(cfg):
    kind = {PriorConfig: "prior", ModelConfig: "model", TrainConfig: "train"}[type(cfg)]
    assert parse_config(dump_config(cfg), kind) == cfg


def test_partial_file_keeps_defaults():
    cfg = parse_config("# tiny\nd_emb = 16\n\nn_layers = 1  # shallow\n", "model")
    assert cfg == ModelConfig(d_emb=16, n_layers=1)
    tc = parse_config("peak_lr = 1\n", "train")
    assert tc.peak_lr == 1.0 and isinstance(tc.peak_lr, float)


@pytest.mark.parametrize("text", ["nope = 1", "d_emb = big", "d_emb", "d_emb = 10\nn_heads = 4"])
def test_bad_files(text):
    with pytest.raises(ConfigError):
        parse_config(text, "model")


def test_beta_sampler_round_trip():
    s = PriorConfig().dropout_prob
    assert isinstance(s, HyperSampler)
    assert parse_sampler(dump_config(PriorConfig()).split("dropout_prob = ")[1].splitlines()[0]) == s
