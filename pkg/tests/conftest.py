import numpy as np
import pytest

from mtpfn.model import ModelConfig
from mtpfn.prior import PriorConfig, choice, fixed
from mtpfn.training import TrainConfig, train

CRITERIA = {}

# Linear, low-noise, two binary targets from one shared graph.
RESTRICTED_PRIOR = PriorConfig(
    n_layers=fixed(2), hidden_dim=fixed(8), noise_std=fixed(0.01), categorical_prob=fixed(0.0),
    n_features=fixed(5), n_outputs=fixed(2), dropout_prob=fixed(0.0), init_std=fixed(1.0),
    n_causes=fixed(3), activation=choice("identity"), block_dropout=fixed(False),
    feature_rotation=fixed(False), is_causal=fixed(True), sampling=fixed("normal"),
    n_classes=fixed(2), paradigm="single_shared", split_low=32, split_high=112,
)
SMOKE_TRAIN = TrainConfig(epochs=20, batches_per_epoch=100, batch_size=8, peak_lr=1e-3,
                          warmup_epochs=1, n_samples=128, seed=0)
SMOKE_MODEL = ModelConfig(d_emb=64, n_layers=3)


def record(number, passed, detail):
    """Remember one acceptance line; printed in the terminal summary."""
    CRITERIA[number] = (bool(passed), detail)
    return bool(passed)


@pytest.fixture(scope="session")
def smoke_model():
    """Tiny model trained on the restricted prior, shared by the learning criteria."""
    import time
    t0 = time.process_time()
    params, state = train(SMOKE_TRAIN, RESTRICTED_PRIOR, SMOKE_MODEL)
    return params, state, time.process_time() - t0


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
