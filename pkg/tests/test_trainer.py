import math

import numpy as np
import pytest

from lmclab.errors import CompatibilityError, DomainError, TrainingDivergedError
from lmclab.model import Batch, ModelSpec, evaluate, init_params, loss
from lmclab.tasks import Dataset, generate_task_pair
from lmclab.trainer import Checkpoint, TrainConfig, learning_rate_at, sgd, train


def _data(seed=0, n=24, d=4, C=3):
    rng = np.random.default_rng(seed)
    return Dataset(rng.standard_normal((n, d)), rng.integers(0, C, n), C)


@pytest.mark.parametrize("kwargs", [dict(learning_rate=0.0), dict(epochs=0), dict(batch_size=0),
                                    dict(lr_schedule="step")])
def test_config_validation(kwargs):
    with pytest.raises(DomainError):
        TrainConfig(**kwargs)


def test_config_round_trip():
    cfg = TrainConfig(0.3, 4, 8, 9, "cosine")
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_single_small_step_decreases_convex_loss():
    spec = ModelSpec(4, (), 3)
    ds = _data()
    w0 = init_params(spec, 1)
    ckpt = train(spec, w0, ds, TrainConfig(1e-3, 1, len(ds)))
    full = Batch(ds.inputs, ds.labels)
    assert loss(spec, ckpt.params, full) < loss(spec, w0, full)


def test_step_count_and_determinism():
    spec = ModelSpec(4, (5,), 3)
    ds = _data(n=23)
    cfg = TrainConfig(0.05, 3, 5, seed=4)
    steps = []
    a = train(spec, init_params(spec, 0), ds, cfg, on_step=lambda e, s, l, w: steps.append((e, s)))
    b = train(spec, init_params(spec, 0), ds, cfg)
    assert len(steps) == 3 * math.ceil(23 / 5)
    assert steps[-1] == (2, 14)
    assert a == b
    assert a.provenance == "pretrained" and a.train_config == cfg and a.seed == 4


def test_epoch_hook_sees_each_epoch():
    spec = ModelSpec(4, (), 3)
    seen = []
    final = sgd(lambda w, b: (loss(spec, w, b), w.with_values(np.zeros(len(w)))), init_params(spec, 0),
                _data(), TrainConfig(0.1, 3, 8), on_epoch_end=lambda e, w: seen.append(e))
    assert seen == [0, 1, 2]
    assert final == init_params(spec, 0)


def test_cosine_schedule_endpoints():
    cfg = TrainConfig(0.4, 1, 1, lr_schedule="cosine")
    assert learning_rate_at(cfg, 0, 50) == 0.4
    assert abs(learning_rate_at(cfg, 49, 50)) <= 0.4 * 1e-6
    assert learning_rate_at(cfg, 24, 49) == pytest.approx(0.2)
    assert learning_rate_at(TrainConfig(0.4), 49, 50) == 0.4


def test_divergence_names_the_step():
    # gradient descent on ||w||^2 with lr 1.5 multiplies w by -2 every step
    spec = ModelSpec(4, (), 3)
    w0 = init_params(spec, 0)

    def quadratic(w, batch):
        with np.errstate(over="ignore"):
            return float(w.values @ w.values), w.with_values(2 * w.values)

    with pytest.raises(TrainingDivergedError) as info:
        sgd(quadratic, w0, _data(), TrainConfig(1.5, 100, 1), stage="finetuned")
    # ||w||^2 overflows once |w| passes ~1e154, about 512 doublings in
    assert 500 < info.value.step < 530
    assert info.value.loss == math.inf
    assert info.value.stage == "finetuned"
    assert f"step {info.value.step}" in str(info.value)


def test_default_benchmark_training_reduces_loss():
    tp = generate_task_pair(0)
    spec = ModelSpec(20, (), 10)
    w0 = init_params(spec, 0)
    ckpt = train(spec, w0, tp.pretrain_set, TrainConfig(0.1, 5, 32))
    assert evaluate(spec, ckpt.params, tp.pretrain_set)[0] < evaluate(spec, w0, tp.pretrain_set)[0]


def test_checkpoint_validation():
    spec = ModelSpec(4, (), 3)
    with pytest.raises(DomainError):
        Checkpoint(spec, init_params(spec, 0), "distilled")
    with pytest.raises(CompatibilityError):
        Checkpoint(spec, init_params(ModelSpec(3, (), 4), 0), "merged")
