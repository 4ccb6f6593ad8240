import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lmclab.errors import DomainError
from lmclab.tasks import Dataset, SamplerState, TrackedDataset, batches_per_epoch, generate_task_pair, sample_batch


def test_generation_is_deterministic():
    a, b = generate_task_pair(5), generate_task_pair(5)
    assert a == b
    assert np.array_equal(a.pretrain_set.inputs, b.pretrain_set.inputs)
    assert generate_task_pair(6) != a


def test_default_split_sizes_and_partition():
    tp = generate_task_pair(0)
    assert len(tp.base_classes) == 5 and len(tp.novel_classes) == 5
    assert set(tp.base_classes) | set(tp.novel_classes) == set(range(10))
    assert not set(tp.base_classes) & set(tp.novel_classes)
    assert set(np.unique(tp.downstream_train.labels)) == set(tp.base_classes)
    assert set(np.unique(tp.eval_base.labels)) == set(tp.base_classes)
    assert set(np.unique(tp.eval_novel.labels)) == set(tp.novel_classes)
    assert len(tp.downstream_train) == 5 * 16
    assert len(tp.eval_base) == len(tp.eval_novel) == 5 * 200
    assert {d.dim for d in (tp.pretrain_set, tp.downstream_train, tp.eval_base, tp.eval_novel)} == {20}


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(4, 12), st.floats(0.05, 0.95))
def test_base_classes_are_first_ceil_fraction_of_seeded_permutation(seed, C, frac):
    n_base = math.ceil(frac * C)
    if n_base >= C:
        with pytest.raises(DomainError):
            generate_task_pair(seed, dim=3, num_classes=C, base_fraction=frac, pretrain_per_class=2,
                               eval_per_class=2, n_shots=1)
        return
    tp = generate_task_pair(seed, dim=3, num_classes=C, base_fraction=frac, pretrain_per_class=2,
                            eval_per_class=2, n_shots=1)
    assert len(tp.base_classes) == n_base
    # the permutation is the third draw from the seeded generator
    rng = np.random.default_rng(seed)
    rng.standard_normal((C, 3))
    rng.standard_normal(3)
    order = rng.permutation(C)
    assert tp.base_classes == tuple(sorted(int(c) for c in order[:n_base]))
    for d in (tp.pretrain_set, tp.downstream_train, tp.eval_base, tp.eval_novel):
        assert np.all(np.isfinite(d.inputs))


def test_zero_shift_keeps_cluster_means():
    tp = generate_task_pair(1, shift_scale=0.0, n_shots=400, noise_sigma=0.5)
    np.testing.assert_array_equal(tp.shift, 0.0)
    for c in tp.base_classes:
        m = tp.downstream_train.inputs[tp.downstream_train.labels == c].mean(axis=0)
        # 400 draws of N(0, 0.25) per coordinate: standard error 0.025
        np.testing.assert_allclose(m, tp.means[c], atol=0.15)


def test_shift_has_requested_norm_and_moves_downstream_only():
    tp = generate_task_pair(2, shift_scale=2.5, n_shots=400, pretrain_per_class=400)
    assert np.linalg.norm(tp.shift) == pytest.approx(2.5, rel=1e-12)
    c = tp.base_classes[0]
    down = tp.downstream_train.inputs[tp.downstream_train.labels == c].mean(axis=0)
    pre = tp.pretrain_set.inputs[tp.pretrain_set.labels == c].mean(axis=0)
    np.testing.assert_allclose(down - pre, tp.shift, atol=0.2)
    n = tp.novel_classes[0]
    nov = tp.eval_novel.inputs[tp.eval_novel.labels == n].mean(axis=0)
    np.testing.assert_allclose(nov - tp.means[n], tp.shift, atol=0.2)


@pytest.mark.parametrize("kwargs", [
    dict(num_classes=3), dict(base_fraction=0.0), dict(base_fraction=1.0), dict(shift_scale=-1.0),
    dict(noise_sigma=0.0), dict(n_shots=0), dict(dim=0), dict(mean_scale=0.0),
])
def test_generator_domain_errors(kwargs):
    with pytest.raises(DomainError):
        generate_task_pair(0, **kwargs)


def test_dataset_validation_and_immutability():
    with pytest.raises(DomainError):
        Dataset(np.zeros((2, 2)), np.array([0, 3]), 3)
    with pytest.raises(DomainError):
        Dataset(np.zeros((2, 2)), np.array([0]), 3)
    with pytest.raises(DomainError):
        Dataset(np.array([[np.nan, 0.0]]), np.array([0]), 2)
    ds = Dataset(np.zeros((2, 2)), np.array([0, 1]), 2)
    with pytest.raises(ValueError):
        ds.inputs[0, 0] = 1.0


def _ds(n=10):
    return Dataset(np.arange(n, dtype=float).reshape(n, 1), np.arange(n) % 2, 2)


def test_full_batch_is_permuted_dataset():
    ds = _ds()
    batch = sample_batch(ds, 10, SamplerState(0))
    assert sorted(batch.inputs[:, 0]) == list(range(10))


def test_epoch_partitions_dataset_and_reshuffles():
    ds = _ds(10)
    state = SamplerState(3)
    first = [sample_batch(ds, 4, state) for _ in range(batches_per_epoch(10, 4))]
    assert [len(b) for b in first] == [4, 4, 2]
    assert sorted(np.concatenate([b.inputs[:, 0] for b in first])) == list(range(10))
    second = [sample_batch(ds, 4, state) for _ in range(3)]
    assert sorted(np.concatenate([b.inputs[:, 0] for b in second])) == list(range(10))
    assert state.epoch == 1


def test_identical_states_give_identical_batches():
    ds = _ds(9)
    s1, s2 = SamplerState(42), SamplerState(42)
    for _ in range(7):
        b1, b2 = sample_batch(ds, 4, s1), sample_batch(ds, 4, s2)
        np.testing.assert_array_equal(b1.inputs, b2.inputs)
        np.testing.assert_array_equal(b1.labels, b2.labels)


def test_batch_size_domain():
    with pytest.raises(DomainError):
        sample_batch(_ds(3), 4, SamplerState(0))
    with pytest.raises(DomainError):
        sample_batch(_ds(3), 0, SamplerState(0))


def test_tracked_dataset_counts_reads():
    tracked = TrackedDataset(_ds(4))
    assert len(tracked) == 4 and tracked.reads == 0
    sample_batch(tracked, 2, SamplerState(0))
    assert tracked.reads == 2
