import numpy as np
import pytest

from ept.config import TaskSpec
from ept.data import balanced_sample, make_tasks
from ept.errors import ContractError, ParameterError
from oracles import perceptron_probe_accuracy

EMB = np.random.default_rng(0).normal(size=(64, 32))


def _features(d):
    return EMB[d.tokens[:, 1:]].mean(axis=1)


def test_same_seed_same_labels():
    specs = [TaskSpec(0, 1), TaskSpec(1, 4)]
    a, b = make_tasks(specs, 3, EMB, 16), make_tasks(specs, 3, EMB, 16)
    for x, y in zip(a, b):
        assert np.array_equal(x.labels, y.labels) and np.array_equal(x.tokens, y.tokens)


def test_prefix_token_and_content_range():
    ds = make_tasks([TaskSpec(0, 1), TaskSpec(0, 1), TaskSpec(1, 2, n_classes=4)], 0, EMB, 10)
    for d in ds:
        assert np.all(d.tokens[:, 0] == d.task)
        assert d.tokens[:, 1:].min() >= 3 and d.tokens.max() < 64
        assert d.tokens.shape == (256, 10) and d.eval_tokens.shape == (64, 10)


def test_full_rank_noise_free_labels_are_linearly_separable():
    ds = make_tasks([TaskSpec(0, 4), TaskSpec(1, 1)], 0, EMB, 16, label_noise=0.0, transform_noise=0.0)
    for d in ds:
        assert perceptron_probe_accuracy(_features(d), d.labels, 4) == 1.0


def test_label_noise_breaks_separability():
    d = make_tasks([TaskSpec(0, 4)], 0, EMB, 16, label_noise=0.4, transform_noise=0.0)[0]
    assert perceptron_probe_accuracy(_features(d), d.labels, 4) < 1.0


def test_same_family_shares_labelling_function():
    a, b = make_tasks([TaskSpec(0, 2), TaskSpec(0, 2)], 1, EMB, 16, transform_noise=0.0)
    assert np.array_equal(a.readout, b.readout)
    x = _features(b) - a.center
    assert np.array_equal((x @ a.readout.T).argmax(axis=1), (x @ b.readout.T).argmax(axis=1))


def test_family_members_must_agree():
    with pytest.raises(ParameterError):
        make_tasks([TaskSpec(0, 1), TaskSpec(0, 2)], 0, EMB, 8)
    with pytest.raises(ParameterError):
        make_tasks([], 0, EMB, 8)


def _sized(n_small, n_large):
    ds = make_tasks([TaskSpec(0, 1, n_train=n_small), TaskSpec(1, 1, n_train=n_large)], 0, EMB, 4)
    return ds


def test_balanced_sampling_ignores_dataset_size():
    ds = _sized(10, 10_000)
    _, _, tasks = balanced_sample(ds, np.random.default_rng(11), 10_000)
    counts = np.bincount(tasks, minlength=2)
    assert all(4700 <= c <= 5300 for c in counts)


def test_single_task_sampling():
    ds = make_tasks([TaskSpec(0, 1, n_train=5)], 0, EMB, 4)
    _, _, tasks = balanced_sample(ds, np.random.default_rng(0), 50)
    assert np.all(tasks == 0)


def test_round_robin_counts_are_exact():
    ds = make_tasks([TaskSpec(0, 1, n_train=7), TaskSpec(1, 1, n_train=30), TaskSpec(2, 1, n_train=3)], 0, EMB, 4)
    _, labels, tasks = balanced_sample(ds, np.random.default_rng(0), 5 * 3, "round_robin")
    assert np.bincount(tasks).tolist() == [5, 5, 5]
    _, _, shifted = balanced_sample(ds, np.random.default_rng(0), 3, "round_robin", offset=1)
    assert shifted.tolist() == [1, 2, 0]


def test_sampling_errors():
    with pytest.raises(ContractError):
        balanced_sample([], np.random.default_rng(0), 4)
    ds = make_tasks([TaskSpec(0, 1, n_train=5)], 0, EMB, 4)
    with pytest.raises(ParameterError):
        balanced_sample(ds, np.random.default_rng(0), 4, mode="weighted")
