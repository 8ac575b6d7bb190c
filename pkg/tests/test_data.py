"""Dataset generators and partition schemes."""

import numpy as np
import pytest

from dflsim import data


def test_regression_split_sizes():
    train, test, w_star = data.gen_synthetic_regression(10_000, 100, seed=1)
    assert len(train) == 8_000 and len(test) == 2_000
    assert w_star.shape == (100,)


def test_regression_noiseless_true_weights_give_zero_mse():
    train, test, w_star = data.gen_synthetic_regression(1_000, 20, seed=2, noise_std=0.0)
    resid = test.features @ w_star - test.targets
    assert float(np.max(np.abs(resid))) < 1e-9


def test_regression_target_variance_matches_signal_plus_noise():
    # E[Var(y)] = d * weight_std^2 + noise^2; single draws scatter with w*,
    # so the Monte-Carlo oracle averages over seeds
    samples = []
    for seed in range(60):
        train, test, _ = data.gen_synthetic_regression(2_000, 100, seed=seed)
        samples.append(np.var(np.concatenate([train.targets, test.targets])))
    assert float(np.mean(samples)) == pytest.approx(100 * 25 + 1, rel=0.05)


def test_regression_least_squares_recovers_w_star():
    train, _, w_star = data.gen_synthetic_regression(10_000, 100, seed=4)
    w_ls, *_ = np.linalg.lstsq(train.features, train.targets, rcond=None)
    rel = np.linalg.norm(w_ls - w_star) / np.linalg.norm(w_star)
    assert rel < 0.02


def test_classification_labels_balanced_within_one():
    train, test = data.gen_synthetic_classification(10_000, 12, 10, 4.0, seed=5)
    counts = np.bincount(np.concatenate([train.targets, test.targets]), minlength=10)
    assert counts.max() - counts.min() <= 1


def test_classification_separated_clusters_learnable():
    from dflsim import model as model_mod
    from dflsim.protocol import local_training

    train, test = data.gen_synthetic_classification(4_000, 2, 2, 10.0, seed=6)
    spec = model_mod.ModelSpec(model_mod.MULTINOMIAL_LOGISTIC, 2, 2)
    rng = np.random.default_rng(0)
    w = local_training(model_mod.zero_params(spec), train.features, train.targets,
                       spec, 1e-3, 200, 32, rng)
    pred = model_mod.predict(spec, w, test.features)
    assert float(np.mean(pred != test.targets)) < 0.05


def test_classification_zero_separation_unlearnable():
    from dflsim import model as model_mod
    from dflsim.protocol import local_training

    train, test = data.gen_synthetic_classification(4_000, 2, 2, 0.0, seed=7)
    spec = model_mod.ModelSpec(model_mod.MULTINOMIAL_LOGISTIC, 2, 2)
    rng = np.random.default_rng(0)
    w = local_training(model_mod.zero_params(spec), train.features, train.targets,
                       spec, 1e-3, 200, 32, rng)
    pred = model_mod.predict(spec, w, test.features)
    assert float(np.mean(pred != test.targets)) >= 0.4


def test_classification_needs_enough_axes():
    with pytest.raises(ValueError):
        data.gen_synthetic_classification(100, 3, 10, 4.0, seed=1)


def _assert_partition(plan, n_examples):
    plan.validate(n_examples)


def test_iid_default_shard_sizes():
    train, _, _ = data.gen_synthetic_regression(10_000, 10, seed=8)
    plan = data.partition_iid(train, 20, seed=1)
    assert all(len(s) == 400 for s in plan.shards)
    _assert_partition(plan, 8_000)


def test_iid_single_client_gets_everything():
    train, _, _ = data.gen_synthetic_regression(100, 5, seed=9)
    plan = data.partition_iid(train, 1, seed=1)
    assert len(plan.shards) == 1 and len(plan.shards[0]) == 80


def test_iid_deterministic():
    train, _, _ = data.gen_synthetic_regression(1_000, 5, seed=10)
    a = data.partition_iid(train, 7, seed=4)
    b = data.partition_iid(train, 7, seed=4)
    assert all(np.array_equal(x, y) for x, y in zip(a.shards, b.shards))


def test_grouped_rejects_regression():
    train, _, _ = data.gen_synthetic_regression(1_000, 5, seed=11)
    with pytest.raises(ValueError):
        data.partition_noniid_grouped(train, 20, 0.8, seed=1)


def test_grouped_p_one_concentrates_labels():
    train, _ = data.gen_synthetic_classification(5_000, 10, 5, 3.0, seed=12)
    plan = data.partition_noniid_grouped(train, 10, 1.0, seed=2)
    _assert_partition(plan, len(train))
    # group h = clients {2h, 2h+1}; every label-h example must land there
    for h in range(5):
        holders = {2 * h, 2 * h + 1}
        idx = np.flatnonzero(train.targets == h)
        assigned = {c for c in range(10) if np.intersect1d(plan.shards[c], idx).size}
        assert assigned <= holders


def test_grouped_uniform_p_close_to_iid():
    train, _ = data.gen_synthetic_classification(100_000, 10, 10, 3.0, seed=13)
    plan = data.partition_noniid_grouped(train, 20, 1.0 / 10, seed=3)
    _assert_partition(plan, len(train))
    # per-client label histogram roughly uniform
    for shard in plan.shards:
        hist = np.bincount(train.targets[shard], minlength=10) / len(shard)
        assert np.max(np.abs(hist - 0.1)) < 0.05


def test_slices_each_client_three_classes():
    train, _ = data.gen_synthetic_classification(20_000, 10, 10, 3.0, seed=14)
    plan = data.partition_noniid_slices(train, 20, 3, seed=4)
    _assert_partition(plan, len(train))
    label_sets = [set(np.unique(train.targets[s])) for s in plan.shards]
    assert all(len(ls) == 3 for ls in label_sets)
    assert set().union(*label_sets) == set(range(10))
    assert label_sets[0] == {0, 1, 2}


def test_slices_full_width_is_iid_by_label():
    train, _ = data.gen_synthetic_classification(5_000, 10, 5, 3.0, seed=15)
    plan = data.partition_noniid_slices(train, 10, 5, seed=5)
    label_sets = [set(np.unique(train.targets[s])) for s in plan.shards]
    assert all(ls == set(range(5)) for ls in label_sets)


def test_slices_coverage_infeasible_rejected():
    train, _ = data.gen_synthetic_classification(1_000, 10, 10, 3.0, seed=16)
    with pytest.raises(ValueError):
        data.partition_noniid_slices(train, 2, 3, seed=6)


def test_csv_round_trip(tmp_path):
    train, _ = data.gen_synthetic_classification(50, 4, 2, 3.0, seed=17)
    path = tmp_path / "ds.csv"
    data.to_csv(train, path)
    back = data.from_csv(path, data.CLASSIFICATION, 2)
    assert np.array_equal(back.features, train.features)
    assert np.array_equal(back.targets, train.targets)


def test_csv_round_trip_regression(tmp_path):
    train, _, _ = data.gen_synthetic_regression(40, 3, seed=18)
    path = tmp_path / "reg.csv"
    data.to_csv(train, path)
    back = data.from_csv(path, data.REGRESSION)
    assert np.array_equal(back.features, train.features)
    assert np.array_equal(back.targets, train.targets)
