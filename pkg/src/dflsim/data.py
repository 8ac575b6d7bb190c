"""Synthetic datasets and client partitioning schemes.

All generation and partitioning is a pure function of its seed. Shards are
index lists into the training split: disjoint, covering, and never empty.
"""

from dataclasses import dataclass, field

import numpy as np

REGRESSION = "regression"
CLASSIFICATION = "classification"


@dataclass(eq=False)
class Dataset:
    features: np.ndarray  # (examples, d_in) float64
    targets: np.ndarray   # float64 (regression) or int64 class ids
    kind: str
    n_classes: int = 0

    def __post_init__(self):
        if len(self.features) != len(self.targets):
            raise ValueError("features and targets disagree on example count")
        if self.kind == CLASSIFICATION:
            if self.n_classes < 2:
                raise ValueError("classification needs n_classes >= 2")
            if self.targets.size and (
                self.targets.min() < 0 or self.targets.max() >= self.n_classes
            ):
                raise ValueError("class ids must lie in [0, n_classes)")

    def __len__(self):
        return len(self.targets)


@dataclass
class PartitionPlan:
    """Per-client index lists into a training Dataset."""

    shards: list = field(default_factory=list)

    def validate(self, n_examples: int):
        seen = np.zeros(n_examples, dtype=bool)
        for idx in self.shards:
            if len(idx) == 0:
                raise ValueError("every client must receive at least one example")
            if seen[idx].any():
                raise ValueError("shards overlap")
            seen[idx] = True
        if not seen.all():
            raise ValueError("shards do not cover the training split")


def gen_synthetic_regression(
    n_examples: int = 10_000,
    d: int = 100,
    seed: int = 0,
    noise_std: float = 1.0,
    weight_std: float = 5.0,
    train_fraction: float = 0.8,
):
    """Linear-signal regression data: y = <x, w*> + eps.

    x and eps are standard normal per coordinate, w* has std `weight_std`.
    Returns (train, test, w_star) so tests can check recovery against the
    true parameter.
    """
    if n_examples < 2 or d < 1:
        raise ValueError("need n_examples >= 2 and d >= 1")
    rng = np.random.default_rng(seed)
    w_star = rng.normal(0.0, weight_std, size=d)
    x = rng.normal(0.0, 1.0, size=(n_examples, d))
    eps = rng.normal(0.0, noise_std, size=n_examples)
    y = x @ w_star + eps
    n_train = int(round(train_fraction * n_examples))
    train = Dataset(x[:n_train], y[:n_train], REGRESSION)
    test = Dataset(x[n_train:], y[n_train:], REGRESSION)
    return train, test, w_star


def gen_synthetic_classification(
    n_examples: int,
    d: int,
    z_classes: int,
    cluster_sep: float,
    seed: int,
    train_fraction: float = 0.8,
):
    """Gaussian cluster classification data.

    Class h gets mean cluster_sep * e_h (distinct axes, so d >= z is
    required) with unit covariance; label counts are balanced to within one
    example. Returns (train, test).
    """
    if z_classes < 2:
        raise ValueError("need z_classes >= 2")
    if d < z_classes:
        raise ValueError(f"need d >= z_classes for distinct cluster axes, got d={d}, z={z_classes}")
    rng = np.random.default_rng(seed)
    labels = np.arange(n_examples) % z_classes
    rng.shuffle(labels)
    x = rng.normal(0.0, 1.0, size=(n_examples, d))
    x[np.arange(n_examples), labels] += cluster_sep
    n_train = int(round(train_fraction * n_examples))
    train = Dataset(x[:n_train], labels[:n_train].astype(np.int64), CLASSIFICATION, z_classes)
    test = Dataset(x[n_train:], labels[n_train:].astype(np.int64), CLASSIFICATION, z_classes)
    return train, test


def partition_iid(train: Dataset, n_clients: int, seed: int) -> PartitionPlan:
    """Random equal-size disjoint shards (sizes differ by at most one)."""
    if n_clients > len(train):
        raise ValueError("more clients than training examples")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(train))
    plan = PartitionPlan(shards=[np.sort(chunk) for chunk in np.array_split(perm, n_clients)])
    plan.validate(len(train))
    return plan


def _client_groups(n_clients: int, z: int):
    # earlier groups absorb the remainder, deterministically
    return [list(map(int, g)) for g in np.array_split(np.arange(n_clients), z)]


def partition_noniid_grouped(train: Dataset, n_clients: int, p: float, seed: int) -> PartitionPlan:
    """Label-grouped heterogeneity.

    Clients are split into z groups. An example labelled h lands in group h
    with probability p, otherwise in a uniformly chosen other group; within
    the chosen group the client is uniform. p = 1/z is IID in expectation,
    p = 1 concentrates each label entirely in its group.
    """
    if train.kind != CLASSIFICATION:
        raise ValueError("grouped partitioning needs a classification dataset")
    z = train.n_classes
    if n_clients < z:
        raise ValueError(f"need n_clients >= {z} (one group per class)")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    rng = np.random.default_rng(seed)
    groups = _client_groups(n_clients, z)
    assignment = np.empty(len(train), dtype=np.int64)
    for e, label in enumerate(train.targets):
        if rng.random() < p or z == 1:
            g = int(label)
        else:
            others = [h for h in range(z) if h != int(label)]
            g = others[rng.integers(len(others))]
        members = groups[g]
        assignment[e] = members[rng.integers(len(members))]
    return _plan_from_assignment(assignment, n_clients, len(train))


def partition_noniid_slices(
    train: Dataset, n_clients: int, classes_per_client: int, seed: int
) -> PartitionPlan:
    """Each client sees exactly `classes_per_client` classes.

    Client i is assigned classes {(i*c + j) mod z}, so consecutive clients
    hold consecutive label slices; examples of each class are split evenly
    among the clients holding it.
    """
    if train.kind != CLASSIFICATION:
        raise ValueError("slice partitioning needs a classification dataset")
    z = train.n_classes
    if classes_per_client > z:
        raise ValueError("classes_per_client cannot exceed the class count")
    if n_clients * classes_per_client < z:
        raise ValueError("clients x classes_per_client cannot cover all classes")
    rng = np.random.default_rng(seed)
    holders = {h: [] for h in range(z)}
    for i in range(n_clients):
        for j in range(classes_per_client):
            holders[(i * classes_per_client + j) % z].append(i)
    assignment = np.empty(len(train), dtype=np.int64)
    for h in range(z):
        idx = np.flatnonzero(train.targets == h)
        rng.shuffle(idx)
        for chunk, client in zip(np.array_split(idx, len(holders[h])), holders[h]):
            assignment[chunk] = client
    return _plan_from_assignment(assignment, n_clients, len(train))


def _plan_from_assignment(assignment, n_clients, n_examples):
    shards = [np.flatnonzero(assignment == i) for i in range(n_clients)]
    # random schemes can starve a client; repair from the largest shard
    for i, shard in enumerate(shards):
        if len(shard) == 0:
            donor = int(np.argmax([len(s) for s in shards]))
            shards[i] = shards[donor][-1:]
            shards[donor] = shards[donor][:-1]
    plan = PartitionPlan(shards=shards)
    plan.validate(n_examples)
    return plan


def to_csv(dataset: Dataset, path):
    """Write one header row then one example per line."""
    d = dataset.features.shape[1]
    header = ",".join(f"f{j}" for j in range(d)) + ",target"
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row, t in zip(dataset.features, dataset.targets):
            cells = ",".join(repr(float(v)) for v in row)
            if dataset.kind == CLASSIFICATION:
                fh.write(f"{cells},{int(t)}\n")
            else:
                fh.write(f"{cells},{float(t)!r}\n")


def from_csv(path, kind: str, n_classes: int = 0) -> Dataset:
    """Read the `to_csv` format back."""
    with open(path) as fh:
        header = fh.readline()
        if not header.strip().endswith("target"):
            raise ValueError("missing header row")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    features = np.array([[float(v) for v in row[:-1]] for row in rows])
    if kind == CLASSIFICATION:
        targets = np.array([int(row[-1]) for row in rows], dtype=np.int64)
    else:
        targets = np.array([float(row[-1]) for row in rows])
    return Dataset(features, targets, kind, n_classes)
