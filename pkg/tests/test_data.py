import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedra.data import (
    DomainSpec,
    LabeledDataset,
    PartitionMode,
    SyntheticConfig,
    build_federation_scenario,
    dirichlet_partition,
    label_distribution,
    make_synthetic_domains,
    read_dataset_csv,
    total_variation,
    write_dataset_csv,
)


def _toy(n=100, classes=4, seed=0):
    rng = np.random.default_rng(seed)
    return LabeledDataset(rng.normal(size=(n, 3)), rng.integers(0, classes, n), 0, np.arange(n))


def test_default_config_has_six_domains():
    cfg = SyntheticConfig()
    assert cfg.num_domains == 6
    doms = cfg.make(np.random.default_rng(0))
    assert len(doms) == 6
    assert all(len(d.train) == 600 and len(d.test) == 150 for d in doms)


def test_identity_spec_leaves_base_distribution():
    spec = DomainSpec.identity(3)
    x = np.random.default_rng(0).normal(size=(5, 3))
    assert np.array_equal(spec.apply(x, np.random.default_rng(1)), x)


def test_spec_rejects_non_orthogonal():
    with pytest.raises(ValueError):
        DomainSpec(np.array([[1.0, 1.0], [0.0, 1.0]]), np.zeros(2))


@given(st.integers(0, 2**31), st.floats(0, 3))
def test_random_spec_is_orthogonal(seed, rot):
    spec = DomainSpec.random(6, np.random.default_rng(seed), rot, 0.3, 0.1)
    np.testing.assert_allclose(spec.rotation.T @ spec.rotation, np.eye(6), atol=1e-10)


def test_zero_rotation_is_identity():
    spec = DomainSpec.random(5, np.random.default_rng(0), 0.0, 0.0, 0.0)
    np.testing.assert_allclose(spec.rotation, np.eye(5), atol=1e-12)


def _probe(train):
    X = np.column_stack([train.features, np.ones(len(train))])
    Y = np.eye(train.labels.max() + 1)[train.labels]
    return np.linalg.lstsq(X, Y, rcond=None)[0]


def _probe_acc(W, ds):
    X = np.column_stack([ds.features, np.ones(len(ds))])
    return float(np.mean(np.argmax(X @ W, axis=1) == ds.labels))


def test_probe_transfer_degrades_but_beats_chance():
    doms = make_synthetic_domains(2, 5, 16, 1000, np.random.default_rng(3), domain_rotation=0.3)
    W = _probe(doms[0].train)
    own, other = _probe_acc(W, doms[0].test), _probe_acc(W, doms[1].test)
    assert other < own
    assert other > 0.2 + 0.1


def test_ids_unique_and_split_stratified():
    doms = make_synthetic_domains(3, 7, 4, 123, np.random.default_rng(0))
    ids = np.concatenate([np.concatenate([d.train.ids, d.test.ids]) for d in doms])
    assert len(np.unique(ids)) == len(ids) == 3 * 123
    for d in doms:
        assert np.ptp(np.bincount(d.test.labels, minlength=7)) <= 1


def test_generation_preconditions():
    with pytest.raises(ValueError):
        make_synthetic_domains(0, 2, 2, 10, np.random.default_rng(0))
    with pytest.raises(ValueError):
        make_synthetic_domains(1, 20, 2, 10, np.random.default_rng(0))


def test_single_part_is_identity():
    ds = _toy()
    (out,) = dirichlet_partition(ds, 0.5, 1, np.random.default_rng(0))
    assert np.array_equal(out.ids, ds.ids) and np.array_equal(out.features, ds.features)


@given(st.integers(0, 2**31), st.integers(1, 120), st.integers(1, 10), st.sampled_from([0.05, 0.5, 5.0, 100.0]))
def test_partition_complete_and_disjoint(seed, n, parts, alpha):
    ds = _toy(n=n, seed=seed % 1000)
    if parts > n:
        with pytest.raises(ValueError):
            dirichlet_partition(ds, alpha, parts, np.random.default_rng(seed))
        return
    shards = dirichlet_partition(ds, alpha, parts, np.random.default_rng(seed))
    assert len(shards) == parts and all(len(s) > 0 for s in shards)
    assert np.array_equal(np.sort(np.concatenate([s.ids for s in shards])), np.arange(n))


def test_partition_preconditions():
    with pytest.raises(ValueError):
        dirichlet_partition(_toy(), 0.0, 2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        dirichlet_partition(_toy(), 1.0, 0, np.random.default_rng(0))


def test_large_alpha_is_nearly_iid():
    rng = np.random.default_rng(0)
    labels = np.repeat(np.arange(10), 1000)
    ds = LabeledDataset(np.zeros((10_000, 1)), labels)
    for shard in dirichlet_partition(ds, 100.0, 5, rng):
        assert total_variation(label_distribution(shard, 10), np.full(10, 0.1)) < 0.1


def test_skew_decreases_with_alpha():
    ds = make_synthetic_domains(1, 10, 4, 2000, np.random.default_rng(0))[0].train
    tv = []
    for alpha in (0.1, 0.5, 100.0):
        vals = []
        for rep in range(10):
            dist = [label_distribution(s, 10) for s in dirichlet_partition(ds, alpha, 5, np.random.default_rng(rep))]
            vals += [total_variation(dist[a], dist[b]) for a in range(5) for b in range(a + 1, 5)]
        tv.append(np.mean(vals))
    assert tv[0] > tv[1] > tv[2]


def test_feature_skew_scenario():
    doms = make_synthetic_domains(6, 4, 5, 60, np.random.default_rng(0))
    sc = build_federation_scenario("feature", [8, 6, 5, 4, 3, 2], doms, np.random.default_rng(0))
    assert sc.mode is PartitionMode.FEATURE_SKEW and sc.num_clients == 6
    assert sc.capacities == (8, 6, 5, 4, 3, 2)
    assert [c.domain for c in sc.clients] == list(range(6))
    assert len(sc.test_sets) == 6


def test_feature_label_skew_scenario():
    doms = make_synthetic_domains(6, 4, 60, 60, np.random.default_rng(0))
    caps = [c for c in (8, 6, 5, 4, 3, 2) for _ in range(5)]
    sc = build_federation_scenario("feature_label", caps, doms, np.random.default_rng(1), alpha=0.5, parts=5)
    assert sc.num_clients == 30
    for k in range(6):
        group = [c for c in sc.clients if c.domain == k]
        assert len(group) == 5 and len({c.capacity for c in group}) == 1
        ids = np.sort(np.concatenate([c.train.ids for c in group]))
        assert np.array_equal(ids, np.sort(doms[k].train.ids))
    with pytest.raises(ValueError):
        build_federation_scenario("feature_label", caps[:-1], doms, np.random.default_rng(1))
    with pytest.raises(ValueError):
        build_federation_scenario("feature", caps, doms, np.random.default_rng(1))


def test_scenarios_are_reproducible():
    def build():
        rng = np.random.default_rng(9)
        doms = make_synthetic_domains(2, 3, 4, 40, rng)
        return build_federation_scenario("feature_label", [1] * 6, doms, rng, 0.3, 3)
    a, b = build(), build()
    for x, y in zip(a.clients, b.clients):
        assert x.train.features.tobytes() == y.train.features.tobytes()
        assert x.train.ids.tobytes() == y.train.ids.tobytes()


def test_dataset_csv_round_trip(tmp_path):
    doms = make_synthetic_domains(2, 3, 4, 30, np.random.default_rng(0))
    path = tmp_path / "data.csv"
    write_dataset_csv(doms, path)
    back = read_dataset_csv(path)
    assert len(back) == 2
    for a, b in zip(doms, back):
        assert np.array_equal(a.train.features, b.train.features)
        assert np.array_equal(a.test.labels, b.test.labels)
        assert np.array_equal(a.train.ids, b.train.ids)


def test_dataset_shape_check():
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((3, 2)), np.zeros(2))
