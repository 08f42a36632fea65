from itertools import combinations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from fedra.allocation import (
    AllocationError,
    AllocationMatrix,
    Strategy,
    generate_allocation,
    read_allocation_csv,
    repair_empty_columns,
    sample_dynamic_capacities,
    selection_stats,
    write_allocation_csv,
)


@st.composite
def capacity_profiles(draw, max_layers=10, max_clients=6):
    L = draw(st.integers(1, max_layers))
    caps = draw(st.lists(st.integers(1, L), min_size=1, max_size=max_clients))
    return L, caps


def test_full_capacity_forces_all_ones(rng):
    m = generate_allocation(Strategy.RANDOM_UNIFORM, [5, 5, 5], 5, rng)
    assert np.all(m.entries == 1)


def test_prefix_twelve_layer_profile(rng):
    m = generate_allocation(Strategy.DEPTH_PREFIX, [12, 10, 8, 6, 4, 3], 12, rng)
    assert m.entries[5].tolist() == [1, 1, 1] + [0] * 9
    assert m.entries[0].tolist() == [1] * 12
    assert m.column_sums().tolist() == [6, 6, 6, 5, 4, 4, 3, 3, 2, 2, 1, 1]


def test_constrained_infeasible():
    with pytest.raises(AllocationError):
        generate_allocation(Strategy.RANDOM_CONSTRAINED, [1, 1], 3, np.random.default_rng(0))


def test_all_large_and_all_small(rng):
    big = generate_allocation(Strategy.ALL_LARGE, [8, 3, 2], 8, rng)
    assert np.all(big.entries == 1) and big.capacities == (8, 8, 8)
    small = generate_allocation(Strategy.ALL_SMALL, [8, 3, 2], 8, rng)
    assert small.capacities == (2, 2, 2)
    assert np.all(small.entries[:, :2] == 1) and np.all(small.entries[:, 2:] == 0)


def test_capacity_validation(rng):
    for caps in ([], [0], [9]):
        with pytest.raises(ValueError):
            generate_allocation(Strategy.RANDOM_UNIFORM, caps, 8, rng)
    with pytest.raises(ValueError):
        generate_allocation("zigzag", [1], 2, rng)


def test_matrix_validation():
    with pytest.raises(ValueError):
        AllocationMatrix(np.array([[1, 0]]), (2,))
    with pytest.raises(ValueError):
        AllocationMatrix(np.array([[2, 0]]), (2,))
    m = AllocationMatrix(np.array([[1, 0, 1]]), (2,))
    assert m.selection(0) == (0, 2)
    with pytest.raises(ValueError):
        m.entries[0, 0] = 0  # read-only


def test_single_row_frequency_half():
    rng = np.random.default_rng(2024)
    hist = [generate_allocation(Strategy.RANDOM_UNIFORM, [2] * 1000, 4, rng) for _ in range(100)]
    freq = sum(h.entries.sum(axis=0) for h in hist) / 100_000
    assert np.all(np.abs(freq - 0.5) <= 0.01)


@given(st.sampled_from(list(Strategy)), capacity_profiles(), st.integers(0, 2**31))
def test_row_sums_exact(strategy, profile, seed):
    L, caps = profile
    rng = np.random.default_rng(seed)
    if strategy is Strategy.RANDOM_CONSTRAINED and sum(caps) < L:
        with pytest.raises(AllocationError):
            generate_allocation(strategy, caps, L, rng)
        return
    m = generate_allocation(strategy, caps, L, rng)
    want = {Strategy.ALL_LARGE: [L] * len(caps), Strategy.ALL_SMALL: [min(caps)] * len(caps)}.get(strategy, caps)
    assert m.entries.sum(axis=1).tolist() == list(want)
    if strategy is Strategy.RANDOM_CONSTRAINED:
        assert m.column_sums().min() >= 1


@given(capacity_profiles(), st.integers(0, 2**31))
def test_repair_properties(profile, seed):
    L, caps = profile
    rng = np.random.default_rng(seed)
    m = generate_allocation(Strategy.RANDOM_UNIFORM, caps, L, rng)
    if sum(caps) < L:
        with pytest.raises(AllocationError):
            repair_empty_columns(m)
        return
    fixed = repair_empty_columns(m)
    empty = int(np.sum(m.column_sums() == 0))
    diff = fixed.entries.astype(int) - m.entries.astype(int)
    assert fixed.column_sums().min() >= 1
    assert fixed.capacities == m.capacities
    assert int(np.abs(diff).sum()) == 2 * empty
    if empty == 0:
        assert np.array_equal(fixed.entries, m.entries)


def test_repair_hand_trace():
    # both clients hold layer 0; client 0 is the donor and moves to layer 1
    m = AllocationMatrix(np.array([[1, 0], [1, 0]]), (1, 1))
    assert repair_empty_columns(m).entries.tolist() == [[0, 1], [1, 0]]


def test_repair_is_deterministic():
    m = AllocationMatrix(np.array([[1, 1, 0, 0], [1, 1, 0, 0], [1, 0, 0, 0]]), (2, 2, 1))
    a = repair_empty_columns(m, np.random.default_rng(0))
    b = repair_empty_columns(m, np.random.default_rng(99))
    assert np.array_equal(a.entries, b.entries)
    assert a.entries.tolist() == [[0, 0, 1, 1], [1, 1, 0, 0], [1, 0, 0, 0]]


@pytest.mark.parametrize("L,cap", [(4, 2), (5, 2), (5, 3)])
def test_every_subset_equally_likely(L, cap):
    rng = np.random.default_rng(L * 10 + cap)
    subsets = {c: i for i, c in enumerate(combinations(range(L), cap))}
    counts = np.zeros(len(subsets))
    for _ in range(200):
        m = generate_allocation(Strategy.RANDOM_UNIFORM, [cap] * 100, L, rng)
        for row in range(100):
            counts[subsets[m.selection(row)]] += 1
    assert np.all(counts > 0)
    assert stats.chisquare(counts).pvalue > 0.001


def test_selection_stats_single_round(rng):
    m = generate_allocation(Strategy.RANDOM_UNIFORM, [3, 1], 4, rng)
    s = selection_stats([m])
    assert np.array_equal(s.counts, m.entries) and s.rounds == 1


def test_selection_stats_prefix(rng):
    caps = [4, 2, 1]
    hist = [generate_allocation(Strategy.DEPTH_PREFIX, caps, 4, rng) for _ in range(7)]
    s = selection_stats(hist)
    for i, c in enumerate(caps):
        assert s.counts[i].tolist() == [7] * c + [0] * (4 - c)


def test_selection_frequency_quarter_within_three_sigma():
    rng = np.random.default_rng(5)
    T = 10_000
    s = selection_stats(generate_allocation(Strategy.RANDOM_UNIFORM, [3], 12, rng) for _ in range(T))
    sd = np.sqrt(0.25 * 0.75 / T)
    assert np.all(np.abs(s.frequencies - 0.25) <= 3 * sd)


def test_selection_stats_errors(rng):
    with pytest.raises(ValueError):
        selection_stats([])
    with pytest.raises(ValueError):
        selection_stats([generate_allocation("random", [1], 3, rng), generate_allocation("random", [1], 4, rng)])


def test_dynamic_capacities_range():
    rng = np.random.default_rng(0)
    caps = np.array([sample_dynamic_capacities(6, 8, rng) for _ in range(2000)])
    assert caps.min() == 1 and caps.max() == 8
    assert abs(caps.mean() - 4.5) < 0.1


def test_allocation_csv_round_trip(tmp_path, rng):
    hist = [generate_allocation(Strategy.RANDOM_UNIFORM, [3, 2, 1], 5, rng) for _ in range(4)]
    path = tmp_path / "alloc.csv"
    write_allocation_csv(hist, path)
    back = read_allocation_csv(path)
    assert len(back) == 4
    assert all(np.array_equal(a.entries, b.entries) for a, b in zip(hist, back))
