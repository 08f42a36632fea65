"""Per-round layer allocation matrices and their statistics.

An allocation matrix ``M`` is an ``N x L`` 0/1 array; ``M[i, j] == 1`` means
client ``i`` trains layer ``j`` this round and row ``i`` sums to the client's
capacity. Layers are 0-based.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np


class AllocationError(ValueError):
    """Capacities cannot be satisfied by the requested strategy."""


class Strategy(str, enum.Enum):
    RANDOM_UNIFORM = "random"
    RANDOM_CONSTRAINED = "constrained"
    DEPTH_PREFIX = "prefix"
    ALL_LARGE = "all_large"
    ALL_SMALL = "all_small"


@dataclass(frozen=True)
class AllocationMatrix:
    entries: np.ndarray  # (N, L) uint8
    capacities: tuple[int, ...]

    def __post_init__(self):
        e = np.asarray(self.entries)
        if e.ndim != 2 or e.shape[0] != len(self.capacities):
            raise ValueError(f"entries {e.shape} do not match {len(self.capacities)} capacities")
        if not np.all((e == 0) | (e == 1)):
            raise ValueError("allocation entries must be 0 or 1")
        if not np.array_equal(e.sum(axis=1), np.asarray(self.capacities)):
            raise ValueError(f"row sums {e.sum(axis=1).tolist()} != capacities {list(self.capacities)}")
        e = e.astype(np.uint8)
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @property
    def num_clients(self) -> int:
        return self.entries.shape[0]

    @property
    def num_layers(self) -> int:
        return self.entries.shape[1]

    def selection(self, client: int) -> tuple[int, ...]:
        return tuple(int(j) for j in np.flatnonzero(self.entries[client]))

    def column_sums(self) -> np.ndarray:
        return self.entries.sum(axis=0).astype(np.int64)


def _check_capacities(capacities, L: int) -> np.ndarray:
    caps = np.asarray(capacities, dtype=np.int64)
    if caps.ndim != 1 or caps.size == 0:
        raise ValueError("need at least one client capacity")
    if L < 1:
        raise ValueError("need at least one layer")
    if caps.min() < 1 or caps.max() > L:
        raise ValueError(f"capacities must lie in [1, {L}], got {caps.tolist()}")
    return caps


def _uniform_rows(caps: np.ndarray, L: int, rng: np.random.Generator) -> np.ndarray:
    # ranks of iid uniforms give a uniform random permutation per row; keep the first L_i
    order = np.argsort(rng.random((caps.size, L)), axis=1)
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(L)[None, :].repeat(caps.size, 0), axis=1)
    return (ranks < caps[:, None]).astype(np.uint8)


def repair_empty_columns(m: AllocationMatrix, rng: np.random.Generator | None = None) -> AllocationMatrix:
    """Fill each empty column by moving one entry out of a column that has >= 2.

    Deterministic: empty columns are visited in ascending order, and the donor
    is the lowest-index client holding a selected column with sum >= 2 (the
    lowest such column). Row sums are preserved. ``rng`` is accepted for
    interface symmetry and unused.
    """
    e = np.array(m.entries, dtype=np.int64)
    if int(e.sum()) < e.shape[1]:
        raise AllocationError(f"total capacity {int(e.sum())} cannot cover {e.shape[1]} layers")
    col = e.sum(axis=0)
    for j in np.flatnonzero(col == 0):
        moved = False
        for i in range(e.shape[0]):
            donors = np.flatnonzero((e[i] == 1) & (col >= 2))
            if donors.size:
                jp = donors[0]
                e[i, jp] = 0
                e[i, j] = 1
                col[jp] -= 1
                col[j] += 1
                moved = True
                break
        if not moved:
            raise RuntimeError(f"internal invariant violated: cannot repair empty column {j}")
    return AllocationMatrix(e, m.capacities)


def generate_allocation(strategy, capacities, L: int, rng: np.random.Generator,
                        max_attempts: int = 1000) -> AllocationMatrix:
    strategy = Strategy(strategy)
    caps = _check_capacities(capacities, L)
    n = caps.size
    if strategy is Strategy.ALL_LARGE:
        entries = np.ones((n, L), dtype=np.uint8)
        caps = np.full(n, L)
    elif strategy is Strategy.ALL_SMALL:
        caps = np.full(n, caps.min())
        entries = (np.arange(L)[None, :] < caps[:, None]).astype(np.uint8)
    elif strategy is Strategy.DEPTH_PREFIX:
        entries = (np.arange(L)[None, :] < caps[:, None]).astype(np.uint8)
    elif strategy is Strategy.RANDOM_UNIFORM:
        entries = _uniform_rows(caps, L, rng)
    else:
        if caps.sum() < L:
            raise AllocationError(f"total capacity {int(caps.sum())} cannot cover {L} layers")
        for _ in range(max_attempts):
            entries = _uniform_rows(caps, L, rng)
            if entries.sum(axis=0).min() >= 1:
                break
        else:
            return repair_empty_columns(AllocationMatrix(entries, tuple(int(c) for c in caps)), rng)
    return AllocationMatrix(entries, tuple(int(c) for c in caps))


def sample_dynamic_capacities(n: int, L: int, rng: np.random.Generator) -> tuple[int, ...]:
    """Per-round capacities drawn uniformly from {1, ..., L}."""
    return tuple(int(c) for c in rng.integers(1, L + 1, size=n))


@dataclass
class SelectionStats:
    counts: np.ndarray  # (N, L) int
    rounds: int

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.rounds


def selection_stats(history) -> SelectionStats:
    history = list(history)
    if not history:
        raise ValueError("empty allocation history")
    shape = history[0].entries.shape
    counts = np.zeros(shape, dtype=np.int64)
    for t, m in enumerate(history):
        if m.entries.shape != shape:
            raise ValueError(f"round {t} matrix has shape {m.entries.shape}, expected {shape}")
        counts += m.entries
    return SelectionStats(counts, len(history))


def write_allocation_csv(history, path, clients=None) -> None:
    """Rows ``round, client, layer, selected``; ``clients`` maps row -> client id per round."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "client", "layer", "selected"])
        for t, m in enumerate(history):
            ids = clients[t] if clients is not None else range(m.num_clients)
            for row, cid in enumerate(ids):
                for j in range(m.num_layers):
                    w.writerow([t, cid, j, int(m.entries[row, j])])


def read_allocation_csv(path) -> list[AllocationMatrix]:
    cells: dict[int, dict[int, dict[int, int]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            t, c, j = int(rec["round"]), int(rec["client"]), int(rec["layer"])
            cells.setdefault(t, {}).setdefault(c, {})[j] = int(rec["selected"])
    out = []
    for t in sorted(cells):
        clients = sorted(cells[t])
        L = max(max(row) for row in cells[t].values()) + 1
        e = np.zeros((len(clients), L), dtype=np.uint8)
        for r, c in enumerate(clients):
            for j, v in cells[t][c].items():
                e[r, j] = v
        out.append(AllocationMatrix(e, tuple(int(s) for s in e.sum(axis=1))))
    return out

