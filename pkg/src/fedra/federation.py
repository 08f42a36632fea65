"""Round orchestration: allocate, dispatch, train locally, aggregate, evaluate."""

from __future__ import annotations

import enum
import time
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .allocation import AllocationMatrix, Strategy, generate_allocation, sample_dynamic_capacities
from .model import StackModel, SubModel, evaluate, extract_submodel
from .nn_core import DenseParams, NumericError
from .theory import mask_deviation_alpha


class DivergenceError(NumericError):
    def __init__(self, message, round_index=None, client=None, step=None):
        super().__init__(f"{message} (round={round_index}, client={client}, step={step})")
        self.round_index = round_index
        self.client = client
        self.step = step


class MissingLayerStrategy(str, enum.Enum):
    CARRY_FORWARD = "carry"
    CONSTRAIN = "constrain"


def derive_rng(seed: int, purpose: str, *keys: int) -> np.random.Generator:
    """Independent stream per (seed, purpose, keys); stable across runs and platforms."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(purpose.encode()),
                                                         *(int(k) for k in keys)]))


@dataclass(frozen=True)
class RoundConfig:
    lr: float = 0.01
    local_epochs: int = 1
    batch_size: int = 32
    clients_per_round: int = 6
    strategy: Strategy = Strategy.RANDOM_UNIFORM
    missing: MissingLayerStrategy = MissingLayerStrategy.CARRY_FORWARD
    dynamic: bool = False
    log_gradnorm: bool = True

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        object.__setattr__(self, "missing", MissingLayerStrategy(self.missing))
        if not self.lr >= 0:
            raise ValueError(f"lr must be non-negative, got {self.lr}")
        if self.local_epochs < 1 or self.batch_size < 1 or self.clients_per_round < 1:
            raise ValueError("local_epochs, batch_size and clients_per_round must be >= 1")
        if self.missing is MissingLayerStrategy.CONSTRAIN and self.strategy in (
                Strategy.DEPTH_PREFIX, Strategy.ALL_SMALL):
            raise ValueError(f"strategy {self.strategy.value!r} cannot guarantee layer coverage")

    @property
    def allocation_strategy(self) -> Strategy:
        if self.missing is MissingLayerStrategy.CONSTRAIN and self.strategy is Strategy.RANDOM_UNIFORM:
            return Strategy.RANDOM_CONSTRAINED
        return self.strategy


@dataclass
class ClientUpdate:
    client_id: int
    selected: tuple[int, ...]
    down: np.ndarray  # (k, r, d) in order of ``selected``
    up: np.ndarray  # (k, d, r)
    head: DenseParams
    n_samples: int
    train_loss: float = float("nan")

    def adapter(self, layer: int) -> tuple[np.ndarray, np.ndarray]:
        pos = self.selected.index(layer)
        return self.down[pos], self.up[pos]


def local_train(sub: SubModel, data, cfg: RoundConfig, rng: np.random.Generator,
                client_id: int = 0, round_index: int | None = None) -> ClientUpdate:
    """Minibatch SGD on adapters and head; the frozen arrays are never written."""
    n = len(data.labels)
    if n == 0:
        raise ValueError(f"client {client_id} has no training data")
    H0 = sub.project(data.features)
    y = np.asarray(data.labels).astype(np.intp)
    gD = np.empty_like(sub.down)
    gU = np.empty_like(sub.up)
    gW = np.empty_like(sub.head.weight)
    gb = np.empty_like(sub.head.bias)
    lr = cfg.lr
    step = 0
    losses = []
    for _ in range(cfg.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss = kernels.forward_backward(
                H0[idx], sub.base_weight, sub.base_bias, sub.down, sub.up, sub.scale,
                sub.act_code, sub.head.weight, sub.head.bias, y[idx], gD, gU, gW, gb)
            if not (np.isfinite(loss) and np.isfinite(gD).all() and np.isfinite(gU).all()
                    and np.isfinite(gW).all()):
                raise DivergenceError("non-finite training loss or gradient", round_index, client_id, step)
            sub.down -= lr * gD
            sub.up -= lr * gU
            sub.head.weight -= lr * gW
            sub.head.bias -= lr * gb
            losses.append(loss)
            step += 1
    return ClientUpdate(client_id, sub.selected, sub.down, sub.up, sub.head, n, float(np.mean(losses)))


def layer_weights(updates: list[ClientUpdate], m: AllocationMatrix) -> np.ndarray:
    """(N, L) aggregation weights: ``n_i / sum of n over clients holding layer j``.

    Each column with a nonzero sum adds up to one; empty columns are all zero.
    """
    n = np.array([u.n_samples for u in updates], dtype=np.float64)
    if np.any(n <= 0):
        raise ValueError("every update needs a positive sample count")
    mass = m.entries * n[:, None]
    totals = mass.sum(axis=0)
    return np.divide(mass, totals, out=np.zeros_like(mass), where=totals > 0)


def aggregate_lora(global_model: StackModel, updates: list[ClientUpdate], m: AllocationMatrix,
                   missing=MissingLayerStrategy.CARRY_FORWARD) -> StackModel:
    """Per-layer sample-weighted mean of the adapter factors of the clients that trained it.

    Row ``i`` of ``m`` belongs to ``updates[i]``. Layers nobody trained keep
    their previous value under carry-forward. Returns a new model.
    """
    missing = MissingLayerStrategy(missing)
    if len(updates) != m.num_clients:
        raise ValueError(f"{len(updates)} updates for {m.num_clients} allocation rows")
    for i, u in enumerate(updates):
        if tuple(u.selected) != m.selection(i):
            raise ValueError(f"update from client {u.client_id} trained {u.selected}, row {i} allocates {m.selection(i)}")
    w = layer_weights(updates, m)
    out = global_model.copy()
    for j in range(global_model.L):
        rows = np.flatnonzero(m.entries[:, j])
        if rows.size == 0:
            if missing is MissingLayerStrategy.CONSTRAIN:
                raise RuntimeError(f"layer {j} has no clients under constrained allocation")
            continue
        down = np.zeros_like(out.down[j])
        up = np.zeros_like(out.up[j])
        for i in rows:
            d_i, u_i = updates[i].adapter(j)
            down += w[i, j] * d_i
            up += w[i, j] * u_i
        out.down[j] = down
        out.up[j] = up
    return out


def aggregate_head(global_model: StackModel, updates: list[ClientUpdate]) -> DenseParams:
    if not updates:
        raise ValueError("head aggregation needs at least one update")
    total = float(sum(u.n_samples for u in updates))
    w = sum(u.head.weight * u.n_samples for u in updates) / total
    b = sum(u.head.bias * u.n_samples for u in updates) / total
    return DenseParams(w, b)


@dataclass
class ServerState:
    model: StackModel
    round: int = 0


@dataclass
class RoundReport:
    round: int
    participants: tuple[int, ...]
    allocation: AllocationMatrix
    accuracy: list[float]  # per test domain
    loss: list[float]
    gamma: np.ndarray  # clients per layer this round
    alpha_measured: float
    train_loss: float
    objective: float = float("nan")  # global objective at the round's starting point
    grad_norm2: float = float("nan")  # sum over trained layers of ||grad F^l||^2
    r_norm2: float = float("nan")  # ||r_t||^2 of the adapters sent out
    wall_time: float = 0.0

    @property
    def average_accuracy(self) -> float:
        return float(np.mean(self.accuracy))

    @property
    def gamma_min(self) -> int:
        trained = self.gamma[self.gamma > 0]
        return int(trained.min()) if trained.size else 0

    @property
    def trained_layers(self) -> tuple[int, ...]:
        return tuple(int(j) for j in np.flatnonzero(self.gamma))


def global_gradient(model: StackModel, clients) -> tuple[float, np.ndarray, np.ndarray]:
    """Objective ``(1/N) sum_n F_n`` and its adapter gradients (down, up) at ``model``."""
    gD = np.zeros_like(model.down)
    gU = np.zeros_like(model.up)
    tmpD, tmpU = np.empty_like(gD), np.empty_like(gU)
    gW = np.empty_like(model.head.weight)
    gb = np.empty_like(model.head.bias)
    obj = 0.0
    for c in clients:
        loss = kernels.forward_backward(
            model.project(c.train.features), model.base_weight, model.base_bias, model.down,
            model.up, model.scale, model.act_code, model.head.weight, model.head.bias,
            np.asarray(c.train.labels).astype(np.intp), tmpD, tmpU, gW, gb)
        obj += loss
        gD += tmpD
        gU += tmpU
    n = len(clients)
    return obj / n, gD / n, gU / n


def round_allocation(t: int, capacities, L: int, cfg: RoundConfig, seed: int):
    """Participants and allocation matrix of round ``t``; depends only on its arguments."""
    n_clients = len(capacities)
    k = min(cfg.clients_per_round, n_clients)
    if k == n_clients:
        participants = tuple(range(n_clients))
    else:
        chosen = derive_rng(seed, "clients", t).choice(n_clients, size=k, replace=False)
        participants = tuple(sorted(int(i) for i in chosen))
    if cfg.dynamic:
        caps = sample_dynamic_capacities(k, L, derive_rng(seed, "capacity", t))
    else:
        caps = tuple(min(capacities[i], L) for i in participants)
    return participants, generate_allocation(cfg.allocation_strategy, caps, L, derive_rng(seed, "allocation", t))


def run_round(state: ServerState, scenario, cfg: RoundConfig, seed: int) -> tuple[ServerState, RoundReport]:
    t0 = time.perf_counter()
    t = state.round
    model = state.model
    L = model.L
    participants, m = round_allocation(t, scenario.capacities, L, cfg, seed)
    k = len(participants)
    clients = [scenario.clients[i] for i in participants]

    r_t = model.adapter_vector()
    r_norm2 = float(r_t @ r_t)
    alpha = max(mask_deviation_alpha(r_t, model.layer_mask(m.selection(i))) for i in range(k))
    objective = grad_norm2 = float("nan")
    if cfg.log_gradnorm:
        objective, gD, gU = global_gradient(model, scenario.clients)
        trained = np.flatnonzero(m.column_sums())
        grad_norm2 = float(sum(np.sum(gD[j] ** 2) + np.sum(gU[j] ** 2) for j in trained))

    updates = []
    for row, client in enumerate(clients):
        sub = extract_submodel(model, m.selection(row))
        rng = derive_rng(seed, "train", t, client.id)
        try:
            updates.append(local_train(sub, client.train, cfg, rng, client.id, t))
        except DivergenceError:
            raise
        except Exception as exc:
            raise RuntimeError(f"round {t}, client {client.id}: {exc}") from exc

    new_model = aggregate_lora(model, updates, m, cfg.missing)
    new_model.head = aggregate_head(model, updates)
    accs, losses = [], []
    for test in scenario.test_sets:
        a, l = evaluate(new_model, test)
        accs.append(a)
        losses.append(l)
    report = RoundReport(
        t, participants, m, accs, losses, m.column_sums(), alpha,
        float(np.mean([u.train_loss for u in updates])), objective, grad_norm2, r_norm2,
        time.perf_counter() - t0,
    )
    return ServerState(new_model, t + 1), report


@dataclass
class FederationRun:
    state: ServerState
    history: list[RoundReport] = field(default_factory=list)

    @property
    def final_accuracy(self) -> list[float]:
        return self.history[-1].accuracy

    @property
    def final_average(self) -> float:
        return self.history[-1].average_accuracy


def run_federation(scenario, T: int, cfg: RoundConfig, model: StackModel, seed: int,
                   state: ServerState | None = None, on_round=None) -> FederationRun:
    """Run ``T`` rounds (continuing from ``state`` if given)."""
    if T < 1:
        raise ValueError("need at least one round")
    state = state or ServerState(model.copy(), 0)
    run = FederationRun(state)
    for _ in range(T):
        state, report = run_round(state, scenario, cfg, seed)
        run.state = state
        run.history.append(report)
        if on_round is not None:
            on_round(state, report)
    return run


def subset_convergence(model: StackModel, train, test_sets, subset_size: int, epochs: int,
                       cfg: RoundConfig, seed: int) -> list[float]:
    """Single-machine training on a fresh random ``subset_size``-layer submodel each epoch.

    After each epoch the subset's adapters and the head are written back into
    the full model, which is then evaluated. Returns average test accuracy per epoch.
    """
    if not 1 <= subset_size <= model.L:
        raise ValueError(f"subset size must lie in [1, {model.L}]")
    model = model.copy()
    curve = []
    for e in range(epochs):
        rng = derive_rng(seed, "subset", e)
        layers = tuple(sorted(int(j) for j in rng.choice(model.L, subset_size, replace=False)))
        sub = extract_submodel(model, layers)
        upd = local_train(sub, train, replace(cfg, local_epochs=1), derive_rng(seed, "subset-train", e), 0, e)
        for pos, j in enumerate(layers):
            model.down[j] = upd.down[pos]
            model.up[j] = upd.up[pos]
        model.head = DenseParams(upd.head.weight.copy(), upd.head.bias.copy())
        curve.append(float(np.mean([evaluate(model, ts)[0] for ts in test_sets])))
    return curve
