"""Registry of module invariants, run by ``fedra check``.

Every check takes ``full`` (use the stated sample sizes instead of the quick
ones) and returns a short detail string, raising ``AssertionError`` on failure.
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy import stats

from ..allocation import (
    Strategy,
    generate_allocation,
    repair_empty_columns,
)
from ..data import (
    LabeledDataset,
    build_federation_scenario,
    dirichlet_partition,
    label_distribution,
    make_synthetic_domains,
    total_variation,
)
from ..federation import (
    ClientUpdate,
    RoundConfig,
    aggregate_lora,
    layer_weights,
    local_train,
    run_federation,
    subset_convergence,
)
from ..model import build_stack_model, extract_submodel, forward, masked_full_model
from ..nn_core import DenseParams, finite_diff_gradcheck, softmax_cross_entropy
from ..theory import (
    BoundInputs,
    gamma_star,
    lr_feasible_interval,
    mask_deviation_alpha,
    convergence_bound,
)
from .config import PRESETS, ExperimentConfig, apply_preset
from .oracles import aggregate_oracle

# invariants each module must have registered; the suite refuses to run otherwise
REQUIRED: dict[str, tuple[str, ...]] = {
    "nn_core": ("gradient_fidelity", "zero_adapter_neutrality", "loss_stability", "sgd_determinism"),
    "model": ("mask_equivalence", "copy_isolation", "order_preservation", "full_selection_identity"),
    "allocation": ("row_sums", "uniformity", "coverage", "repair_conservative"),
    "federation": ("frozen_base", "weights_sum_to_one", "oracle_equivalence", "fedavg_reduction",
                   "carry_forward", "subset_convergence"),
    "data": ("partition_complete_disjoint", "stratified_split", "determinism", "monotone_skew"),
    "theory": ("bound_monotone", "interval_consistency", "empirical_link", "alpha_tightness"),
    "harness": ("reproducibility", "preset_fidelity", "suite_manifest"),
}


@dataclass(frozen=True)
class Check:
    module: str
    name: str
    fn: object

    @property
    def key(self) -> str:
        return f"{self.module}.{self.name}"


REGISTRY: dict[str, Check] = {}


def invariant(module: str, name: str):
    def deco(fn):
        c = Check(module, name, fn)
        REGISTRY[c.key] = c
        return fn
    return deco


def missing_invariants(registry=None) -> list[str]:
    registry = REGISTRY if registry is None else registry
    return [f"{m}.{n}" for m, names in REQUIRED.items() for n in names if f"{m}.{n}" not in registry]


@dataclass
class CheckResult:
    key: str
    passed: bool
    detail: str
    seconds: float


def run_checks(full: bool = False, only=None, registry=None) -> list[CheckResult]:
    registry = REGISTRY if registry is None else registry
    results = []
    for key, c in registry.items():
        if only and not any(key.startswith(o) for o in only):
            continue
        t0 = time.perf_counter()
        try:
            detail, ok = c.fn(full) or "", True
        except AssertionError as exc:
            detail, ok = str(exc) or "assertion failed", False
        except Exception as exc:  # a crash is a failure, reported with its type
            detail, ok = f"{type(exc).__name__}: {exc}", False
        results.append(CheckResult(key, ok, detail, time.perf_counter() - t0))
    return results


def _n(full, quick, stated):
    return stated if full else quick


def _tiny_model(rng, L=2, d=None, rank=None, classes=None):
    d = d or int(rng.integers(2, 9))
    rank = rank or int(rng.integers(1, d + 1))
    classes = classes or int(rng.integers(2, 6))
    m = build_stack_model(L, int(rng.integers(2, 9)), d, classes, rank, seed=int(rng.integers(2**31)))
    # move away from the zero-init point so every gradient path is exercised
    m.up[...] = rng.normal(0, 0.3, m.up.shape)
    m.head.weight[...] = rng.normal(0, 0.3, m.head.weight.shape)
    m.base_bias[...] = rng.normal(0, 0.1, m.base_bias.shape)
    return m


# -- nn_core -----------------------------------------------------------------

@invariant("nn_core", "gradient_fidelity")
def _grad_fidelity(full):
    worst = 0.0
    for seed in range(_n(full, 20, 100)):
        rng = np.random.default_rng(seed)
        m = _tiny_model(rng, L=2)
        x = rng.normal(size=(4, m.input_dim))
        y = rng.integers(0, m.num_classes, size=4)
        worst = max(worst, finite_diff_gradcheck(m, x, y, 1e-5))
    assert worst <= 1e-4, f"max relative error {worst:.3g} > 1e-4"
    return f"max rel err {worst:.2e}"


@invariant("nn_core", "zero_adapter_neutrality")
def _zero_adapter(full):
    for seed in range(_n(full, 10, 50)):
        rng = np.random.default_rng(seed)
        m = build_stack_model(3, 6, 8, 4, 2, seed=seed)
        m.head.weight[...] = rng.normal(size=m.head.weight.shape)
        x = rng.normal(size=(5, 6))
        plain = m.copy()
        plain.down[...] = 0.0
        assert np.array_equal(forward(m, x), forward(plain, x)), f"seed {seed}: up=0 changed the output"
    return "bitwise"


@invariant("nn_core", "loss_stability")
def _loss_stability(full):
    rng = np.random.default_rng(0)
    for _ in range(_n(full, 200, 1000)):
        logits = rng.uniform(-1e6, 1e6, size=int(rng.integers(2, 12)))
        loss, grad = softmax_cross_entropy(logits, int(rng.integers(logits.size)))
        assert math.isfinite(loss) and np.all(np.isfinite(grad)), f"non-finite loss for {logits}"
    return "finite up to |logit| = 1e6"


@invariant("nn_core", "sgd_determinism")
def _sgd_determinism(full):
    m = build_stack_model(3, 6, 8, 4, 2, seed=3)
    rng = np.random.default_rng(1)
    data = LabeledDataset(rng.normal(size=(64, 6)), rng.integers(0, 4, 64), 0, np.arange(64))
    a = local_train(extract_submodel(m, (0, 2)), data, RoundConfig(lr=0.1), np.random.default_rng(7))
    b = local_train(extract_submodel(m, (0, 2)), data, RoundConfig(lr=0.1), np.random.default_rng(7))
    assert np.array_equal(a.down, b.down) and np.array_equal(a.up, b.up)
    assert np.array_equal(a.head.weight, b.head.weight)
    return "identical trajectories"


# -- model -------------------------------------------------------------------

def _random_selection(rng, L):
    k = int(rng.integers(1, L + 1))
    return tuple(sorted(rng.choice(L, k, replace=False).tolist()))


@invariant("model", "mask_equivalence")
def _mask_equivalence(full):
    worst = 0.0
    for seed in range(_n(full, 200, 1000)):
        rng = np.random.default_rng(seed)
        L = int(rng.integers(1, 7))
        m = _tiny_model(rng, L=L)
        S = _random_selection(rng, L)
        x = rng.normal(size=(int(rng.integers(1, 5)), m.input_dim))
        worst = max(worst, float(np.max(np.abs(forward(extract_submodel(m, S), x)
                                               - forward(masked_full_model(m, S), x)))))
    assert worst <= 1e-12, f"max deviation {worst:.3g}"
    return f"max abs dev {worst:.1e}"


@invariant("model", "copy_isolation")
def _copy_isolation(full):
    rng = np.random.default_rng(0)
    m = _tiny_model(rng, L=4)
    before = m.digest()
    data = LabeledDataset(rng.normal(size=(40, m.input_dim)), rng.integers(0, m.num_classes, 40), 0, np.arange(40))
    local_train(extract_submodel(m, (1, 3)), data, RoundConfig(lr=0.5), rng)
    assert m.digest() == before, "training a submodel modified the source model"
    return "checksum unchanged"


@invariant("model", "order_preservation")
def _order_preservation(full):
    for seed in range(_n(full, 50, 200)):
        rng = np.random.default_rng(seed)
        m = _tiny_model(rng, L=5)
        S = list(_random_selection(rng, 5))
        x = rng.normal(size=(3, m.input_dim))
        ref = forward(extract_submodel(m, S), x)
        perm = [S[i] for i in rng.permutation(len(S))]
        assert np.array_equal(ref, forward(extract_submodel(m, perm), x)), f"order {perm} changed output"
    return "permutation invariant"


@invariant("model", "full_selection_identity")
def _full_selection(full):
    for seed in range(_n(full, 20, 100)):
        rng = np.random.default_rng(seed)
        m = _tiny_model(rng, L=int(rng.integers(1, 6)))
        x = rng.normal(size=(3, m.input_dim))
        assert np.array_equal(forward(m, x), forward(extract_submodel(m, range(m.L)), x))
    return "identical logits"


# -- allocation --------------------------------------------------------------

@invariant("allocation", "row_sums")
def _row_sums(full):
    rng = np.random.default_rng(0)
    caps = (8, 6, 5, 4, 3, 2)
    draws = _n(full, 2000, 10000)
    for s in Strategy:
        for _ in range(draws):
            m = generate_allocation(s, caps, 8, rng)
            want = {Strategy.ALL_LARGE: [8] * 6, Strategy.ALL_SMALL: [2] * 6}.get(s, list(caps))
            assert m.entries.sum(axis=1).tolist() == want, f"{s.value}: row sums {m.entries.sum(axis=1)}"
    return f"{draws} draws per strategy"


@invariant("allocation", "uniformity")
def _uniformity(full):
    rng = np.random.default_rng(0)
    draws = _n(full, 20000, 100000)
    worst = 1.0
    for L, cap in ((4, 2), (5, 2), (5, 3), (5, 1)):
        subsets = {c: k for k, c in enumerate(combinations(range(L), cap))}
        counts = np.zeros(len(subsets))
        for _ in range(draws // 100):
            # 100 rows per call keeps the check fast; rows are independent
            m = generate_allocation(Strategy.RANDOM_UNIFORM, [cap] * 100, L, rng)
            for row in range(100):
                counts[subsets[m.selection(row)]] += 1
        p = stats.chisquare(counts).pvalue
        worst = min(worst, p)
        assert p > 0.001, f"L={L}, L_i={cap}: chi-square p={p:.2e}"
        assert np.all(counts > 0), f"L={L}, L_i={cap}: some subset never drawn"
    return f"min p-value {worst:.3f}"


@invariant("allocation", "coverage")
def _coverage(full):
    rng = np.random.default_rng(0)
    for _ in range(_n(full, 2000, 10000)):
        L = int(rng.integers(1, 10))
        n = int(rng.integers(1, 7))
        caps = rng.integers(1, L + 1, size=n)
        if caps.sum() < L:
            continue
        m = generate_allocation(Strategy.RANDOM_CONSTRAINED, caps, L, rng)
        assert m.column_sums().min() >= 1, f"uncovered column in {m.entries}"
    return "min column sum >= 1"


@invariant("allocation", "repair_conservative")
def _repair(full):
    rng = np.random.default_rng(0)
    tried = 0
    for _ in range(_n(full, 2000, 10000)):
        L = int(rng.integers(2, 10))
        caps = rng.integers(1, L + 1, size=int(rng.integers(1, 6)))
        if caps.sum() < L:
            continue
        m = generate_allocation(Strategy.RANDOM_UNIFORM, caps, L, rng)
        empty = int(np.sum(m.column_sums() == 0))
        fixed = repair_empty_columns(m)
        diff = fixed.entries.astype(int) - m.entries.astype(int)
        assert np.array_equal(fixed.entries.sum(axis=1), m.entries.sum(axis=1)), "row sums changed"
        assert fixed.column_sums().min() >= 1, "column still empty"
        assert int(np.abs(diff).sum()) == 2 * empty, f"{int(np.abs(diff).sum())} changes for {empty} empty columns"
        assert np.all(diff.sum(axis=1) == 0)
        tried += empty > 0
    return f"{tried} repairs"


# -- federation ---------------------------------------------------------------

def _small_scenario(seed=0, caps=(4, 3, 2), L=4):
    rng = np.random.default_rng(seed)
    doms = make_synthetic_domains(len(caps), 4, 6, 60, rng)
    sc = build_federation_scenario("feature", caps, doms, rng)
    return sc, build_stack_model(L, 6, 8, 4, 2, seed=seed)


def _random_updates(rng, model, m):
    out = []
    for i in range(m.num_clients):
        sel = m.selection(i)
        out.append(ClientUpdate(i, sel, rng.normal(size=(len(sel),) + model.down.shape[1:]),
                                rng.normal(size=(len(sel),) + model.up.shape[1:]),
                                DenseParams(rng.normal(size=model.head.weight.shape),
                                            rng.normal(size=model.head.bias.shape)),
                                int(rng.integers(1, 1000))))
    return out


@invariant("federation", "frozen_base")
def _frozen_base(full):
    sc, model = _small_scenario()
    ref = model.frozen_digest()
    seen = []
    run_federation(sc, _n(full, 5, 20), RoundConfig(lr=0.05), model, 0,
                   on_round=lambda st, rep: seen.append(st.model.frozen_digest()))
    assert all(d == ref for d in seen), "frozen parameters changed during training"
    return f"{len(seen)} rounds"


@invariant("federation", "weights_sum_to_one")
def _weights(full):
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(_n(full, 200, 1000)):
        L = int(rng.integers(1, 6))
        caps = rng.integers(1, L + 1, size=int(rng.integers(1, 5)))
        model = build_stack_model(L, 2, 2, 2, 1)
        m = generate_allocation(Strategy.RANDOM_UNIFORM, caps, L, rng)
        w = layer_weights(_random_updates(rng, model, m), m)
        cols = m.column_sums() > 0
        worst = max(worst, float(np.max(np.abs(w.sum(axis=0)[cols] - 1.0))))
        assert np.all(w[:, ~cols] == 0)
    assert worst <= 1e-15, f"weights off by {worst:.2e}"
    return f"max |sum - 1| {worst:.1e}"


@invariant("federation", "oracle_equivalence")
def _oracle(full):
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(_n(full, 300, 1000)):
        L = int(rng.integers(1, 5))
        n = int(rng.integers(1, 5))
        caps = rng.integers(1, L + 1, size=n)
        model = build_stack_model(L, 1, 1, 2, 1, seed=int(rng.integers(1000)))
        model.up[...] = rng.normal(size=model.up.shape)
        m = generate_allocation(Strategy.RANDOM_UNIFORM, caps, L, rng)
        ups = _random_updates(rng, model, m)
        got = aggregate_lora(model, ups, m)
        ref = aggregate_oracle(
            model.down.tolist(), model.up.tolist(),
            [(u.n_samples, {j: (u.adapter(j)[0].tolist(), u.adapter(j)[1].tolist()) for j in u.selected})
             for u in ups],
            m.entries.tolist())
        # normwise: elementwise relative error is ill-conditioned where a weighted mean cancels
        flat = np.concatenate([got.down.ravel(), got.up.ravel()])
        want = np.concatenate([np.ravel(ref[0]), np.ravel(ref[1])])
        worst = max(worst, float(np.linalg.norm(flat - want) / np.linalg.norm(want)))
    assert worst <= 1e-12, f"relative error {worst:.2e}"
    return f"max rel err {worst:.1e}"


@invariant("federation", "fedavg_reduction")
def _fedavg(full):
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(_n(full, 50, 100)):
        L, n = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        model = build_stack_model(L, 3, 4, 3, 2)
        m = generate_allocation(Strategy.ALL_LARGE, [1] * n, L, rng)
        ups = _random_updates(rng, model, m)
        got = aggregate_lora(model, ups, m)
        w = np.array([u.n_samples for u in ups], dtype=float)
        for name in ("down", "up"):
            ref = np.tensordot(w / w.sum(), np.stack([getattr(u, name) for u in ups]), axes=1)
            worst = max(worst, float(np.linalg.norm(getattr(got, name) - ref) / np.linalg.norm(ref)))
    assert worst <= 1e-12, f"relative error {worst:.2e}"
    return f"max rel err {worst:.1e}"


@invariant("federation", "carry_forward")
def _carry(full):
    sc, model = _small_scenario(caps=(3, 2, 2), L=5)
    frozen = [3, 4]
    ref = model.down[frozen].copy(), model.up[frozen].copy()
    bad = []

    def watch(st, rep):
        if not (np.array_equal(st.model.down[frozen], ref[0]) and np.array_equal(st.model.up[frozen], ref[1])):
            bad.append(st.round)

    run_federation(sc, _n(full, 20, 100), RoundConfig(strategy="prefix", lr=0.05), model, 0, on_round=watch)
    assert not bad, f"never-selected layers changed at rounds {bad[:5]}"
    return "bitwise constant"


def curve_converged(curve, window: int = 5, tol: float = 0.05) -> bool:
    """Settled: the ``window``-epoch moving average ends above where it started and within ``tol`` of its best.

    Each epoch trains a freshly drawn subset, so single-epoch accuracies jitter;
    the moving average is what is expected to settle.
    """
    c = np.asarray(curve, dtype=float)
    w = min(window, len(c))
    smooth = np.convolve(c, np.ones(w) / w, mode="valid")
    return bool(smooth[-1] > smooth[0] and smooth[-1] >= smooth.max() - tol)


@invariant("federation", "subset_convergence")
def _subset(full):
    cfg = ExperimentConfig()
    from .runner import build_experiment
    finals = {k: [] for k in (2, 4, cfg.L)}
    epochs = 20  # the moving-average test needs the full curve in both modes
    conv = []
    for seed in range(3):
        doms, _, model = build_experiment(cfg, seed)
        pool = LabeledDataset.concat(d.train for d in doms)
        for k in finals:
            curve = subset_convergence(model, pool, [d.test for d in doms], k, epochs, cfg.round_config(), seed)
            finals[k].append(curve[-1])
            conv.append(curve_converged(curve))
    med = [float(np.median(v)) for v in finals.values()]
    assert all(conv), "a subset curve did not settle"
    assert all(a <= b for a, b in zip(med, med[1:])), f"medians {med} not monotone in subset size"
    return "medians " + ", ".join(f"{k}:{v:.3f}" for k, v in zip(finals, med))


# -- data --------------------------------------------------------------------

@invariant("data", "partition_complete_disjoint")
def _partition(full):
    rng = np.random.default_rng(0)
    for _ in range(_n(full, 200, 1000)):
        n = int(rng.integers(5, 80))
        ds = LabeledDataset(rng.normal(size=(n, 2)), rng.integers(0, 4, n), 0, np.arange(n))
        parts = int(rng.integers(1, min(n, 8) + 1))
        shards = dirichlet_partition(ds, float(rng.choice([0.05, 0.5, 5.0])), parts, rng)
        ids = np.concatenate([s.ids for s in shards])
        assert len(shards) == parts and all(len(s) > 0 for s in shards)
        assert np.array_equal(np.sort(ids), np.arange(n)), "partition lost or duplicated samples"
    return "complete and disjoint"


@invariant("data", "stratified_split")
def _stratified(full):
    rng = np.random.default_rng(0)
    for _ in range(_n(full, 10, 50)):
        classes = int(rng.integers(2, 8))
        n = int(rng.integers(classes * 5, 300))
        for dom in make_synthetic_domains(2, classes, 3, n, rng):
            counts = np.bincount(dom.test.labels, minlength=classes)
            assert np.ptp(counts) <= 1, f"test class counts {counts.tolist()}"
    return "within one sample per class"


@invariant("data", "determinism")
def _data_determinism(full):
    def build():
        rng = np.random.default_rng(42)
        doms = make_synthetic_domains(3, 4, 5, 50, rng)
        return build_federation_scenario("feature_label", [2] * 6, doms, rng, alpha=0.3, parts=2)
    a, b = build(), build()
    for ca, cb in zip(a.clients, b.clients):
        assert ca.train.features.tobytes() == cb.train.features.tobytes()
        assert ca.train.labels.tobytes() == cb.train.labels.tobytes()
    return "byte-identical"


@invariant("data", "monotone_skew")
def _skew(full):
    rng = np.random.default_rng(0)
    ds = make_synthetic_domains(1, 10, 4, 2000, rng)[0].train
    tv = []
    for alpha in (0.1, 0.5, 100.0):
        vals = []
        for rep in range(_n(full, 5, 20)):
            shards = dirichlet_partition(ds, alpha, 5, np.random.default_rng(rep))
            dist = [label_distribution(s, 10) for s in shards]
            vals.append(np.mean([total_variation(p, q) for p, q in combinations(dist, 2)]))
        tv.append(float(np.mean(vals)))
    assert tv[0] > tv[1] > tv[2], f"mean pairwise TV {tv} not decreasing in alpha"
    return "TV " + " > ".join(f"{v:.3f}" for v in tv)


# -- theory ------------------------------------------------------------------

def _feasible_inputs(**kw):
    # feasibility needs gamma* > 2N/3 roughly, so the defaults use a well-covered round
    base = dict(h=1.0, sigma2=0.5, delta2=0.3, alpha=0.1, N=8, J=20, T=50, eta=0.0, gamma_star=8,
                F1=2.0, sum_r_norm2=10.0)
    base.update(kw)
    lo, hi = lr_feasible_interval(base["N"], base["J"], base["h"], base["gamma_star"])
    if base["eta"] == 0.0:
        base["eta"] = 0.5 * (lo + hi)
    return BoundInputs(**base)


@invariant("theory", "bound_monotone")
def _monotone(full):
    for J in (20, 40, 80):
        for gs in (6, 7, 8):
            b = [convergence_bound(_feasible_inputs(J=J, gamma_star=gs, T=T)).bound for T in (10, 20, 50, 100, 1000)]
            assert all(x > y for x, y in zip(b, b[1:])), f"not decreasing in T: {b}"
        # fixed eta feasible for every gamma on the grid
        lo, hi = lr_feasible_interval(8, J, 1.0, 6)
        eta = 0.5 * (lo + hi)
        b = [convergence_bound(_feasible_inputs(J=J, gamma_star=g, eta=eta)).bound for g in (6, 7, 8)]
        assert all(x > y for x, y in zip(b, b[1:])), f"not decreasing in gamma*: {b}"
    return "strictly decreasing in T and gamma*"


@invariant("theory", "interval_consistency")
def _interval(full):
    lo, hi = lr_feasible_interval(8, 20, 1.0, 8)
    assert lo < hi
    for eta in np.linspace(0.5 * lo, 1.5 * hi, _n(full, 50, 200)):
        inside = lo < eta <= hi
        try:
            convergence_bound(_feasible_inputs(eta=float(eta)))
            accepted = True
        except ValueError:
            accepted = False
        assert accepted == inside, f"eta={eta}: accepted={accepted}, interval ({lo}, {hi}]"
    return f"interval ({lo:.4g}, {hi:.4g}]"


@invariant("theory", "empirical_link")
def _link(full):
    rng = np.random.default_rng(0)
    for _ in range(_n(full, 20, 100)):
        L = int(rng.integers(2, 9))
        caps = rng.integers(1, L + 1, size=int(rng.integers(2, 7)))
        if caps.sum() < L:
            continue
        con = [generate_allocation(Strategy.RANDOM_CONSTRAINED, caps, L, rng) for _ in range(30)]
        pre = [generate_allocation(Strategy.DEPTH_PREFIX, caps, L, rng) for _ in range(30)]
        assert all(m.column_sums().min() >= 1 for m in con)
        # coverage counted over every layer of the global model
        every = [range(L)] * 30
        assert gamma_star(con, every) >= gamma_star(pre, every), f"caps {caps.tolist()}"
    return "constrained gamma* >= prefix gamma*"


@invariant("theory", "alpha_tightness")
def _alpha(full):
    rng = np.random.default_rng(0)
    for _ in range(_n(full, 200, 1000)):
        r = rng.normal(size=int(rng.integers(1, 50)))
        mask = rng.integers(0, 2, r.size).astype(float)
        a = mask_deviation_alpha(r, mask)
        lhs = np.linalg.norm(r - r * mask)
        assert abs(lhs - a * (r @ r)) <= 1e-12 * max(1.0, lhs)
    return "exact"


# -- harness -----------------------------------------------------------------

@invariant("harness", "reproducibility")
def _repro(full):
    from .runner import run_cell
    cfg = apply_preset(ExperimentConfig(), "table1-desk").with_overrides(rounds=_n(full, 2, 5), n_per_domain=150)
    with tempfile.TemporaryDirectory() as tmp:
        a = run_cell(cfg, 3, Path(tmp) / "a").out_dir
        b = run_cell(cfg, 3, Path(tmp) / "b").out_dir
        names = sorted(p.name for p in a.iterdir() if p.is_file() and p.name != "manifest.json")
        for name in names:
            assert (a / name).read_bytes() == (b / name).read_bytes(), f"{name} differs between runs"
    return f"{len(names)} files byte-identical"


@invariant("harness", "preset_fidelity")
def _presets(full):
    base = ExperimentConfig()
    t1 = apply_preset(base, "table1-desk")
    assert len(t1.capacities) == 6 and all(a > b for a, b in zip(t1.capacities, t1.capacities[1:]))
    t2 = apply_preset(base, "table2-desk")
    groups = [t2.capacities[i:i + 5] for i in range(0, 30, 5)]
    assert len(t2.capacities) == 30 and len(groups) == 6 and all(len(set(g)) == 1 for g in groups)
    assert len({g[0] for g in groups}) == 6
    t3 = apply_preset(base, "table3-desk")
    assert max(t3.capacities) < t3.L
    assert apply_preset(base, "table4-desk").round_config().dynamic
    return ", ".join(PRESETS)


@invariant("harness", "suite_manifest")
def _manifest(full):
    missing = missing_invariants()
    assert not missing, f"unregistered invariants: {', '.join(missing)}"
    return f"{len(REGISTRY)} checks registered"
