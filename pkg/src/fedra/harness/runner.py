"""Build, run and record one (config, seed) experiment cell."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .. import kernels
from ..allocation import write_allocation_csv
from ..data import SyntheticConfig, build_federation_scenario
from ..federation import (
    FederationRun,
    ServerState,
    derive_rng,
    global_gradient,
    run_federation,
)
from ..model import build_stack_model, dumps_model, loads_model
from ..theory import (
    BoundInputs,
    estimate_gradient_variance,
    estimate_heterogeneity,
    estimate_smoothness,
    evaluate_bound,
)
from .config import ExperimentConfig

OUT_ENV = "FEDRA_OUT"


def default_out_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


def run_id(cfg: ExperimentConfig, seed: int) -> str:
    payload = dict(cfg.to_dict(), seeds=[seed])
    return hashlib.sha1(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:12]


def build_experiment(cfg: ExperimentConfig, seed: int):
    """Domains, scenario and initial model for one seed; every method shares them."""
    syn = SyntheticConfig(
        num_domains=cfg.num_domains, num_classes=cfg.num_classes, d_in=cfg.d_in,
        n_per_domain=cfg.n_per_domain, class_spread=cfg.class_spread,
        domain_rotation=cfg.domain_rotation, domain_shift=cfg.domain_shift,
        domain_noise=cfg.domain_noise,
    )
    domains = syn.make(derive_rng(seed, "data"))
    scenario = build_federation_scenario(cfg.mode, cfg.capacities, domains,
                                         derive_rng(seed, "partition"), cfg.alpha, cfg.parts)
    model = build_stack_model(cfg.L, cfg.d_in, cfg.d, cfg.num_classes, cfg.rank,
                              seed=int(derive_rng(seed, "model").integers(2**32)),
                              activation=cfg.activation, scale=cfg.lora_scale,
                              base_gain=cfg.base_gain)
    return domains, scenario, model


# -- checkpoints ---------------------------------------------------------------

def dumps_state(state: ServerState) -> str:
    return f"fedra-server v1\nround {state.round}\n" + dumps_model(state.model)


def loads_state(text: str) -> ServerState:
    head, rnd, body = text.split("\n", 2)
    if head != "fedra-server v1" or not rnd.startswith("round "):
        raise ValueError("not a fedra server checkpoint")
    return ServerState(loads_model(body), int(rnd.split()[1]))


# -- empirical constants -------------------------------------------------------

def _set_adapters(model, vec):
    per = model.down[0].size + model.up[0].size
    nd = model.down[0].size
    for j in range(model.L):
        chunk = vec[j * per:(j + 1) * per]
        model.down[j] = chunk[:nd].reshape(model.down[j].shape)
        model.up[j] = chunk[nd:].reshape(model.up[j].shape)


def _flat_grad(gD, gU):
    return np.concatenate([np.concatenate([gD[j].ravel(), gU[j].ravel()]) for j in range(gD.shape[0])])


def estimate_constants(model, scenario, batch_size: int, seed: int, probes: int = 8) -> dict:
    """Empirical proxies for smoothness, gradient noise and heterogeneity at ``model``."""
    rng = derive_rng(seed, "proxies")
    work = model.copy()
    _, gD, gU = global_gradient(work, scenario.clients)
    full = _flat_grad(gD, gU)

    client_grads, noise = [], []
    for c in scenario.clients:
        _, cD, cU = global_gradient(work, [c])
        g_c = _flat_grad(cD, cU)
        client_grads.append(g_c)
        batches = []
        for _ in range(probes):
            idx = rng.choice(len(c.train), size=min(batch_size, len(c.train)), replace=False)
            _, bD, bU = global_gradient(work, [_Slice(c, idx)])
            batches.append(_flat_grad(bD, bU))
        noise.append(estimate_gradient_variance(batches, g_c))

    def grad_fn(vec):
        _set_adapters(work, vec)
        _, dD, dU = global_gradient(work, scenario.clients)
        return _flat_grad(dD, dU)

    r = model.adapter_vector()
    h = estimate_smoothness(grad_fn, [r], rng, pairs=probes, radius=1e-3)
    return {
        "h": h,
        "sigma2": float(np.mean(noise)),
        "delta2": estimate_heterogeneity(client_grads, full),
        "label": "empirical proxy",
    }


class _Slice:
    def __init__(self, client, idx):
        self.train = client.train.subset(idx)


# -- running and emitting ----------------------------------------------------

@dataclass
class CellResult:
    cfg: ExperimentConfig
    seed: int
    run: FederationRun
    manifest: dict
    out_dir: Path | None


def _fmt(x) -> str:
    return repr(float(x))


def _json_safe(obj):
    """Replace non-finite floats by None so the output is strict JSON."""
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(_json_safe(obj), indent=2, sort_keys=True, allow_nan=False) + "\n",
                    encoding="utf-8")


def emit_metrics(cfg: ExperimentConfig, run: FederationRun, manifest: dict, out_dir: Path) -> dict[str, Path]:
    """Write per-round metrics, diagnostics, allocations, plot data, summary and manifest.

    Everything except ``manifest.json`` (timestamps, wall time) is a pure
    function of the config and seed.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {k: out_dir / v for k, v in {
        "metrics": "metrics.csv", "diagnostics": "diagnostics.csv", "allocations": "allocations.csv",
        "plot": "plot.csv", "summary": "summary.json", "manifest": "manifest.json"}.items()}
    history = run.history
    with open(paths["metrics"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "domain", "accuracy", "loss", "gamma_min", "alpha_measured"])
        for rep in history:
            for dom, (acc, loss) in enumerate(zip(rep.accuracy, rep.loss)):
                w.writerow([rep.round, dom, _fmt(acc), _fmt(loss), rep.gamma_min, _fmt(rep.alpha_measured)])
    with open(paths["diagnostics"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "average_accuracy", "train_loss", "objective", "grad_norm2", "r_norm2",
                    "alpha_measured", "gamma_min"] + [f"gamma_{j}" for j in range(cfg.L)])
        for rep in history:
            w.writerow([rep.round, _fmt(rep.average_accuracy), _fmt(rep.train_loss), _fmt(rep.objective),
                        _fmt(rep.grad_norm2), _fmt(rep.r_norm2), _fmt(rep.alpha_measured),
                        rep.gamma_min] + [int(g) for g in rep.gamma])
    write_allocation_csv([r.allocation for r in history], paths["allocations"],
                         clients=[r.participants for r in history])
    with open(paths["plot"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "method", "average_accuracy"])
        for rep in history:
            w.writerow([rep.round, cfg.method, _fmt(rep.average_accuracy)])
    _dump_json(manifest["summary"], paths["summary"])
    _dump_json(dict(manifest, paths={k: str(p.name) for k, p in paths.items()}), paths["manifest"])
    return paths


def bound_inputs_from_run(cfg: ExperimentConfig, run: FederationRun, scenario, constants: dict) -> dict:
    hist = run.history
    steps = max(cfg.local_epochs * -(-c.n_samples // cfg.batch_size) for c in scenario.clients)
    gamma = min((r.gamma_min for r in hist if r.gamma_min > 0), default=1)
    return {
        "h": constants["h"], "sigma2": constants["sigma2"], "delta2": constants["delta2"],
        "alpha": max(r.alpha_measured for r in hist),
        "N": min(cfg.clients_per_round, scenario.num_clients), "J": steps, "T": len(hist),
        "eta": cfg.lr, "gamma_star": max(gamma, 1),
        "F1": hist[0].objective, "sum_r_norm2": float(sum(r.r_norm2 for r in hist)),
    }


def run_cell(cfg: ExperimentConfig, seed: int, out_root: Path | None = None,
             resume: Path | None = None, constants: bool = True) -> CellResult:
    """Run one (config, seed); write outputs under ``out_root`` when given."""
    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    rid = run_id(cfg, seed)
    _, scenario, model = build_experiment(cfg, seed)
    state = None
    if resume is not None:
        state = loads_state(Path(resume).read_text(encoding="utf-8"))
    start_round = state.round if state else 0
    remaining = cfg.rounds - start_round
    if remaining < 1:
        raise ValueError(f"checkpoint is at round {start_round}; nothing left of {cfg.rounds} rounds")
    out_dir = Path(out_root) / f"{cfg.method}-s{seed}-{rid}" if out_root is not None else None

    on_round = None
    if out_dir is not None and cfg.checkpoint_every > 0:
        ckpt_dir = out_dir / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)

        def on_round(st, rep):
            if st.round % cfg.checkpoint_every == 0:
                (ckpt_dir / f"round_{st.round:04d}.ckpt").write_text(dumps_state(st), encoding="utf-8")

    run = run_federation(scenario, remaining, cfg.round_config(), model, seed, state=state, on_round=on_round)
    final = run.history[-1]
    summary = {
        "run_id": rid, "method": cfg.method, "seed": seed, "preset": cfg.preset,
        "rounds": cfg.rounds, "start_round": start_round,
        "final_accuracy": final.accuracy, "final_loss": final.loss,
        "average_accuracy": float(np.mean(final.accuracy)),
        "gamma_star": min((r.gamma_min for r in run.history if r.gamma_min > 0), default=0),
        "untrained_layers": [j for j in range(cfg.L)
                             if all(r.gamma[j] == 0 for r in run.history)],
    }
    if constants and cfg.log_gradnorm:
        consts = estimate_constants(run.state.model, scenario, cfg.batch_size, seed)
        inputs = bound_inputs_from_run(cfg, run, scenario, consts)
        summary["bound_inputs"] = inputs
        summary["bound_inputs_label"] = {"h": consts["label"], "sigma2": consts["label"], "delta2": consts["label"]}
        summary["bound"] = evaluate_bound(BoundInputs(**inputs)).to_dict()
    manifest = {
        "run_id": rid, "seed": seed, "config": cfg.to_dict(), "backend": kernels.BACKEND,
        "summary": summary, "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "wall_time_s": time.perf_counter() - t0,
        "resumed_from": str(resume) if resume else None,
    }
    if out_dir is not None:
        emit_metrics(cfg, run, manifest, out_dir)
    return CellResult(cfg, seed, run, manifest, out_dir)
