"""Command-line entry point: ``fedra {run,sweep,subset-convergence,bound,check,export}``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ..allocation import AllocationError, write_allocation_csv
from ..data import LabeledDataset, write_dataset_csv
from ..federation import DivergenceError, round_allocation, subset_convergence
from ..theory import BoundInputs, InfeasibleError, convergence_bound
from .checks import missing_invariants, run_checks
from .config import METHODS, PRESETS, ConfigError, load_config
from .runner import build_experiment, default_out_root, run_cell

DEFAULT_SWEEP = ("FedRA", "DepthPrefix", "AllLarge", "AllSmall")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON config file")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--method", choices=sorted(METHODS))
    p.add_argument("--seed", type=int, action="append", dest="seed",
                   help="seed to run (repeatable; default: the config's seeds)")
    p.add_argument("--rounds", type=int)
    p.add_argument("--lora-rank", type=int, dest="rank")
    p.add_argument("--missing", choices=("carry", "constrain"))
    p.add_argument("--lr", type=float)
    p.add_argument("--out", type=Path, help="output root (default: $FEDRA_OUT or ./runs)")


def _resolve(args):
    overrides = {k: getattr(args, k, None) for k in ("method", "rounds", "rank", "missing", "lr")}
    if getattr(args, "seed", None):
        overrides["seeds"] = tuple(args.seed)
    if getattr(args, "checkpoint_every", None) is not None:
        overrides["checkpoint_every"] = args.checkpoint_every
    return load_config(args.config, args.preset, **overrides)


def _out(args) -> Path:
    return args.out if args.out is not None else default_out_root()


def cmd_run(args) -> int:
    cfg = _resolve(args)
    if args.resume and len(cfg.seeds) != 1:
        raise ConfigError("--resume needs exactly one seed")
    for seed in cfg.seeds:
        res = run_cell(cfg, seed, _out(args), resume=args.resume, constants=not args.no_constants)
        s = res.manifest["summary"]
        accs = " ".join(f"{a:.4f}" for a in s["final_accuracy"])
        print(f"{cfg.method} seed={seed} average={s['average_accuracy']:.4f} domains=[{accs}] -> {res.out_dir}")
    return 0


def _cell(job):
    cfg, seed, out = job
    res = run_cell(cfg, seed, out, constants=False)
    return cfg.method, seed, res.manifest["summary"]["final_accuracy"]


def comparison_table(results, methods, seeds):
    """Rows ``method, d0, ..., Average`` as mean and std over seeds."""
    rows = []
    for method in methods:
        accs = np.array([results[(method, s)] for s in seeds]) * 100.0
        table = np.column_stack([accs, accs.mean(axis=1)])
        mean = table.mean(axis=0)
        std = table.std(axis=0, ddof=1) if len(seeds) > 1 else np.zeros_like(mean)
        rows.append((method, mean, std))
    return rows


def write_table(rows, n_domains, path: Path) -> None:
    header = ["method"] + [f"domain_{k}" for k in range(n_domains)] + ["Average"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for method, mean, std in rows:
            w.writerow([method] + [f"{m:.2f} ± {s:.2f}" for m, s in zip(mean, std)])


def cmd_sweep(args) -> int:
    base = _resolve(args)
    methods = args.methods.split(",") if args.methods else list(DEFAULT_SWEEP)
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    out = _out(args)
    jobs = [(base.with_overrides(method=m), s, out) for m in methods for s in base.seeds]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            done = list(pool.map(_cell, jobs))
    else:
        done = [_cell(j) for j in jobs]
    results = {(m, s): acc for m, s, acc in done}
    name = f"sweep-{base.preset or 'custom'}"
    (out / name).mkdir(parents=True, exist_ok=True)
    for s in base.seeds:
        write_table(comparison_table(results, methods, [s]), base.num_domains, out / name / f"table_seed{s}.csv")
    rows = comparison_table(results, methods, list(base.seeds))
    write_table(rows, base.num_domains, out / name / "table.csv")
    width = max(len(m) for m in methods)
    print(f"{'method':<{width}}  " + "  ".join(f"{'d' + str(k):>13}" for k in range(base.num_domains))
          + f"  {'Average':>13}")
    for method, mean, std in rows:
        print(f"{method:<{width}}  " + "  ".join(f"{m:6.2f} ± {s:4.2f}" for m, s in zip(mean, std)))
    print(f"table written to {out / name / 'table.csv'}")
    return 0


def cmd_subset(args) -> int:
    cfg = _resolve(args)
    sizes = [int(k) for k in args.sizes.split(",")]
    out = _out(args) / "subset-convergence"
    out.mkdir(parents=True, exist_ok=True)
    finals = {k: [] for k in sizes}
    with open(out / "curves.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["subset_size", "seed", "epoch", "average_accuracy"])
        for seed in cfg.seeds:
            domains, _, model = build_experiment(cfg, seed)
            pool = LabeledDataset.concat(d.train for d in domains)
            for k in sizes:
                curve = subset_convergence(model, pool, [d.test for d in domains], k, args.epochs,
                                           cfg.round_config(), seed)
                finals[k].append(curve[-1])
                for e, a in enumerate(curve):
                    w.writerow([k, seed, e, repr(a)])
    for k in sizes:
        print(f"subset {k}: median final accuracy {np.median(finals[k]):.4f} over {len(finals[k])} seeds")
    print(f"curves written to {out / 'curves.csv'}")
    return 0


def cmd_bound(args) -> int:
    if args.from_summary:
        data = json.loads(Path(args.from_summary).read_text(encoding="utf-8"))
        if "bound_inputs" not in data:
            raise ConfigError(f"{args.from_summary} has no bound_inputs (run with gradient logging)")
        inputs = dict(data["bound_inputs"])
    else:
        inputs = {}
    for key in ("h", "sigma2", "delta2", "alpha", "N", "J", "T", "eta", "gamma_star", "F1", "sum_r_norm2"):
        if getattr(args, key) is not None:
            inputs[key] = getattr(args, key)
    missing = [k for k in BoundInputs.__dataclass_fields__ if k not in inputs]
    if missing:
        raise ConfigError(f"missing bound inputs: {', '.join(missing)}")
    try:
        report = convergence_bound(BoundInputs(**inputs))
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(dict(report.to_dict(), inputs=inputs), indent=2))
    return 0


def cmd_check(args) -> int:
    missing = missing_invariants()
    if missing:
        print("FAIL suite manifest: unregistered invariants " + ", ".join(missing))
        return 1
    failed = 0
    for r in run_checks(full=args.full, only=args.only):
        failed += not r.passed
        print(f"{'PASS' if r.passed else 'FAIL'} {r.key:<42} {r.seconds:6.1f}s  {r.detail}", flush=True)
    print(f"{'all checks passed' if not failed else f'{failed} check(s) failed'}")
    return 1 if failed else 0


def cmd_export(args) -> int:
    cfg = _resolve(args)
    out = _out(args) / "export"
    out.mkdir(parents=True, exist_ok=True)
    for seed in cfg.seeds:
        domains, scenario, _ = build_experiment(cfg, seed)
        if args.what in ("dataset", "all"):
            path = out / f"dataset-s{seed}.csv"
            write_dataset_csv(domains, path)
            print(f"dataset -> {path}")
        if args.what in ("allocations", "all"):
            rc = cfg.round_config()
            rounds = [round_allocation(t, scenario.capacities, cfg.L, rc, seed) for t in range(cfg.rounds)]
            path = out / f"allocations-{cfg.method}-s{seed}.csv"
            write_allocation_csv([m for _, m in rounds], path, clients=[p for p, _ in rounds])
            print(f"allocations -> {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedra", description="Random layer allocation for federated adapter tuning.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one config for each seed")
    _common(p)
    p.add_argument("--resume", type=Path, help="server checkpoint to continue from")
    p.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    p.add_argument("--no-constants", action="store_true", help="skip the empirical bound constants")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("sweep", help="methods x seeds with a comparison table")
    _common(p)
    p.add_argument("--methods", help=f"comma-separated (default {','.join(DEFAULT_SWEEP)})")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("subset-convergence", help="single-machine random-subset training")
    _common(p)
    p.add_argument("--sizes", default="2,4,8")
    p.add_argument("--epochs", type=int, default=20)
    p.set_defaults(fn=cmd_subset)

    p = sub.add_parser("bound", help="evaluate the convergence bound")
    p.add_argument("--from-summary", type=Path, help="summary.json written by `run`")
    for key, typ in (("h", float), ("sigma2", float), ("delta2", float), ("alpha", float), ("N", int),
                     ("J", int), ("T", int), ("eta", float), ("gamma_star", float), ("F1", float),
                     ("sum_r_norm2", float)):
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=typ)
    p.set_defaults(fn=cmd_bound)

    p = sub.add_parser("check", help="run the invariant suite")
    p.add_argument("--full", action="store_true", help="use the stated sample sizes (slower)")
    p.add_argument("--only", action="append", help="key prefix filter, e.g. allocation")
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("export", help="write datasets and/or allocation histories as CSV")
    _common(p)
    p.add_argument("--what", choices=("dataset", "allocations", "all"), default="all")
    p.set_defaults(fn=cmd_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, AllocationError, DivergenceError, ValueError, OSError) as exc:
        print(f"fedra {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
