"""Command-line entry point.

Every command writes its results (CSV and/or JSON) plus ``manifest.json`` and
``config.snapshot`` into ``--out-dir``. ``metaalloc replay <manifest>``
re-runs a command from its manifest and reproduces the result files exactly.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import __version__
from .allocator import optimal_N_approx, optimal_n_exact
from .config import Config, ConfigError, parse_config, parse_config_text, serialize_config
from .harness import (
    CellResult,
    SweepTable,
    bootstrap_optimum,
    easy_hard_study,
    sweep_budget_grid,
)
from .rng_models import MomentKind, lemma1_moment, monte_carlo_moments
from .theory_loss import (
    HomogeneousLossParams,
    theory_test_loss_homogeneous,
    theory_test_loss_under,
)

log = logging.getLogger("metaalloc")

SWEEP_COLUMNS = ("budget", "n_per_task", "m_tasks", "rep_id", "test_loss", "seed")
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def fmt_num(v) -> str:
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def write_csv(path: Path, columns: Sequence[str], rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt_num(r[c]) for c in columns])


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_sweep_csv(path: Path) -> SweepTable:
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.append(CellResult(int(r["budget"]), int(r["n_per_task"]), int(r["m_tasks"]),
                                   int(r["rep_id"]), float(r["test_loss"]), r["seed"]))
    return SweepTable(rows, [])


def _sweep_rows(table: SweepTable) -> list[dict]:
    return [{c: getattr(r, c) for c in SWEEP_COLUMNS} for r in table.rows]


# ---------------------------------------------------------------- commands

def cmd_verify_moments(cfg: Config, args, out: Path) -> int:
    trials = args.trials or cfg["moments.trials"]
    rows, failed = [], 0
    for n in range(1, cfg["moments.n_max"] + 1):
        for p in range(1, cfg["moments.p_max"] + 1):
            for lam in cfg["moments.lambdas"]:
                est = monte_carlo_moments(n, p, lam, trials, args.seed)
                for kind, e in est.items():
                    exact = lemma1_moment(kind, n, p, lam)
                    z = (e.estimate - exact) / e.std_error
                    ok = abs(z) <= 4
                    failed += not ok
                    rows.append({"kind": kind.name, "n": n, "p": p, "lambda": lam,
                                 "closed_form": exact, "estimate": e.estimate,
                                 "std_error": e.std_error, "z": z, "pass": int(ok)})
    write_csv(out / "moments.csv", list(rows[0]), rows)
    per_kind = {}
    for k in MomentKind:
        ks = [r for r in rows if r["kind"] == k.name]
        per_kind[k.name] = {"cases": len(ks), "passed": sum(r["pass"] for r in ks),
                            "max_abs_z": max(abs(r["z"]) for r in ks)}
    write_json(out / "summary.json", {"trials": trials, "failed": failed, "kinds": per_kind})
    for name, s in per_kind.items():
        status = "PASS" if s["passed"] == s["cases"] else "FAIL"
        print(f"{status}  {name:10s} {s['passed']}/{s['cases']}  max|z|={s['max_abs_z']:.2f}")
    return EXIT_OK if failed == 0 else EXIT_FAIL


def cmd_theory(cfg: Config, args, out: Path) -> int:
    spec, env, test = cfg.train_spec, cfg.env, cfg.test
    rows = []
    for b in cfg["sweep.budgets"]:
        for n in cfg["sweep.n_grid"]:
            if b % (2 * n):
                continue
            m = b // (2 * n)
            under = (theory_test_loss_under([replace(spec, n_train=n, n_val=n)] * m, env, test)
                     if m * n >= env.p else float("nan"))
            homog = theory_test_loss_homogeneous(HomogeneousLossParams(
                spec.sigma / spec.lam, spec.lam**2 * spec.alpha, env.nu, env.p, n, b, test))
            rows.append({"budget": b, "n_per_task": n, "m_tasks": m, "theory_under": under,
                         "theory_homogeneous": homog, "gap": homog - under})
    cols = ("budget", "n_per_task", "m_tasks", "theory_under", "theory_homogeneous", "gap")
    write_csv(out / "theory.csv", cols, rows)
    write_json(out / "summary.json", {"rows": len(rows)})
    print(f"wrote {len(rows)} rows to {out / 'theory.csv'}")
    return EXIT_OK


def cmd_allocate(cfg: Config, args, out: Path) -> int:
    spec = cfg.train_spec
    a = args.alpha_prime if args.alpha_prime is not None else spec.lam**2 * spec.alpha
    s = args.sigma_prime if args.sigma_prime is not None else spec.sigma / spec.lam
    nu = args.nu if args.nu is not None else cfg["env.nu"]
    p = args.p if args.p is not None else cfg["env.p"]
    sol = optimal_n_exact(a, s, nu, p)
    c = sol.coefficients
    res = {
        "alpha_prime": a, "sigma_prime": s, "nu": nu, "p": p,
        "n_star": sol.n_star, "N_star": sol.N_star,
        "N_star_approx": optimal_N_approx(a, s, nu, p),
        "coefficients": {"A": c.A, "B": c.B, "C": c.C, "D": c.D,
                         "delta0": c.delta0, "delta1": c.delta1},
        "discriminant": c.discriminant,
        "discriminant_sign": (c.discriminant > 0) - (c.discriminant < 0),
        "roots_n": [[z.real, z.imag] for z in sol.root_multiset],
        "selection_note": sol.selection_note,
    }
    write_json(out / "allocation.json", res)
    print(json.dumps(res, indent=2, sort_keys=True))
    return EXIT_OK


def _skipped_message(skipped) -> str:
    return "skipped infeasible cells (b/2n not an integer): " + ", ".join(
        f"(b={b}, n={n})" for b, n in skipped)


def cmd_sweep(cfg: Config, args, out: Path) -> int:
    sc = cfg.sweep
    feasible, skipped = sc.cells()
    if not feasible:
        print("error: no feasible cell. " + _skipped_message(skipped), file=sys.stderr)
        return EXIT_USAGE
    table = sweep_budget_grid(sc, args.workers)
    write_csv(out / "sweep.csv", SWEEP_COLUMNS, _sweep_rows(table))
    summary = {"rows": len(table.rows), "skipped": [list(c) for c in table.skipped],
               "failures": table.failures, "cells": []}
    for b in sc.budgets:
        for n, (mean, se) in table.mean_curve(b).items():
            m = b // (2 * n)
            th = (theory_test_loss_under([replace(sc.train_spec, n_train=n, n_val=n)] * m,
                                         sc.env, sc.test) if m * n >= sc.env.p else None)
            summary["cells"].append({"budget": b, "n_per_task": n, "mean_loss": mean,
                                     "std_error": se, "theory": th})
    write_json(out / "summary.json", summary)
    print(f"wrote {len(table.rows)} rows to {out / 'sweep.csv'}")
    status = EXIT_OK
    if skipped:
        print("error: " + _skipped_message(skipped), file=sys.stderr)
        status = EXIT_USAGE
    if table.failures:
        print("error: failed cells:\n  " + "\n  ".join(table.failures), file=sys.stderr)
        status = EXIT_FAIL
    return status


def cmd_bootstrap(cfg: Config, args, out: Path) -> int:
    table = read_sweep_csv(Path(args.input))
    samples = args.samples or cfg["sweep.bootstrap_samples"]
    res = []
    for b in sorted({r.budget for r in table.rows}):
        est = bootstrap_optimum(table, samples, args.seed, b)
        res.append({"budget": b, "mean_N_star": est.mean_N_star, "std_N_star": est.std_N_star,
                    "bootstrap_samples": samples})
    write_csv(out / "bootstrap.csv", ("budget", "mean_N_star", "std_N_star", "bootstrap_samples"), res)
    write_json(out / "summary.json", {"estimates": res})
    for r in res:
        print(f"b={r['budget']}: N* = {r['mean_N_star']:.2f} +/- {r['std_N_star']:.2f}")
    return EXIT_OK


def cmd_easyhard(cfg: Config, args, out: Path) -> int:
    res = easy_hard_study(cfg.train_spec, cfg.hard_spec, cfg.sweep,
                          cfg["sweep.bootstrap_samples"], args.workers)
    rows = res.rows()
    write_csv(out / "easyhard.csv", list(rows[0]), rows)
    write_csv(out / "sweep_easy.csv", SWEEP_COLUMNS, _sweep_rows(res.easy))
    write_csv(out / "sweep_hard.csv", SWEEP_COLUMNS, _sweep_rows(res.hard))
    write_json(out / "summary.json", {"rows": rows})
    for r in rows:
        print(f"b={r['budget']}: easy N*={r['easy_mean_N_star']:.1f}  hard N*={r['hard_mean_N_star']:.1f}"
              f"  (theory {r['easy_theory_N_star']:.1f} / {r['hard_theory_N_star']:.1f})")
    return EXIT_OK


COMMANDS = {
    "verify-moments": cmd_verify_moments,
    "theory": cmd_theory,
    "allocate": cmd_allocate,
    "sweep": cmd_sweep,
    "bootstrap": cmd_bootstrap,
    "easyhard": cmd_easyhard,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metaalloc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--seed", type=int, default=None, help="master seed")
        p.add_argument("--out-dir", default="results", help="output directory")
        p.add_argument("--workers", type=int, default=None,
                       help="worker processes (default: $METAALLOC_WORKERS or 1)")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    p = common(sub.add_parser("verify-moments", help="Monte Carlo check of Gaussian moments"))
    p.add_argument("--trials", type=int, default=None)
    common(sub.add_parser("theory", help="evaluate the analytic test loss on the sweep grid"))
    p = common(sub.add_parser("allocate", help="optimal points per task from the cubic"))
    p.add_argument("--alpha-prime", type=float)
    p.add_argument("--sigma-prime", type=float)
    p.add_argument("--nu", type=float)
    p.add_argument("--p", type=int)
    for name in ("sweep", "easyhard"):
        p = common(sub.add_parser(name, help=f"run the {name} simulation"))
        p.add_argument("--budgets", help="comma-separated budgets")
        p.add_argument("--n-grid", help="comma-separated per-split counts")
        p.add_argument("--repetitions", type=int)
    p = common(sub.add_parser("bootstrap", help="bootstrap optimum from a sweep CSV"))
    p.add_argument("input", help="sweep.csv produced by the sweep command")
    p.add_argument("--samples", type=int, default=None)
    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out-dir", default=None)
    return parser


def _resolve_config(args) -> Config:
    cfg = parse_config(args.config)
    over = {}
    if args.seed is not None:
        over["sweep.master_seed"] = args.seed
    if getattr(args, "budgets", None):
        over["sweep.budgets"] = tuple(int(v) for v in args.budgets.split(","))
    if getattr(args, "n_grid", None):
        over["sweep.n_grid"] = tuple(int(v) for v in args.n_grid.split(","))
    if getattr(args, "repetitions", None):
        over["sweep.repetitions"] = args.repetitions
    return cfg.with_overrides(**over)


def execute_command(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "replay":
        return replay(args.manifest, args.out_dir)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve_config(args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    args.seed = cfg["sweep.master_seed"]
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.snapshot").write_text(serialize_config(cfg))
        write_json(out / "manifest.json", {
            "command": args.command,
            "argv": argv,
            "config": serialize_config(cfg),
            "master_seed": cfg["sweep.master_seed"],
            "version": __version__,
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        })
        return COMMANDS[args.command](cfg, args, out)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


def replay(manifest_path: str, out_dir: str | None = None) -> int:
    """Re-run the command recorded in a manifest with its config snapshot."""
    man = json.loads(Path(manifest_path).read_text())
    out = Path(out_dir) if out_dir else Path(manifest_path).parent / "replay"
    out.mkdir(parents=True, exist_ok=True)
    cfg_path = out / "replay.config"
    cfg_path.write_text(man["config"])
    parse_config_text(man["config"])  # fail early on a corrupted snapshot
    argv = list(man["argv"])
    cleaned, skip = [], False
    for a in argv:
        if skip:
            skip = False
            continue
        if a in ("--config", "--out-dir", "--seed"):
            skip = True
            continue
        if a.startswith(("--config=", "--out-dir=", "--seed=")):
            continue
        cleaned.append(a)
    cmd = cleaned[0]
    rest = cleaned[1:]
    return execute_command([cmd, "--config", str(cfg_path), "--out-dir", str(out), *rest])


def main() -> None:
    sys.exit(execute_command())


if __name__ == "__main__":
    main()
