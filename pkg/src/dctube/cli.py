"""Command line front end for the hover benchmark.

Subcommands mirror the offline/online pipeline: `fit` learns a model file,
`terminal` turns a model file into terminal ingredients, `run` executes a
closed-loop experiment described by a JSON config, `sweep` times the online
solves over several horizons, and `compare` tabulates finished runs.

Exit codes: 0 on success, 2 when no feasible plan exists from the initial
state, 3 when disturbance recovery fails, 4 when the conic solver fails,
1 for anything else.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .dc_core import DcModel
from .terminal_design import TerminalIngredients
from .tube_mpc import InitializationError, RestorationError, SolverError
from .pvtol_bench import (DELTA_DEFAULT, ExperimentConfig, ExperimentError,
                          PvtolPlant, fit_pvtol_model, make_dataset,
                          pvtol_terminal, run_experiment, timing_sweep)

EXIT_INFEASIBLE_SETUP = 2
EXIT_RESTORATION = 3
EXIT_SOLVER = 4


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


def _exit_code(exc: ExperimentError) -> int:
    cause = exc.__cause__
    if isinstance(cause, InitializationError):
        return EXIT_INFEASIBLE_SETUP
    if isinstance(cause, RestorationError):
        return EXIT_RESTORATION
    if isinstance(cause, SolverError):
        return EXIT_SOLVER
    return 1


def cmd_fit(args) -> int:
    Z, Y = make_dataset(n_samples=args.samples, seed=args.seed,
                        cache_path=args.data_cache)
    hyper = json.loads(args.hyper) if args.hyper else {}
    model = fit_pvtol_model(args.kind, Z, Y, delta=args.delta,
                            seed=args.seed, verbose=args.verbose, **hyper)
    _ensure_parent(args.out)
    model.save(args.out)
    rep = model.fit_report
    mae = ", ".join(f"{v:.4f}" for v in rep["mae"])
    print(f"saved {args.kind} model to {args.out} "
          f"(held-out MAE {mae}, {rep['fit_seconds']:.1f} s)")
    return 0


def cmd_terminal(args) -> int:
    model = DcModel.load(args.model)
    plant = None
    if args.with_plant:
        plant = PvtolPlant(model_delta(model, args.delta),
                           method=args.integrator)
    ing = pvtol_terminal(model, plant=plant,
                         alpha_tradeoff=args.alpha, verbose=args.verbose)
    _ensure_parent(args.out)
    ing.save(args.out)
    print(f"saved terminal ingredients to {args.out} "
          f"(gamma_hat {ing.gamma_hat:.5f}, "
          f"{ing.info.get('n_ldi_vertices', '?')} vertices)")
    return 0


def model_delta(model: DcModel, fallback: float) -> float:
    # the assembled skeleton stores delta in the roll-rate coupling entry
    d = float(model.lin_A[0, 3])
    return d if d > 0 else fallback


def cmd_run(args) -> int:
    cfg = ExperimentConfig.from_json(args.config)
    if args.outdir:
        cfg = dataclasses.replace(cfg, outdir=args.outdir)
    try:
        summary, _ = run_experiment(cfg, verbose=True)
    except ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    print(f"summary written to {summary['summary_path']}")
    return 0


def cmd_sweep(args) -> int:
    base = None
    if args.config:
        base = ExperimentConfig.from_json(args.config)
    rows, corr = timing_sweep(kinds=tuple(args.kinds),
                              N_list=tuple(args.horizons),
                              n_steps=args.steps, base=base,
                              out_path=args.out, verbose=args.verbose)
    for kind in args.kinds:
        times = {r["N"]: r["solve_time_mean"] for r in rows
                 if r["kind"] == kind}
        trace = "  ".join(f"N={N}: {t:.3f}s" for N, t in sorted(times.items()))
        print(f"{kind:5s} {trace}  (spearman {corr[kind]:.3f})")
    if args.out:
        print(f"rows written to {args.out}")
    return 0


def cmd_compare(args) -> int:
    fields = ["name", "kind", "tube", "N", "max_iters", "final_error",
              "J_last", "solve_time_mean", "n_events"]
    table = []
    for path in args.summaries:
        with open(path) as fh:
            d = json.load(fh)
        table.append([_fmt(d.get(k)) for k in fields])
    widths = [max(len(r[i]) for r in table + [fields])
              for i in range(len(fields))]
    print("  ".join(f"{h:>{w}}" for h, w in zip(fields, widths)))
    for row in table:
        print("  ".join(f"{c:>{w}}" for c, w in zip(row, widths)))
    return 0


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.3e}" if (v != 0 and abs(v) < 1e-2) else f"{v:.3f}"
    return str(v)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dctube",
                                description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a DC model of the hover dynamics")
    f.add_argument("--kind", choices=("poly", "net", "rbf"), default="poly")
    f.add_argument("--out", required=True, help="model JSON path")
    f.add_argument("--samples", type=int, default=100_000)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--delta", type=float, default=DELTA_DEFAULT)
    f.add_argument("--data-cache", default=None,
                   help="CSV cache for the sampled accelerations")
    f.add_argument("--hyper", default=None,
                   help="JSON dict of fitter hyperparameters")
    f.add_argument("--verbose", action="store_true")
    f.set_defaults(fn=cmd_fit)

    t = sub.add_parser("terminal",
                       help="terminal gain/weight/level from a model file")
    t.add_argument("--model", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--alpha", type=float, default=1.0,
                   help="trade-off weight on the inverse level set radius")
    t.add_argument("--with-plant", action="store_true",
                   help="merge exact-plant corner Jacobians into the LDI")
    t.add_argument("--integrator", choices=("euler", "rk4"), default="euler")
    t.add_argument("--delta", type=float, default=DELTA_DEFAULT)
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(fn=cmd_terminal)

    r = sub.add_parser("run", help="closed-loop experiment from a JSON config")
    r.add_argument("config", help="ExperimentConfig JSON file")
    r.add_argument("--outdir", default=None, help="override cfg.outdir")
    r.set_defaults(fn=cmd_run)

    s = sub.add_parser("sweep", help="online solve-time sweep over horizons")
    s.add_argument("--kinds", nargs="+", default=["poly"],
                   choices=("poly", "net", "rbf"))
    s.add_argument("--horizons", nargs="+", type=int,
                   default=[10, 20, 30, 40, 50])
    s.add_argument("--steps", type=int, default=10,
                   help="closed-loop steps timed per horizon")
    s.add_argument("--config", default=None,
                   help="base ExperimentConfig JSON")
    s.add_argument("--out", default=None, help="CSV output path")
    s.add_argument("--verbose", action="store_true")
    s.set_defaults(fn=cmd_sweep)

    c = sub.add_parser("compare", help="tabulate finished run summaries")
    c.add_argument("summaries", nargs="+",
                   help="summary JSON files written by `run`")
    c.set_defaults(fn=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
