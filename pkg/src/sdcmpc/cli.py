"""``bench`` command line tool.

``bench run`` flies the scenario for the selected controller(s) and writes
one artifact directory per controller; ``bench compare`` reads those
directories back and prints a side-by-side metrics table.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .bench import ControllerFault, ScenarioConfig, disturbance_digest, \
    generate_disturbances, load_config, parse_metrics_text, run_closed_loop, \
    write_run
from .mpc import CONTROLLER_KINDS

METRIC_KEYS = ("avg_cpu_ms", "mse_m2", "total_cost",
               "min_obstacle_distance", "infeasible_steps")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bench",
        description="Closed-loop quadrotor MPC benchmark.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="fly the scenario and write artifacts")
    run.add_argument("--config", required=True,
                     help="scenario config file (YAML; empty file = defaults)")
    run.add_argument("--controller", required=True,
                     choices=CONTROLLER_KINDS + ("all",),
                     help="which controller to fly ('all' = every one "
                          "selected by the config)")
    run.add_argument("--seed", required=True, type=int,
                     help="disturbance seed (unsigned 64-bit)")
    run.add_argument("--out", required=True,
                     help="output directory; one subdirectory per controller")
    run.add_argument("--sequential", action="store_true",
                     help="run controllers one after another instead of in "
                          "worker threads (steadier CPU timing)")
    run.add_argument("--disturbance", choices=("gaussian", "constant-bias",
                                               "none"),
                     help="override the config's disturbance mode")

    compare = sub.add_parser("compare",
                             help="print a metrics table from run artifacts")
    compare.add_argument("--out", required=True,
                         help="directory previously passed to 'bench run'")
    return parser


def _run_one(controller_id: str, cfg: ScenarioConfig, disturbances,
             digest: str, out: Path) -> tuple[str, str | None]:
    """Returns (controller, fault message or None)."""
    try:
        records = run_closed_loop(controller_id, cfg, disturbances.copy())
        fault = None
    except ControllerFault as exc:
        records = exc.records
        fault = exc.cause
    write_run(out, controller_id, cfg, records, digest, fault=fault)
    return controller_id, fault


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    overrides = {"seed": args.seed}
    if args.disturbance is not None:
        overrides["disturbance_mode"] = args.disturbance
    cfg = dataclasses.replace(cfg, **overrides)
    controllers = cfg.controllers if args.controller == "all" \
        else (args.controller,)

    disturbances = generate_disturbances(cfg)
    digest = disturbance_digest(disturbances)
    out = Path(args.out)

    if args.sequential or len(controllers) == 1:
        results = [_run_one(c, cfg, disturbances, digest, out)
                   for c in controllers]
    else:
        with ThreadPoolExecutor(max_workers=len(controllers)) as pool:
            futures = [pool.submit(_run_one, c, cfg, disturbances, digest,
                                   out) for c in controllers]
            results = [f.result() for f in futures]

    failed = False
    for controller_id, fault in results:
        run_dir = out / controller_id
        if fault is None:
            print(f"{controller_id}: ok -> {run_dir}")
        else:
            failed = True
            print(f"{controller_id}: FAULT ({fault}) -> {run_dir}",
                  file=sys.stderr)
    return 1 if failed else 0


def cmd_compare(args: argparse.Namespace) -> int:
    out = Path(args.out)
    rows = []
    known = [c for c in CONTROLLER_KINDS if (out / c / "metrics.txt").exists()]
    extra = sorted(p.parent.name for p in out.glob("*/metrics.txt")
                   if p.parent.name not in CONTROLLER_KINDS)
    for name in known + extra:
        metrics = parse_metrics_text(
            (out / name / "metrics.txt").read_text(encoding="utf-8"))
        rows.append((name, metrics))
    if not rows:
        print(f"no run artifacts under {out}", file=sys.stderr)
        return 2

    header = ("controller", "avg_cpu_ms", "mse_m2", "total_cost",
              "min_obst_dist", "infeasible")
    table = [header]
    for name, metrics in rows:
        table.append((
            name,
            f"{metrics['avg_cpu_ms']:.2f}",
            f"{metrics['mse_m2']:.4f}",
            f"{metrics['total_cost']:.4g}",
            f"{metrics['min_obstacle_distance']:.3f}",
            f"{int(metrics['infeasible_steps'])}"))
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    for row in table:
        print("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    return cmd_compare(args)


if __name__ == "__main__":
    raise SystemExit(main())
