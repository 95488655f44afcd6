"""Command-line entry points.

Subcommands: run, constants, transport, probe, report. Exit codes follow the
verification contract: 0 means every checked bound held, 1 means a bound (or
probe) violation, 2 means configuration or runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import bounds as bounds_mod
from .errors import FpsensError
from .harness import (CurveRow, TolerancePolicy, check_bound, load_config,
                      read_curves, render_plots, run_experiment)
from .model import LangevinModel, ProbeSpec, probe_constants, probe_langevin
from .transport import PointCloud, dual_feasibility_check, wasserstein

_G = "{:.12g}".format


def _print_verdict_table(rows, table, out=sys.stdout) -> None:
    print(f"{'p':>6} {'t':>12} {'W_p^p':>16} {'SE':>12} {'envelope':>16} verdict",
          file=out)
    for row, entry in zip(rows, table.entries):
        print(f"{row.p:>6g} {row.t:>12.6g} {row.w_hat_pp:>16.9g} "
              f"{row.w_hat_se:>12.4g} {row.envelope:>16.9g} "
              f"{'pass' if entry.passed else 'FAIL'}", file=out)
    if table.failures:
        witnesses = ", ".join(f"(p={p:g}, t={t:g})" for p, t in table.failures)
        print(f"violations at: {witnesses}", file=out)


def _cmd_run(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, master_seed=args.seed)
    report = run_experiment(config, threads=args.threads, make_plots=args.plots,
                            output_dir=args.out)
    _print_verdict_table(report.rows, report.verdicts)
    for w in report.warnings:
        print(f"warning: {w}")
    print(f"outputs in {report.output_dir}")
    print("PASS" if report.passed else "FAIL: empirical distance exceeded the envelope")
    return 0 if report.passed else 1


def _cmd_constants(args) -> int:
    growth_args = (args.L1, args.L2, args.m)
    contraction_args = (args.k, args.L3)
    if all(v is not None for v in growth_args) and all(v is None for v in contraction_args):
        print(f"{'p':>6} {'C1':>18} {'C2':>18}")
        for p in args.p:
            c = bounds_mod.theorem1_constants(args.L1, args.L2, args.m, p)
            print(f"{p:>6g} {_G(c.C1):>18} {_G(c.C2):>18}")
        return 0
    if all(v is not None for v in contraction_args) and all(v is None for v in growth_args):
        print(f"{'p':>6} {'lambda':>18} {'K1':>18} {'K2':>18}")
        for p in args.p:
            c = bounds_mod.langevin_constants(args.k, args.L3, args.dim, p)
            print(f"{p:>6g} {_G(c.lam):>18} {_G(c.K1):>18} {_G(c.K2):>18}")
        return 0
    raise FpsensError("give either --L1 --L2 --m (growth family) "
                      "or --k --L3 (contraction family), not a mixture")


def _cmd_transport(args) -> int:
    xs = PointCloud.from_csv(args.source)
    ys = PointCloud.from_csv(args.target)
    res = wasserstein(xs, ys, args.p, cap=args.cap)
    cert = dual_feasibility_check(res, xs, ys)
    print(f"n = {xs.n}, dim = {xs.dim}, order p = {args.p:g}")
    print(f"W_p^p = {_G(res.cost)}")
    print(f"W_p   = {_G(res.distance)}")
    print(f"dual value = {_G(res.dual_value())}")
    print(f"certificate: max_violation = {cert.max_violation:.3e}, "
          f"slackness = {cert.max_slackness:.3e}, duality_gap = {cert.duality_gap:.3e} "
          f"-> {'ok' if cert.passed else 'FAILED'}")
    return 0 if cert.passed else 1


def _cmd_probe(args) -> int:
    config = load_config(args.config)
    seed = config.master_seed if args.seed is None else args.seed
    from .gallery import make_model
    model = make_model(config.model_id, **config.model_kwargs())
    spec = ProbeSpec(
        n_pairs=args.pairs if args.pairs is not None else config.probe_pairs,
        box_radius=args.box if args.box is not None else config.probe_box,
        seed=seed,
        param_low=min(config.a, config.a_prime),
        param_high=max(config.a, config.a_prime))
    if isinstance(model, LangevinModel):
        rep = probe_langevin(model, spec)
        print(f"min convexity quotient = {_G(rep.min_convexity_quotient)} "
              f"(declared k = {_G(rep.declared_k)})")
        print(f"max parameter quotient = {_G(rep.max_param_quotient)} "
              f"(declared L3 = {_G(rep.declared_L3)})")
    else:
        rep = probe_constants(model, spec)
        d = rep.declared
        print(f"max joint quotient       = {_G(rep.max_joint_quotient)} (declared L1 = {_G(d.L1)})")
        print(f"max divergence quotient  = {_G(rep.max_divergence_quotient)} (declared L2 = {_G(d.L2)})")
        print(f"min diffusion eigenvalue = {_G(rep.min_eigenvalue)} (declared m = {_G(d.m)})")
        print(f"max growth ratio         = {_G(rep.max_growth_ratio)} (declared C = {_G(d.C)})")
    if rep.failures:
        print(f"violated: {', '.join(rep.failures)}")
    print("PASS" if rep.passed else "FAIL: declared constants are not honest on the probe box")
    return 0 if rep.passed else 1


def _cmd_report(args) -> int:
    # a failed run leaves a marker instead of curves; surface it first
    doc = {}
    report_path = os.path.join(args.dir, "report.json")
    if os.path.exists(report_path):
        with open(report_path) as f:
            doc = json.load(f)
        if doc.get("failed"):
            print(f"run failed at stage {doc['failed']['stage']}: "
                  f"{doc['failed']['error']}", file=sys.stderr)
            return 2
    rows = read_curves(os.path.join(args.dir, "curves.csv"))
    z = args.z
    if z is None:
        z = doc.get("config", {}).get("z", 3.0)
    table = check_bound(rows, TolerancePolicy(z=z))
    _print_verdict_table(rows, table)
    if args.plots:
        render_plots(rows, os.path.join(args.dir, "plots"))
        print(f"plots in {os.path.join(args.dir, 'plots')}")
    print("PASS" if table.passed else "FAIL")
    return 0 if table.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fpsens",
        description="Parameter-sensitivity experiments for coupled diffusions: "
                    "simulate, measure transport distances, verify envelopes.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a full experiment from a TOML config")
    p_run.add_argument("config", help="path to the experiment config")
    p_run.add_argument("--seed", type=int, default=None, help="override master_seed")
    p_run.add_argument("--threads", type=int, default=1,
                       help="worker threads (speed only; results are identical)")
    p_run.add_argument("--plots", action="store_true", help="emit SVG figures")
    p_run.add_argument("--out", default=None, help="override the output directory")
    p_run.set_defaults(func=_cmd_run)

    p_const = sub.add_parser("constants", help="print envelope constants for given orders")
    p_const.add_argument("--p", type=float, nargs="+", required=True, help="orders")
    p_const.add_argument("--L1", type=float, default=None)
    p_const.add_argument("--L2", type=float, default=None)
    p_const.add_argument("--m", type=float, default=None)
    p_const.add_argument("--k", type=float, default=None)
    p_const.add_argument("--L3", type=float, default=None)
    p_const.add_argument("--dim", type=int, default=1)
    p_const.set_defaults(func=_cmd_constants)

    p_tr = sub.add_parser("transport", help="exact W_p between two CSV point clouds")
    p_tr.add_argument("source")
    p_tr.add_argument("target")
    p_tr.add_argument("--p", type=float, required=True, help="order p >= 1")
    p_tr.add_argument("--cap", type=int, default=4096, help="assignment solver cap")
    p_tr.set_defaults(func=_cmd_transport)

    p_probe = sub.add_parser("probe", help="spot-check declared model constants")
    p_probe.add_argument("config")
    p_probe.add_argument("--pairs", type=int, default=None)
    p_probe.add_argument("--box", type=float, default=None)
    p_probe.add_argument("--seed", type=int, default=None)
    p_probe.set_defaults(func=_cmd_probe)

    p_rep = sub.add_parser("report", help="re-render verdicts (and plots) from stored curves")
    p_rep.add_argument("dir", help="output directory of a previous run")
    p_rep.add_argument("--plots", action="store_true")
    p_rep.add_argument("--z", type=float, default=None, help="override the verdict z")
    p_rep.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FpsensError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
