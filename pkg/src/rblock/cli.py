"""Command-line surface.

Subcommands: gamma (p <-> gamma conversions), mask sample (export mask
draws), verify (Monte Carlo vs analytic drop rates), train, compare.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
failure (diverged training, failed statistical check, unmet formula
precondition).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from . import gamma as ga
from . import masks, training
from .data import CifarFormatError
from .nn import build_default_model
from .rng import RngStream

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rblock", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gamma", help="convert p to gamma (simple/corrected/exact)")
    g.add_argument("--p", type=float, required=True)
    g.add_argument("--bsize", type=int, default=3)
    g.add_argument("--m", type=int)
    g.add_argument("--n", type=int)
    g.add_argument("--mode", choices=ga.GAMMA_MODES, default="simple")
    g.add_argument("--tol", type=float, default=1e-10)
    g.add_argument("--json", action="store_true")

    m = sub.add_parser("mask", help="mask operations")
    msub = m.add_subparsers(dest="mask_command", required=True)
    ms = msub.add_parser("sample", help="draw a mask (pair) and export it as JSON")
    ms.add_argument("--method", required=True)
    ms.add_argument("--m", type=int, required=True)
    ms.add_argument("--n", type=int, required=True)
    ms.add_argument("--c", type=int, required=True)
    ms.add_argument("--p", type=float, default=0.2)
    ms.add_argument("--bsize", type=int, default=3)
    ms.add_argument("--seed", type=int, default=0)
    ms.add_argument("--out", type=Path)
    ms.add_argument("--json", action="store_true")

    v = sub.add_parser("verify", help="Monte Carlo check of the analytic drop rate")
    v.add_argument("--gamma", type=float)
    v.add_argument("--p", type=float)
    v.add_argument("--m", type=int, required=True)
    v.add_argument("--n", type=int, required=True)
    v.add_argument("--bsize", type=int, default=3)
    v.add_argument("--trials", type=int, default=100_000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", type=Path)
    v.add_argument("--json", action="store_true")

    t = sub.add_parser("train", help="train per a JSON config")
    t.add_argument("--config", type=Path, required=True)
    t.add_argument("--out", type=Path, required=True)
    t.add_argument("--json", action="store_true")

    c = sub.add_parser("compare", help="six-method comparison stage table")
    c.add_argument("--config", type=Path, required=True)
    c.add_argument("--out", type=Path, required=True)
    c.add_argument("--methods", default=",".join(training.COMPARISON_METHODS))
    c.add_argument("--json", action="store_true")
    return parser


def _emit(payload: dict, as_json: bool, lines):
    if as_json:
        print(json.dumps(payload, indent=2))
    else:
        for line in lines:
            print(line)


def cmd_gamma(args) -> int:
    if args.mode in ("corrected", "exact") and (args.m is None or args.n is None):
        raise _UsageError(f"--m and --n are required for mode {args.mode}")
    if args.mode == "simple":
        value = ga.gamma_simple(args.p, args.bsize)
        payload = {"mode": "simple", "p": args.p, "b_size": args.bsize, "gamma": value}
        _emit(payload, args.json, [f"gamma = {value:.10g}"])
        return EXIT_OK

    geom = ga.BlockGeometry(args.m, args.n, args.bsize)
    if args.mode == "corrected":
        value = ga.gamma_corrected(args.p, geom)
        payload = {"mode": "corrected", "p": args.p, "b_size": args.bsize,
                   "m": args.m, "n": args.n, "gamma": value}
        _emit(payload, args.json, [f"gamma = {value:.10g}"])
        return EXIT_OK

    if not geom.supports_exact():
        print(f"error: exact mode requires m, n > 2*b_size "
              f"(got {geom.m}x{geom.n}, b_size={geom.b_size}); "
              f"use `rblock verify` (Monte Carlo) for this geometry",
              file=sys.stderr)
        return EXIT_NUMERIC
    value = ga.solve_gamma_exact(args.p, geom, tol=args.tol)
    residual = abs(ga.p_exact(value, geom) - args.p)
    p1 = ga.p_no_margin(value, args.bsize)
    p2 = ga.p_valid_region(value, geom)
    payload = {"mode": "exact", "p": args.p, "b_size": args.bsize,
               "m": args.m, "n": args.n, "gamma": value,
               "residual": residual, "p_no_margin": p1, "p_valid_region": p2}
    _emit(payload, args.json, [
        f"gamma = {value:.12g}",
        f"residual |p_exact(gamma) - p| = {residual:.3g}",
        f"bounds: p_valid_region = {p2:.10g} <= p <= p_no_margin = {p1:.10g}",
    ])
    return EXIT_OK


def cmd_mask_sample(args) -> int:
    if args.method not in masks.METHODS:
        raise _UsageError(
            f"unknown method {args.method!r}; choose from {', '.join(masks.METHODS)}"
        )
    spec = masks.DropSpec(args.method, p=args.p, b_size=args.bsize)
    rng = RngStream(args.seed)
    shape = (args.m, args.n, args.c)
    pair = masks.sample_mask(shape, spec, rng)
    doc = masks.mask_to_export_dict(shape, spec, pair, args.seed)
    text = json.dumps(doc)
    if args.out:
        args.out.write_text(text)
    payload = {"method": args.method, "shape": list(shape),
               "scale1": pair.scale1, "scale2": pair.scale2,
               "out": str(args.out) if args.out else None}
    if args.json:
        print(json.dumps(payload, indent=2))
    elif args.out:
        print(f"wrote {args.out} (scale1={pair.scale1:.6g}, scale2={pair.scale2})")
    else:
        print(text)
    return EXIT_OK


def cmd_verify(args) -> int:
    if (args.gamma is None) == (args.p is None):
        raise _UsageError("give exactly one of --gamma or --p")
    if args.trials < 1000:
        raise _UsageError("--trials must be >= 1000")
    geom = ga.BlockGeometry(args.m, args.n, args.bsize)
    if args.gamma is not None:
        gamma = args.gamma
    else:
        if not geom.supports_exact():
            print("error: --p needs the exact inversion, which requires "
                  "m, n > 2*b_size", file=sys.stderr)
            return EXIT_NUMERIC
        gamma = ga.solve_gamma_exact(args.p, geom, tol=1e-12)

    report = ga.mc_drop_rate(gamma, geom, args.trials, RngStream(args.seed))
    if args.out:
        args.out.write_text(report.to_json(indent=2))

    if report.analytic_p is None:
        # No closed form at this geometry; report the estimate only.
        payload = report.to_dict()
        payload["passed"] = None
        _emit(payload, args.json, [
            f"empirical p = {report.empirical_p:.6f} over {report.trials} trials",
            "no analytic value available at this geometry (m, n <= 2*b_size)",
        ])
        return EXIT_OK

    draws = geom.m * geom.n * args.trials
    sigma = math.sqrt(max(report.analytic_p * (1 - report.analytic_p), 0.0) / draws)
    passed = report.abs_deviation <= 3 * sigma
    payload = report.to_dict()
    payload.update({"sigma": sigma, "threshold": 3 * sigma, "passed": bool(passed)})
    _emit(payload, args.json, [
        f"gamma = {gamma:.8g}  geometry = {geom.m}x{geom.n}  b_size = {geom.b_size}",
        f"analytic p = {report.analytic_p:.6f}  empirical p = {report.empirical_p:.6f}",
        f"|deviation| = {report.abs_deviation:.3g}  3*sigma = {3 * sigma:.3g}",
        f"region means: {report.region_means}",
        "PASS" if passed else "FAIL",
    ])
    return EXIT_OK if passed else EXIT_NUMERIC


def cmd_train(args) -> int:
    cfg = training.load_config(args.config)
    train_ds, val_ds = training.resolve_dataset(cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    model = build_default_model(train_ds.x.shape[1], train_ds.x.shape[2],
                                train_ds.x.shape[3], train_ds.num_classes,
                                RngStream(cfg.seed).substream(0))
    try:
        if cfg.drop.method in masks.PAIR_METHODS:
            rows, best_params = training.train_rblock(model, cfg, train_ds, val_ds)
        else:
            rows, best_params = training.train_single(model, cfg, train_ds, val_ds)
    except training.TrainingDiverged as exc:
        training.save_checkpoint(args.out / "last_good.rblk", model.param_arrays())
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    csv_path = args.out / "metrics.csv"
    training.write_metrics_csv(rows, csv_path)
    training.save_checkpoint(args.out / "final.rblk", model.param_arrays())
    training.save_checkpoint(args.out / "best.rblk", best_params)
    manifest = training.run_manifest(
        cfg, training.dataset_fingerprint(train_ds, val_ds))
    manifest["best_val_acc"] = rows[-1].best_val_acc
    (args.out / "manifest.json").write_text(json.dumps(manifest, indent=2))

    payload = {"metrics": str(csv_path), "best_val_acc": rows[-1].best_val_acc,
               "epochs": cfg.epochs}
    _emit(payload, args.json, [
        f"trained {cfg.drop.method} for {cfg.epochs} epochs",
        f"best val acc = {rows[-1].best_val_acc:.4f}",
        f"wrote {csv_path}",
    ])
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = training.load_config(args.config)
    names = [m.strip() for m in args.methods.split(",") if m.strip()]
    if not names:
        raise _UsageError("--methods must name at least one method")
    specs = []
    for name in names:
        if name not in masks.METHODS and name != "baseline":
            raise _UsageError(f"unknown method {name!r}")
        p = training.COMPARISON_P.get(name, cfg.drop.p)
        specs.append(masks.DropSpec(name, p=p, b_size=cfg.drop.b_size))

    train_ds, val_ds = training.resolve_dataset(cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    try:
        results = training.run_comparison(specs, cfg, train_ds, val_ds)
    except training.TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    stages_path = args.out / "stages.csv"
    training.write_stage_table(results, stages_path)
    manifest = training.run_manifest(
        cfg, training.dataset_fingerprint(train_ds, val_ds), results)
    (args.out / "manifest.json").write_text(json.dumps(manifest, indent=2))

    payload = {"stages": str(stages_path),
               "methods": [{"method": r["method"], "stages": r["stages"]}
                           for r in results]}
    lines = [f"wrote {stages_path}"]
    for res in results:
        stages = "  ".join(f"{s:.4f}" for s in res["stages"])
        lines.append(f"{res['method']:<18} p={res['p']:<4}  {stages}")
    _emit(payload, args.json, lines)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "gamma":
            return cmd_gamma(args)
        if args.command == "mask":
            return cmd_mask_sample(args)
        if args.command == "verify":
            return cmd_verify(args)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "compare":
            return cmd_compare(args)
        raise _UsageError(f"unknown command {args.command!r}")
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CifarFormatError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RuntimeError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
