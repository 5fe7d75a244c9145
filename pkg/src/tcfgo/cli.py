"""Command line entry point: simulate, run, eval, lag-sweep."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import io
from .config import RunConfig, load_config, parse_lag, write_echo
from .eval import (
    align,
    common_epoch_mask,
    format_table,
    interval_mask,
    lag_sweep,
    rmse,
    service_availability,
    TruthTrack,
)

log = logging.getLogger("tcfgo")

AVAILABILITY_THRESHOLDS = [float(x) for x in np.arange(0.5, 50.01, 0.5)]


def _out_dir(path: str) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _with_seed(cfg: RunConfig, seed: Optional[int]) -> RunConfig:
    if seed is None:
        return cfg
    return replace(cfg, scenario=replace(cfg.scenario, seed=int(seed)))


def cmd_simulate(args) -> int:
    from .sim import simulate

    cfg = _with_seed(load_config(args.config), args.seed)
    out = _out_dir(args.output)
    sc = simulate(cfg.scenario)
    imu, gnss, truth = out / "imu.txt", out / "gnss.txt", out / "truth.txt"
    io.write_imu_file(sc.imu, imu)
    io.write_gnss_file(sc.gnss, gnss)
    io.write_truth_file(sc.truth, truth)
    write_echo(replace(cfg, imu=str(imu.resolve()), gnss=str(gnss.resolve()), truth=str(truth.resolve())), out)
    print(f"wrote {len(sc.imu)} IMU samples and {len(sc.gnss)} GNSS epochs to {out}")
    return 0


def _resolve_inputs(cfg: RunConfig, args) -> RunConfig:
    upd = {}
    for name in ("imu", "gnss", "truth"):
        v = getattr(args, name, None)
        if v is not None:
            upd[name] = str(Path(v).resolve())
    if getattr(args, "mode", None):
        upd["mode"] = args.mode
    if getattr(args, "lag", None) is not None:
        upd["estimator"] = replace(cfg.estimator, lag=parse_lag(args.lag))
    return replace(cfg, **upd)


def _run(cfg: RunConfig):
    from .estimator.baseline import run_spp
    from .estimator.pipeline import RunReport, run_dataset

    if cfg.gnss is None:
        raise ValueError("no GNSS input: pass --gnss or set 'gnss' in the config")
    gnss = io.parse_gnss_file(cfg.gnss)
    if cfg.mode == "spp":
        sols = run_spp(gnss, cfg.estimator)
        rep = RunReport(initialized=True, epochs=len(sols), valid=sum(s.status.value == "Valid" for s in sols))
        t = np.array([s.optimization_time for s in sols])
        if t.size:
            rep.mean_opt_time, rep.p95_opt_time, rep.max_opt_time = (float(t.mean()), float(np.percentile(t, 95)),
                                                                     float(t.max()))
        return sols, rep
    if cfg.imu is None:
        raise ValueError("no IMU input: pass --imu or set 'imu' in the config")
    return run_dataset(io.parse_imu_file(cfg.imu), gnss, cfg.estimator)


def cmd_run(args) -> int:
    cfg = _resolve_inputs(_with_seed(load_config(args.config), args.seed), args)
    out = _out_dir(args.output)
    sols, rep = _run(cfg)
    io.write_solution_file(sols, out / "solution.txt", cfg.estimator.constellations, cfg.estimator.record_timing)
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(dict(rep.to_dict(), mode=cfg.mode, lag=cfg.estimator.lag), fh, indent=2, sort_keys=True)
    write_echo(cfg, out)
    if rep.error:
        print(f"error: {rep.error}", file=sys.stderr)
        return 1
    print(f"{rep.valid}/{rep.epochs} valid epochs, mean optimization time {rep.mean_opt_time * 1e3:.1f} ms")
    return 0


def _series(truth: TruthTrack, sol_path):
    tab = io.parse_solution_file(sol_path)
    return align(truth, tab.t, tab.ecef(), tab.valid, tab.opt_time)


def cmd_eval(args) -> int:
    truth = io.parse_truth_file(args.truth)
    series = _series(truth, args.solution)
    keep = np.ones(len(series), dtype=bool)
    if args.mask:
        keep &= interval_mask(series.t, io.parse_mask_file(args.mask))
    if args.common_epochs:
        keep &= common_epoch_mask(series, _series(truth, args.common_epochs))
    sel = series.select(keep)
    avail = service_availability(sel, AVAILABILITY_THRESHOLDS)
    out = _out_dir(args.output)
    metrics = {
        "epochs": len(sel),
        "valid_epochs": int(sel.valid.sum()),
        "rmse2d": rmse(sel, 2),
        "rmse3d": rmse(sel, 3),
        "availability_10m": float(service_availability(sel, [10.0])[0]),
    }
    with open(out / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
    with open(out / "availability.txt", "w", encoding="utf-8") as fh:
        fh.write("# threshold_m fraction\n")
        for tau, a in zip(AVAILABILITY_THRESHOLDS, avail):
            fh.write(f"{tau:.1f} {a:.6f}\n")
    print(f"2D RMSE {metrics['rmse2d']:.3f} m, 3D RMSE {metrics['rmse3d']:.3f} m, "
          f"availability@10m {metrics['availability_10m'] * 100:.1f}%")
    return 0


def cmd_lag_sweep(args) -> int:
    cfg = _resolve_inputs(_with_seed(load_config(args.config), args.seed), args)
    lags = [parse_lag(x) for x in args.lags.split(",") if x.strip()]
    if cfg.imu and cfg.gnss and cfg.truth:
        imu, gnss = io.parse_imu_file(cfg.imu), io.parse_gnss_file(cfg.gnss)
        truth = io.parse_truth_file(cfg.truth)
    else:
        from .sim import simulate

        sc = simulate(cfg.scenario)
        imu, gnss, truth = sc.imu, sc.gnss, TruthTrack.from_ground_truth(sc.truth)
    rows = lag_sweep(imu, gnss, truth, cfg.estimator, lags)
    out = _out_dir(args.output)
    table = format_table(rows)
    (out / "lag_sweep.txt").write_text(table, encoding="utf-8")
    write_echo(cfg, out)
    sys.stdout.write(table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tcfgo", description="Tightly coupled GNSS/IMU fixed-lag smoother")
    p.add_argument("-v", "--verbose", action="store_true", help="log warnings from the estimator")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic scenario")
    s.add_argument("config", nargs="?", help="YAML run config (defaults when omitted)")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("run", help="run the estimator or the SPP baseline")
    r.add_argument("--mode", choices=["tc", "spp"])
    r.add_argument("--lag", help="smoother lag in seconds, or inf for batch")
    r.add_argument("--config")
    r.add_argument("--imu")
    r.add_argument("--gnss")
    r.add_argument("-o", "--output", required=True)
    r.add_argument("--seed", type=int)
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="score a solution file against truth")
    e.add_argument("--truth", required=True)
    e.add_argument("--solution", required=True)
    e.add_argument("--mask", help="file of excluded 't_start t_end' intervals")
    e.add_argument("--common-epochs", help="second solution file; keep epochs valid in both")
    e.add_argument("-o", "--output", required=True)
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("lag-sweep", help="accuracy and timing versus smoother lag")
    w.add_argument("--lags", default="5,15,30,60,inf")
    w.add_argument("--config")
    w.add_argument("--imu")
    w.add_argument("--gnss")
    w.add_argument("--truth")
    w.add_argument("-o", "--output", required=True)
    w.add_argument("--seed", type=int)
    w.set_defaults(func=cmd_lag_sweep)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except Exception as e:  # every failure becomes a diagnostic and a nonzero exit
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
