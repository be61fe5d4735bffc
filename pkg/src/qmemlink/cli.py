"""Command-line entry point: run, sweep, fit, analyze.

Exit codes: 0 success, 1 usage error, 2 config/data validation error,
3 runtime failure.  The default output directory comes from --out, falling
back to the QMEMLINK_OUT environment variable, then ./qmemlink_out.
"""

from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .analysis import (
    FitError,
    FringeDataset,
    fidelity_from_visibilities,
    fit_decay,
    fit_efficiency_curve,
    fit_fringe,
    fit_snr_model,
    snr_model,
)
from .config import ConfigError, LinkConfig, load_config
from . import report
from .sequencer import run_session, repetition_rate_khz, herald_probability


class UsageError(Exception):
    pass


class SchemaError(ValueError):
    """Raised when an input data file does not match its documented schema."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="qmemlink", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    run_p = sub.add_parser("run", help="simulate one session and write artifacts")
    run_p.add_argument("--config", required=True)
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--out", default=None)
    run_p.add_argument("--trials", type=int, default=None)
    run_p.add_argument("--duration-s", type=float, default=None)
    run_p.add_argument("--no-figures", action="store_true")

    sweep_p = sub.add_parser("sweep", help="scan one axis and tabulate F/SNR/rate")
    sweep_p.add_argument("--config", required=True)
    sweep_p.add_argument("--axis", required=True)
    sweep_p.add_argument("--values", required=True, help="comma-separated list")
    sweep_p.add_argument("--trials", type=int, default=None)
    sweep_p.add_argument("--seed", type=int, default=None)
    sweep_p.add_argument("--out", default=None)
    sweep_p.add_argument("--no-figures", action="store_true")

    fit_p = sub.add_parser("fit", help="fit a model to a CSV dataset")
    fit_p.add_argument("--kind", required=True, choices=["snr", "decay", "dfg", "fringe"])
    fit_p.add_argument("--data", required=True)
    fit_p.add_argument("--out", default=None)
    fit_p.add_argument("--crystal-length-mm", type=float, default=50.0)
    fit_p.add_argument("--period", type=float, default=None, help="fix the fringe period")
    fit_p.add_argument("--no-figures", action="store_true")

    an_p = sub.add_parser("analyze", help="re-fit the artifacts of a finished run")
    an_p.add_argument("--run-dir", required=True)
    an_p.add_argument("--no-figures", action="store_true")
    return parser


def _out_dir(arg) -> Path:
    out = arg or os.environ.get("QMEMLINK_OUT") or "qmemlink_out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _read_columns(path, columns, optional=()):
    """Read numeric columns from a CSV, naming any schema violation."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise SchemaError(f"cannot read data file {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in columns:
            if col not in header:
                raise SchemaError(f"{path}: missing required column '{col}'")
        out = {c: [] for c in (*columns, *optional)}
        for i, row in enumerate(reader, start=2):
            for c in columns:
                try:
                    out[c].append(float(row[c]))
                except (TypeError, ValueError) as exc:
                    raise SchemaError(
                        f"{path}: column '{c}' has non-numeric value on line {i}"
                    ) from exc
            for c in optional:
                if c in (reader.fieldnames or []) and row.get(c) not in (None, ""):
                    out[c].append(float(row[c]))
    return {k: np.asarray(v) for k, v in out.items() if v}


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out = _out_dir(args.out)
    result = run_session(
        cfg,
        n_trials=args.trials,
        duration_s=args.duration_s,
        rng_seed=cfg.seed,
    )
    summary = report.write_run_artifacts(cfg, result, out, figures=not args.no_figures)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


_SWEEP_AXES = ("fiber_length", "pump_power", "delay")


def _apply_axis(cfg: LinkConfig, axis: str, value: float) -> LinkConfig:
    cfg2 = copy.deepcopy(cfg)
    if axis == "fiber_length":
        cfg2.fiber.length_km = value
    elif axis == "pump_power":
        cfg2.qfc.pump_power_w = value
    elif axis == "delay":
        cfg2.fiber.delay_offset_us = value
    return cfg2


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.axis not in _SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {args.axis!r}; expected one of {_SWEEP_AXES}")
    values = [float(v) for v in args.values.split(",") if v.strip() != ""]
    out = _out_dir(args.out)
    rows = []
    for idx, value in enumerate(values):
        cfg2 = _apply_axis(cfg, args.axis, value)
        cfg2.validate()
        seed = int(np.random.SeedSequence((cfg.seed, idx)).generate_state(1)[0])
        result = run_session(
            cfg2,
            n_trials=args.trials,
            rng_seed=seed,
            collect_trials=False,
            collect_events=False,
        )
        try:
            summary = report.summarize_session(cfg2, result)
            fidelity = summary["fidelity"]
            fidelity_sigma = summary["fidelity_sigma"]
            snr_sim = summary["snr"]["writeout_full_width"]
        except FitError:
            fidelity = fidelity_sigma = snr_sim = None
        model_len = value if args.axis == "fiber_length" else cfg2.fiber.length_km
        rows.append(
            {
                "value": value,
                "fidelity": fidelity,
                "fidelity_sigma": fidelity_sigma,
                "snr_sim": snr_sim,
                "snr_model": snr_model(model_len, cfg.snr_model),
                "rep_rate_khz": repetition_rate_khz(cfg2),
                "herald_rate": result.herald_rate,
            }
        )
    report.write_sweep_csv(out / "sweep.csv", rows)
    if rows and not args.no_figures:
        report.plot_sweep(rows, out / "sweep.png", args.axis)
    print(f"wrote {out / 'sweep.csv'} with {len(rows)} rows")
    return 0


def cmd_fit(args) -> int:
    out = _out_dir(args.out)
    kind = args.kind
    if kind == "snr":
        data = _read_columns(args.data, ["length_km", "snr"])
        res = fit_snr_model(data["length_km"], data["snr"])
        payload = {
            "kind": kind,
            "params": dataclasses.asdict(res.params),
            "cov_diag": list(np.asarray(res.cov_diag, dtype=float)),
            "residual_norm": res.residual_norm,
            "converged": res.converged,
        }
        if not args.no_figures:
            _plot_curve_fit(
                out / "fit_snr.png",
                data["length_km"],
                data["snr"],
                lambda x: snr_model(x, res.params),
                "fiber length (km)",
                "SNR",
                logy=True,
            )
    elif kind == "decay":
        data = _read_columns(args.data, ["time_us", "efficiency"])
        res = fit_decay(data["time_us"], data["efficiency"])
        payload = {
            "kind": kind,
            "eta0": res.eta0,
            "tau_us": res.tau_us,
            "shape": res.shape,
            "per_shape": res.per_shape,
        }
        if not args.no_figures:
            if res.shape == "gaussian":
                model = lambda t: res.eta0 * np.exp(-((t / res.tau_us) ** 2))
            else:
                model = lambda t: res.eta0 * np.exp(-t / res.tau_us)
            _plot_curve_fit(
                out / "fit_decay.png",
                data["time_us"],
                data["efficiency"],
                model,
                "storage time (us)",
                "retrieval efficiency",
            )
    elif kind == "dfg":
        data = _read_columns(args.data, ["power_w", "efficiency"])
        res = fit_efficiency_curve(
            data["power_w"], data["efficiency"], crystal_length_mm=args.crystal_length_mm
        )
        p_peak = (
            (math.pi / 2.0) ** 2 / (res.alpha_nor * args.crystal_length_mm**2)
            if res.alpha_nor > 0.0
            else None
        )
        payload = {
            "kind": kind,
            "eta_max": res.eta_max,
            "alpha_nor": res.alpha_nor,
            "p_peak_w": p_peak,
            "residual_norm": res.residual_norm,
        }
        if not args.no_figures:
            model = lambda p: res.eta_max * np.sin(
                np.sqrt(res.alpha_nor * p) * args.crystal_length_mm
            ) ** 2
            _plot_curve_fit(
                out / "fit_dfg.png",
                data["power_w"],
                data["efficiency"],
                model,
                "pump power (W)",
                "external efficiency",
            )
    else:  # fringe
        data = _read_columns(args.data, ["setting", "coincidences"], optional=["singles"])
        ds = FringeDataset(data["setting"], data["coincidences"], data.get("singles"))
        est = fit_fringe(ds, period=args.period)
        payload = {
            "kind": kind,
            "v": est.v,
            "sigma_v": est.sigma_v,
            "period": est.period,
            "phase": est.phase,
            "offset": est.offset,
        }
        if not args.no_figures:
            report.plot_fringe(
                ds.settings, ds.coincidences, est, out / "fit_fringe.png", "setting", "fringe fit"
            )
    path = out / f"fit_{kind}.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _plot_curve_fit(path, x, y, model, xlabel, ylabel, logy=False):
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(x, y, "o", ms=4, label="data")
    xs = np.linspace(float(np.min(x)), float(np.max(x)), 400)
    ax.plot(xs, model(xs), "-", lw=1.2, label="fit")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def cmd_analyze(args) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise ConfigError(f"run directory {run_dir} does not exist")
    cfg_path = run_dir / "resolved.cfg"
    cfg = load_config(cfg_path) if cfg_path.exists() else LinkConfig()
    summary = {"schema_version": 1, "source": str(run_dir)}
    old = run_dir / "summary.json"
    if old.exists():
        with open(old) as fh:
            prev = json.load(fh)
        for key in ("trials", "heralds", "herald_rate", "seed"):
            if key in prev:
                summary[key] = prev[key]
    visibilities = {}
    for basis in ("z", "x"):
        path = run_dir / f"fringe_{basis}.csv"
        if not path.exists():
            continue
        ds = report.read_fringe_csv(path)
        est = fit_fringe(ds, excess_sigma_v=cfg.run.visibility_sigma_sys)
        visibilities[basis] = est
        if not args.no_figures:
            xlabel = "HWP angle (deg)" if basis == "z" else "extra readout delay (us)"
            report.plot_fringe(
                ds.settings,
                ds.coincidences,
                est,
                run_dir / f"fringe_{basis}.png",
                xlabel,
                f"{basis}-basis fringe",
            )
    summary["visibility"] = {
        b: {"v": e.v, "sigma_v": e.sigma_v, "period": e.period} for b, e in visibilities.items()
    }
    if "z" in visibilities and "x" in visibilities:
        summary["fidelity"] = fidelity_from_visibilities(
            visibilities["z"].v, visibilities["x"].v
        )
        summary["fidelity_sigma"] = (
            math.sqrt(visibilities["z"].sigma_v ** 2 + 4.0 * visibilities["x"].sigma_v ** 2)
            / 4.0
        )
    snrs = {}
    for name in ("writeout", "readout"):
        path = run_dir / f"histogram_{name}.csv"
        if path.exists():
            hist = report.read_histogram_csv(path)
            snrs[f"{name}_full_width"] = report._safe_snr(hist, "full_width")
            snrs[f"{name}_fwhm"] = report._safe_snr(hist, "fwhm")
            if not args.no_figures:
                report.plot_histogram(hist, run_dir / f"histogram_{name}.png", f"{name} photons")
    summary["snr"] = snrs
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    if getattr(args, "command", None) is None:
        parser.print_help()
        return 1
    handlers = {"run": cmd_run, "sweep": cmd_sweep, "fit": cmd_fit, "analyze": cmd_analyze}
    try:
        return handlers[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, SchemaError, FitError, ValueError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - map anything else to the runtime code
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
