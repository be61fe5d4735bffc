"""Run artifacts: delimited outputs, JSON summaries, and rendered figures.

Every run directory gets the same bundle: trial and event CSVs, per-basis
fringe CSVs, timing-histogram CSVs, a versioned ``summary.json``, the
resolved config echo, and PNG figures rendered next to the delimited files
(time histograms with the signal window marked, fringes with their fits,
and sweep curves).  CSV column schemas are documented in docs/formats.md.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .analysis import (
    FringeDataset,
    VisibilityEstimate,
    fidelity_from_visibilities,
    fit_fringe,
    snr_model,
)
from .config import SCHEMA_VERSION, LinkConfig, write_resolved
from .detection import Histogram, snr_from_histogram
from .sequencer import (
    SessionResult,
    herald_probability,
    repetition_rate_khz,
)


def write_trials_csv(path, trials) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            [
                "trial_id",
                "write_time_us",
                "herald",
                "herald_time_us",
                "basis",
                "setting",
                "delay_us",
                "outcome",
                "flags",
            ]
        )
        for t in trials:
            w.writerow(
                [
                    t.trial_id,
                    f"{t.write_time_us:.3f}",
                    t.herald,
                    f"{t.herald_time_us:.4f}",
                    t.basis,
                    f"{t.setting:.4f}",
                    f"{t.delay_us:.4f}",
                    t.outcome,
                    t.flags,
                ]
            )


def write_events_csv(path, events) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial_id", "channel", "timestamp_ns", "kind"])
        for e in events:
            w.writerow([e.trial_id, e.channel, e.timestamp_ns, e.kind])


def write_histogram_csv(path, hist: Histogram) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# bin_width_ns={hist.bin_width_ns}\n")
        if hist.signal_window_ns is not None:
            lo, hi = hist.signal_window_ns
            fh.write(f"# signal_window_ns={lo},{hi}\n")
        w = csv.writer(fh)
        w.writerow(["bin_start_ns", "count"])
        edges = hist.edges
        for i, c in enumerate(hist.counts):
            w.writerow([f"{edges[i]:.1f}", int(c)])


def read_histogram_csv(path) -> Histogram:
    window = None
    bin_width = 1.0
    starts, counts = [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                if key == "signal_window_ns":
                    lo, hi = val.split(",")
                    window = (float(lo), float(hi))
                elif key == "bin_width_ns":
                    bin_width = float(val)
                continue
            if line.startswith("bin_start_ns"):
                continue
            a, b = line.split(",")
            starts.append(float(a))
            counts.append(int(b))
    return Histogram(
        t0_ns=starts[0] if starts else 0.0,
        bin_width_ns=bin_width,
        counts=np.asarray(counts, dtype=np.int64),
        signal_window_ns=window,
    )


def write_fringe_csv(path, settings, coincidences, singles) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["setting", "coincidences", "singles"])
        for s, c, n in zip(settings, coincidences, singles):
            w.writerow([f"{s:.4f}", int(c), int(n)])


def read_fringe_csv(path) -> FringeDataset:
    settings, coinc, singles = [], [], []
    with open(path) as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            settings.append(float(row["setting"]))
            coinc.append(float(row["coincidences"]))
            singles.append(float(row.get("singles", 0) or 0))
    return FringeDataset(
        np.asarray(settings), np.asarray(coinc), np.asarray(singles) if any(singles) else None
    )


def _safe_snr(hist: Histogram, mode: str) -> float | None:
    try:
        v = snr_from_histogram(hist, mode)
        return None if math.isinf(v) else float(v)
    except ValueError:
        return None


def summarize_session(cfg: LinkConfig, result: SessionResult) -> dict:
    """Fit the fringes and assemble the versioned run summary."""
    visibilities = {}
    for basis, fr in result.fringes.items():
        est = fit_fringe(
            FringeDataset(fr.settings, fr.coincidences, fr.singles),
            excess_sigma_v=cfg.run.visibility_sigma_sys,
        )
        visibilities[basis] = est
    fidelity = None
    fidelity_sigma = None
    if "z" in visibilities and "x" in visibilities:
        fidelity = fidelity_from_visibilities(visibilities["z"].v, visibilities["x"].v)
        fidelity_sigma = (
            math.sqrt(visibilities["z"].sigma_v ** 2 + 4.0 * visibilities["x"].sigma_v ** 2)
            / 4.0
        )
    summary = {
        "schema_version": SCHEMA_VERSION,
        "seed": result.seed,
        "trials": result.n_trials,
        "heralds": result.n_heralds,
        "noise_heralds": result.n_noise_heralds,
        "herald_rate": result.herald_rate,
        "herald_rate_model": herald_probability(cfg),
        "repetition_rate_khz": repetition_rate_khz(cfg),
        "readout_delay_us": result.schedule.readout_delay_us,
        "cycles_per_load": result.schedule.cycles_per_load,
        "visibility": {
            b: {
                "v": est.v,
                "sigma_v": est.sigma_v,
                "sigma_stat": est.sigma_stat,
                "period": est.period,
                "offset": est.offset,
                "phase": est.phase,
            }
            for b, est in visibilities.items()
        },
        "fidelity": fidelity,
        "fidelity_sigma": fidelity_sigma,
        "snr": {
            "writeout_full_width": _safe_snr(result.writeout_hist, "full_width"),
            "writeout_fwhm": _safe_snr(result.writeout_hist, "fwhm"),
            "readout_full_width": _safe_snr(result.readout_hist, "full_width"),
        },
    }
    return summary


def plot_histogram(hist: Histogram, path, title: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    edges = hist.edges
    ax.step(edges[:-1], np.maximum(hist.counts, 0.5), where="post", lw=0.8)
    ax.set_yscale("log")
    if hist.signal_window_ns is not None:
        for x in hist.signal_window_ns:
            ax.axvline(x, color="red", lw=1.0)
    ax.set_xlabel("time (ns)")
    ax.set_ylabel("counts per bin")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_fringe(
    settings, coincidences, est: VisibilityEstimate, path, xlabel: str, title: str
) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    yerr = np.sqrt(np.maximum(coincidences, 1.0))
    ax.errorbar(settings, coincidences, yerr=yerr, fmt="o", ms=4, capsize=2)
    xs = np.linspace(min(settings), max(settings), 400)
    ys = est.offset * (1.0 + est.v * np.cos(2.0 * math.pi * xs / est.period + est.phase))
    ax.plot(xs, ys, "-", lw=1.2)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("coincidences")
    ax.set_title(f"{title}  V = {est.v:.3f} ± {est.sigma_v:.3f}")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_sweep(rows: list, path, axis_label: str) -> None:
    fig, ax1 = plt.subplots(figsize=(6, 4))
    xs = [r["value"] for r in rows]
    f_vals = [r["fidelity"] for r in rows]
    ax1.plot(xs, f_vals, "rs-", label="fidelity")
    ax1.set_xlabel(axis_label)
    ax1.set_ylabel("fidelity", color="r")
    ax1.set_ylim(0.0, 1.0)
    ax2 = ax1.twinx()
    snr_sim = [r["snr_sim"] for r in rows]
    snr_mod = [r["snr_model"] for r in rows]
    if any(v is not None for v in snr_sim):
        ax2.plot(xs, snr_sim, "g^", label="SNR (sim)")
    ax2.plot(xs, snr_mod, "g--", label="SNR (model)")
    ax2.set_yscale("log")
    ax2.set_ylabel("SNR", color="g")
    fig.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_run_artifacts(
    cfg: LinkConfig, result: SessionResult, out_dir, figures: bool = True
) -> dict:
    """Write the full artifact bundle for one session; returns the summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out / "resolved.cfg")
    write_trials_csv(out / "trials.csv", result.trials)
    write_events_csv(out / "events.csv", result.events)
    write_histogram_csv(out / "histogram_writeout.csv", result.writeout_hist)
    write_histogram_csv(out / "histogram_readout.csv", result.readout_hist)
    for basis, fr in result.fringes.items():
        write_fringe_csv(out / f"fringe_{basis}.csv", fr.settings, fr.coincidences, fr.singles)
    summary = summarize_session(cfg, result)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if figures:
        plot_histogram(result.writeout_hist, out / "histogram_writeout.png", "write-out photons")
        plot_histogram(result.readout_hist, out / "histogram_readout.png", "read-out photons")
        for basis, fr in result.fringes.items():
            est_info = summary["visibility"][basis]
            est = VisibilityEstimate(
                v=est_info["v"],
                sigma_v=est_info["sigma_v"],
                phase=est_info["phase"],
                offset=est_info["offset"],
                period=est_info["period"],
            )
            xlabel = "HWP angle (deg)" if basis == "z" else "extra readout delay (us)"
            plot_fringe(
                fr.settings,
                fr.coincidences,
                est,
                out / f"fringe_{basis}.png",
                xlabel,
                f"{basis}-basis fringe",
            )
    return summary


def write_sweep_csv(path, rows: list) -> None:
    cols = [
        "value",
        "fidelity",
        "fidelity_sigma",
        "snr_sim",
        "snr_model",
        "rep_rate_khz",
        "herald_rate",
    ]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow(["" if r[c] is None else r[c] for c in cols])
