"""Artifact emission: delimited tables, provenance JSON, and SVG plots.

Every artifact embeds the master seed.  CSV files open with a
`# master_seed: <seed>` comment line followed by a fixed header row;
values are serialized with 17 significant digits so identical runs
produce byte-identical files.  JSON reports carry the resolved config
under a top-level "config" key, which the config loader accepts back
as-is for exact re-runs.  Plots are static SVG with hashing salted and
date metadata stripped, so they are deterministic too.
"""

import json
import sys
from importlib import metadata as _im
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__ as _pkg_version
from .harness import CollapseReport, CompareReport, SweepResult, TuneResult
from .records import TrajectoryRecord

TRAJECTORY_HEADER = ("t, sx, sy, sz, sx2, sy2, sz2, re_xz, im_xz, re_yz, "
                     "im_yz, re_xy, im_xy, ux, uy, uz, dw, V, S_var")
SWEEP_HEADER = ("gain, mean_sx, sigma_sx, mean_sy, sigma_sy, mean_sz, "
                "sigma_sz, n_diverged, n_used")
COMPARE_HEADER = "t, dev_sx, dev_sy, dev_sz, res_xy, res_yz, res_xz"
COLLAPSE_HEADER = "k, eigenvalue, count, born"


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def versions() -> dict:
    out = {
        "python": sys.version.split()[0],
        "spinsteer": _pkg_version,
    }
    for dist in ("numpy", "numba", "matplotlib"):
        try:
            out[dist] = _im.version(dist)
        except _im.PackageNotFoundError:
            out[dist] = None
    return out


def provenance(command: str, raw_config: dict, seed: int, tau0: float,
               artifacts: list) -> dict:
    return {
        "command": command,
        "master_seed": seed,
        "tau0": tau0,
        "versions": versions(),
        "artifacts": artifacts,
        "config": raw_config,
    }


def write_json(path, document: dict) -> None:
    Path(path).write_text(json.dumps(document, indent=2, sort_keys=False,
                                     allow_nan=True) + "\n")


def segment_noise(record: TrajectoryRecord) -> np.ndarray:
    """Wiener increment accumulated between consecutive samples.

    Entry j > 0 sums the integrator's innovations over the stride
    leading up to sample j; entry 0 is zero (nothing precedes t = 0).
    """
    inc = np.asarray(record.innovations, dtype=float)
    starts = np.arange(0, len(inc), record.stride)
    out = np.empty(len(starts) + 1)
    out[0] = 0.0
    out[1:] = np.add.reduceat(inc, starts)
    return out


def write_trajectory_csv(path, record: TrajectoryRecord, seed: int) -> None:
    """Fixed-schema trajectory table; purity column only when tracked."""
    header = TRAJECTORY_HEADER + (", purity" if record.purity is not None else "")
    dw = segment_noise(record)
    var = np.asarray(record.variance, dtype=float)
    if record.lyapunov is not None:
        v = np.asarray(record.lyapunov, dtype=float)
    else:
        v = np.full(len(record.times), np.nan)
    lines = [f"# master_seed: {seed}", header]
    series = record.series
    controls = record.controls
    for j, t in enumerate(record.times):
        row = [t, *series[j, :], *controls[j, :], dw[j], v[j], var[j]]
        if record.purity is not None:
            row.append(record.purity[j])
        lines.append(",".join(_fmt(x) for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


def write_sweep_csv(path, result: SweepResult, seed: int) -> None:
    lines = [f"# master_seed: {seed}", SWEEP_HEADER]
    for i, gain in enumerate(result.gains):
        row = [_fmt(gain)]
        for a in range(3):
            row.append(_fmt(result.mean[i, a]))
            row.append(_fmt(result.sigma[i, a]))
        row.append(str(int(result.n_diverged[i])))
        row.append(str(int(result.n_used[i])))
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def write_compare_csv(path, report: CompareReport, seed: int) -> None:
    lines = [f"# master_seed: {seed}", COMPARE_HEADER]
    for j, t in enumerate(report.times):
        row = [t, *report.deviation[j, :], *report.residual[j, :]]
        lines.append(",".join(_fmt(x) for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


def write_collapse_csv(path, report: CollapseReport, seed: int) -> None:
    lines = [f"# master_seed: {seed}", COLLAPSE_HEADER]
    for k in range(len(report.counts)):
        lines.append(",".join([str(k), _fmt(report.eigenvalues[k]),
                               str(int(report.counts[k])), _fmt(report.born[k])]))
    Path(path).write_text("\n".join(lines) + "\n")


def sweep_report(result: SweepResult) -> dict:
    return {
        "entry": result.entry,
        "engine": result.engine,
        "repetitions": result.repetitions,
        "gains": [float(g) for g in result.gains],
        "mean": result.mean.tolist(),
        "sigma": result.sigma.tolist(),
        "n_diverged": result.n_diverged.tolist(),
        "n_used": result.n_used.tolist(),
    }


def tune_report(result: TuneResult) -> dict:
    from .config import _law_to_raw
    return {
        "law": _law_to_raw(result.law) or {},
        "steady_mean": [float(x) for x in result.steady_mean],
        "residual": float(result.residual),
        "n_evaluations": result.n_evaluations,
        "budget_exhausted": result.budget_exhausted,
        "history": [{"entries": h[0], "value": float(h[1])} for h in result.history],
    }


def compare_report(report: CompareReport) -> dict:
    return {
        "n_trajectories": report.n_trajectories,
        "max_deviation": [float(x) for x in report.max_deviation],
        "max_deviation_overall": report.max_deviation_overall,
        "max_residual": [float(x) for x in report.max_residual],
        "n_diverged_moment": report.n_diverged_moment,
        "n_diverged_sme": report.n_diverged_sme,
        "times": [float(t) for t in report.times],
        "deviation": report.deviation.tolist(),
        "residual": report.residual.tolist(),
    }


def collapse_report(report: CollapseReport) -> dict:
    return {
        "n_trajectories": report.n_trajectories,
        "threshold": report.threshold,
        "tv_distance": report.tv_distance,
        "uncollapsed": report.uncollapsed,
        "uncollapsed_fraction": report.uncollapsed_fraction,
        "eigenvalues": [float(x) for x in report.eigenvalues],
        "counts": report.counts.tolist(),
        "born": [float(x) for x in report.born],
    }


# ---------------------------------------------------------------------------
# plots


def _figure():
    import matplotlib
    matplotlib.use("Agg", force=False)
    matplotlib.rcParams["svg.hashsalt"] = "spinsteer"
    import matplotlib.pyplot as plt
    return plt


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})


def plot_trajectory(path, record: TrajectoryRecord) -> None:
    plt = _figure()
    fig, ax = plt.subplots(figsize=(7, 4))
    for col, label in ((0, "sx"), (1, "sy"), (2, "sz")):
        ax.plot(record.times, record.series[:, col], label=label, lw=0.9)
    ax.set_xlabel("t")
    ax.set_ylabel("normalized spin expectation")
    ax.legend(loc="best")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def plot_sweep(path, result: SweepResult) -> None:
    plt = _figure()
    fig, ax = plt.subplots(figsize=(7, 4))
    for a, label in ((0, "sx"), (1, "sy"), (2, "sz")):
        ax.errorbar(result.gains, result.mean[:, a], yerr=result.sigma[:, a],
                    label=label, marker="o", ms=3, lw=0.9, capsize=2)
    ax.set_xlabel(result.entry)
    ax.set_ylabel("steady-state mean")
    ax.legend(loc="best")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def plot_compare(path, report: CompareReport) -> None:
    plt = _figure()
    fig, ax = plt.subplots(figsize=(7, 4))
    for a, label in ((0, "sx"), (1, "sy"), (2, "sz")):
        ax.plot(report.times, report.deviation[:, a], label=f"|mean dev| {label}",
                lw=0.9)
    ax.set_xlabel("t")
    ax.set_ylabel("ensemble-mean deviation")
    ax.legend(loc="best")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def plot_collapse(path, report: CollapseReport) -> None:
    plt = _figure()
    fig, ax = plt.subplots(figsize=(7, 4))
    n = report.n_trajectories - report.uncollapsed
    frac = report.counts / n if n else report.counts
    ax.bar(report.eigenvalues, frac, width=1.2, label="terminal histogram")
    ax.plot(report.eigenvalues, report.born, "k.-", lw=0.9, ms=4,
            label="initial-state distribution")
    ax.set_xlabel("measured eigenvalue")
    ax.set_ylabel("probability")
    ax.legend(loc="best")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def plot_tune(path, result: TuneResult) -> None:
    plt = _figure()
    fig, ax = plt.subplots(figsize=(7, 4))
    vals = [h[1] for h in result.history]
    best = np.minimum.accumulate(vals)
    ax.plot(range(1, len(vals) + 1), vals, "o", ms=3, label="evaluation")
    ax.step(range(1, len(vals) + 1), best, where="post", lw=0.9, label="best so far")
    ax.set_xlabel("evaluation")
    ax.set_ylabel("residual V")
    ax.set_yscale("log")
    ax.legend(loc="best")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)
