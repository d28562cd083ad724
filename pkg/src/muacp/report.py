"""Report rendering: figures from episode logs and metric tables.

Figures render through matplotlib to standalone SVG files.  Outputs are
pure functions of their inputs: the SVG hash salt is pinned and date
metadata stripped, so re-running a report overwrites byte-identical
files.  Metric tables are written as JSON, CSV, and aligned plain text.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "muacp"

import matplotlib.pyplot as plt
import numpy as np

PLOT_NAMES = ("trajectory", "acceleration", "steering", "velocity", "heading")


class ReportError(ValueError):
    pass


def read_episode_log(path: str | Path) -> dict:
    """Parse one JSON-lines episode log into arrays."""
    path = Path(path)
    meta = None
    steps = []
    result = None
    with path.open() as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec.get("type") == "meta":
                meta = rec
            elif rec.get("type") == "step":
                steps.append(rec)
            elif rec.get("type") == "result":
                result = rec
    if meta is None or not steps:
        raise ReportError(f"log {path} has no meta/step records")
    states = np.array([s["states"] for s in steps])  # (T, K, 4)
    inputs = np.array([s["inputs"] for s in steps])  # (T, K, 2)
    return {
        "meta": meta,
        "states": states,
        "inputs": inputs,
        "result": result,
        "dt": float(meta["dt"]),
        "label": f"{meta.get('mode', '?')}-seed{meta.get('seed', '?')}",
    }


def _save(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def render_plots(log_paths: list[str | Path], out_dir: str | Path) -> list[Path]:
    """Five SVG figures per run directory; multiple logs are overlaid.

    Returns the written paths: trajectory (x-y), acceleration, steering,
    velocity, and heading against time.
    """
    logs = [read_episode_log(p) for p in log_paths]
    if not logs:
        raise ReportError("no logs given")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    fig, ax = plt.subplots(figsize=(7, 4))
    for log in logs:
        K = log["states"].shape[1]
        for k in range(K):
            suffix = f" [{log['label']}]" if len(logs) > 1 else ""
            ax.plot(log["states"][:, k, 0], log["states"][:, k, 1], label=f"AV {k}{suffix}")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title("Trajectories")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    path = out_dir / "trajectory.svg"
    _save(fig, path)
    written.append(path)

    channels = [
        ("acceleration", "inputs", 0, "a [m/s^2]"),
        ("steering", "inputs", 1, "delta [rad]"),
        ("velocity", "states", 3, "v [m/s]"),
        ("heading", "states", 2, "phi [rad]"),
    ]
    for name, source, idx, ylabel in channels:
        fig, ax = plt.subplots(figsize=(7, 4))
        for log in logs:
            data = log[source]
            t = np.arange(data.shape[0]) * log["dt"]
            for k in range(data.shape[1]):
                suffix = f" [{log['label']}]" if len(logs) > 1 else ""
                ax.plot(t, data[:, k, idx], label=f"AV {k}{suffix}")
        ax.set_xlabel("t [s]")
        ax.set_ylabel(ylabel)
        ax.set_title(name.capitalize())
        ax.legend(fontsize=8)
        ax.grid(alpha=0.3)
        path = out_dir / f"{name}.svg"
        _save(fig, path)
        written.append(path)
    return written


METRIC_COLUMNS = (
    "scenario",
    "mode",
    "episodes",
    "success_rate",
    "navigation_time_s",
    "mean_velocity",
    "mean_heading",
    "collisions",
    "backup_steps",
)


def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def metrics_text(rows: list[dict]) -> str:
    """Aligned plain-text table over METRIC_COLUMNS."""
    table = [[_fmt(r.get(c)) for c in METRIC_COLUMNS] for r in rows]
    widths = [
        max(len(METRIC_COLUMNS[i]), *(len(row[i]) for row in table)) if table else len(METRIC_COLUMNS[i])
        for i in range(len(METRIC_COLUMNS))
    ]
    lines = ["  ".join(c.ljust(w) for c, w in zip(METRIC_COLUMNS, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in table:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


def metrics_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=METRIC_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({c: ("" if r.get(c) is None else r.get(c)) for c in METRIC_COLUMNS})
    return buf.getvalue()


def write_metrics(rows: list[dict], out_dir: str | Path, stem: str = "metrics") -> list[Path]:
    """Write the metric table as JSON, CSV, and aligned text."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    p = out_dir / f"{stem}.json"
    p.write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    paths.append(p)
    p = out_dir / f"{stem}.csv"
    p.write_text(metrics_csv(rows))
    paths.append(p)
    p = out_dir / f"{stem}.txt"
    p.write_text(metrics_text(rows))
    paths.append(p)
    return paths
