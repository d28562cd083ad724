"""Command-line entry points: run scenarios, reproduce the comparison
tables, and render figures from run logs.

Examples:

    muacp run --scenario scenarios/lane3.json --mode muacp --seeds 0..19
    muacp reproduce-table1 --out runs/table1 --seeds 20
    muacp plot runs/table1/logs/episode_muacp_seed0.jsonl --out figs/
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from .presets import comparison_scenario, formation_scenario
from .report import render_plots, write_metrics
from .scenario import MODES, ScenarioConfig, ScenarioError, load_scenario
from .sim import compute_metrics, episode_to_jsonl, run_episode
from .uncertainty import UncertaintySettings

log = logging.getLogger("muacp")


@dataclass
class RunManifest:
    """One batch of episodes: scenario x mode x seeds x sweep grids."""

    scenario: Path
    mode: str
    seeds: list[int]
    out_dir: Path
    sigma_grid: list[float] = field(default_factory=list)
    rho_grid: list[float] = field(default_factory=list)
    rain_grid: list[float] = field(default_factory=list)
    workers: int = 0

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ScenarioError("seed list must be nonempty")


def parse_seeds(text: str) -> list[int]:
    """'a..b' inclusive range, comma list, or a bare count N -> 0..N-1."""
    text = text.strip()
    if ".." in text:
        a, b = text.split("..", 1)
        lo, hi = int(a), int(b)
        if hi < lo:
            raise ValueError("seed range end below start")
        return list(range(lo, hi + 1))
    if "," in text:
        return [int(s) for s in text.split(",") if s.strip()]
    n = int(text)
    return list(range(n))


def _parse_grid(text: str | None) -> list[float]:
    if text is None:
        return []
    return [float(v) for v in text.split(",") if v.strip()]


def _with_overrides(
    cfg: ScenarioConfig, sigma: float | None, rho: float | None, rain: float | None
) -> ScenarioConfig:
    u = cfg.uncertainty
    changed = UncertaintySettings(
        perception_ranges=u.perception_ranges,
        confidence_model=u.confidence_model,
        confidence=u.confidence if rho is None else rho,
        decay_range_max=u.decay_range_max,
        sigma=u.sigma if sigma is None else sigma,
        rain=u.rain if rain is None else rain,
        alpha_base=u.alpha_base,
        alpha_proportional=u.alpha_proportional,
        epsilon=u.epsilon,
        perception_hold_steps=u.perception_hold_steps,
    )
    from dataclasses import replace

    return replace(cfg, uncertainty=changed)


def _episode_job(args):
    cfg, seed, mode = args
    return run_episode(cfg, seed=seed, mode=mode)


def run_batch(cfg: ScenarioConfig, seeds: list[int], mode: str, workers: int = 0):
    """Run episodes over seeds, serially or on a worker pool.

    Results come back ordered by seed either way, so metrics are
    independent of the execution schedule.
    """
    jobs = [(cfg, seed, mode) for seed in seeds]
    if workers and workers > 1 and len(jobs) > 1:
        ctx = get_context("spawn")
        with ctx.Pool(processes=workers) as pool:
            results = pool.map(_episode_job, jobs)
    else:
        results = [_episode_job(j) for j in jobs]
    return results


def cmd_run(manifest: RunManifest) -> int:
    try:
        base = load_scenario(manifest.scenario)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = manifest.out_dir
    out.mkdir(parents=True, exist_ok=True)
    grids = [
        (s, r, w)
        for s in (manifest.sigma_grid or [None])
        for r in (manifest.rho_grid or [None])
        for w in (manifest.rain_grid or [None])
    ]
    rows = []
    for sigma, rho, rain in grids:
        cfg = _with_overrides(base, sigma, rho, rain)
        tag_parts = []
        if sigma is not None:
            tag_parts.append(f"sigma{sigma:g}")
        if rho is not None:
            tag_parts.append(f"rho{rho:g}")
        if rain is not None:
            tag_parts.append(f"rain{rain:g}")
        tag = "_".join(tag_parts)
        log_dir = out / "logs" / tag if tag else out / "logs"
        log_dir.mkdir(parents=True, exist_ok=True)
        log.info("running %d episodes mode=%s %s", len(manifest.seeds), manifest.mode, tag)
        results = run_batch(cfg, manifest.seeds, manifest.mode, manifest.workers)
        for seed, res in zip(manifest.seeds, results):
            path = log_dir / f"episode_{manifest.mode}_seed{seed}.jsonl"
            path.write_text(episode_to_jsonl(res, cfg))
        row = {"scenario": Path(manifest.scenario).stem, "mode": manifest.mode}
        if tag:
            row["scenario"] += f"_{tag}"
        row.update(compute_metrics(results))
        rows.append(row)
    paths = write_metrics(rows, out)
    from .report import metrics_text

    sys.stdout.write(metrics_text(rows))
    log.info("wrote %s", ", ".join(str(p) for p in paths))
    return 0


def cmd_reproduce_table1(out_dir: Path, seeds: list[int], workers: int = 0,
                         write_logs: bool = True) -> int:
    """Quantitative comparison: 3-AV and 6-AV tables over all modes."""
    out_dir.mkdir(parents=True, exist_ok=True)
    all_rows = []
    for n_av in (3, 6):
        rows = []
        for mode in MODES:
            cfg = comparison_scenario(n_av, mode=mode)
            log.info("table: %d-AV %s over %d seeds", n_av, mode, len(seeds))
            results = run_batch(cfg, seeds, mode, workers)
            if write_logs:
                log_dir = out_dir / "logs" / f"{n_av}av"
                log_dir.mkdir(parents=True, exist_ok=True)
                for seed, res in zip(seeds, results):
                    (log_dir / f"episode_{mode}_seed{seed}.jsonl").write_text(
                        episode_to_jsonl(res, cfg)
                    )
            row = {"scenario": f"{n_av}av", "mode": mode}
            row.update(compute_metrics(results))
            rows.append(row)
        write_metrics(rows, out_dir, stem=f"table_{n_av}av")
        all_rows.extend(rows)
    from .report import metrics_text

    sys.stdout.write(metrics_text(all_rows))
    write_metrics(all_rows, out_dir, stem="table_all")
    return 0


def cmd_plot(log_paths: list[Path], out_dir: Path) -> int:
    try:
        written = render_plots(log_paths, out_dir)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for p in written:
        print(p)
    return 0


def cmd_write_scenarios(out_dir: Path) -> int:
    from .presets import write_preset_files

    for p in write_preset_files(out_dir):
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="muacp",
        description="Uncertainty-aware cooperative lane-change planning and simulation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario over seeds, write logs and metrics")
    p_run.add_argument("--scenario", required=True, type=Path)
    p_run.add_argument("--mode", choices=MODES, default=None,
                       help="planning mode; defaults to the scenario's mode")
    p_run.add_argument("--seeds", default="1", help="'a..b', comma list, or count N")
    p_run.add_argument("--sigma", default=None, help="connectivity probability (comma list sweeps)")
    p_run.add_argument("--rho", default=None, help="detector confidence (comma list sweeps)")
    p_run.add_argument("--rain", default=None, help="rain rate (comma list sweeps)")
    p_run.add_argument("--out", type=Path, default=Path("runs/out"))
    p_run.add_argument("--workers", type=int, default=0,
                       help="worker processes; 0 = serial, default available parallelism via -1")

    p_tab = sub.add_parser("reproduce-table1", help="3-AV and 6-AV mode comparison tables")
    p_tab.add_argument("--out", type=Path, default=Path("runs/table1"))
    p_tab.add_argument("--seeds", default="20")
    p_tab.add_argument("--workers", type=int, default=0)
    p_tab.add_argument("--no-logs", action="store_true", help="skip per-episode logs")

    p_plot = sub.add_parser("plot", help="render SVG figures from episode logs")
    p_plot.add_argument("logs", nargs="+", type=Path)
    p_plot.add_argument("--out", type=Path, default=Path("figs"))

    p_scn = sub.add_parser("write-scenarios", help="write the bundled preset scenario files")
    p_scn.add_argument("--out", type=Path, default=Path("scenarios"))
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("MUACP_LOG_LEVEL", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    workers = getattr(args, "workers", 0)
    if workers == -1:
        workers = os.cpu_count() or 1
    try:
        if args.command == "run":
            scenario = args.scenario
            mode = args.mode
            if mode is None:
                mode = load_scenario(scenario).mode
            manifest = RunManifest(
                scenario=scenario,
                mode=mode,
                seeds=parse_seeds(args.seeds),
                out_dir=args.out,
                sigma_grid=_parse_grid(args.sigma),
                rho_grid=_parse_grid(args.rho),
                rain_grid=_parse_grid(args.rain),
                workers=workers,
            )
            return cmd_run(manifest)
        if args.command == "reproduce-table1":
            return cmd_reproduce_table1(
                args.out, parse_seeds(args.seeds), workers, write_logs=not args.no_logs
            )
        if args.command == "plot":
            return cmd_plot(args.logs, args.out)
        if args.command == "write-scenarios":
            return cmd_write_scenarios(args.out)
    except (ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
