"""Command line entry point.

Exit codes: 0 success, 2 invalid scenario or options, 3 failure while running.
The default output directory is ``$MAVPICK_OUT`` or ``./out``.
"""
from __future__ import annotations

import json
import os
import sys
import time
from pathlib import Path

import click

from . import kernels
from .geometry import CameraIntrinsics
from .sim import BUILTINS, ConfigInvalid, load, run as sim_run
from .sim.runner import detection_map, detection_map_summary, write_detection_map

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
OUT_ENV = "MAVPICK_OUT"


def default_out() -> str:
    return os.environ.get(OUT_ENV, "out")


def _summary(metrics: dict) -> str:
    keys = ("scenario", "seed", "sim_time", "objects_delivered", "object_count",
            "min_pairwise_distance", "coverage_fraction", "fused_rmse_median",
            "odometry_rmse_median", "cells", "blank")
    return "\n".join(f"{k}: {metrics[k]}" for k in keys if k in metrics)


@click.group()
def cli():
    """Multi-MAV search, pick-up and delivery simulator."""


@cli.command("run")
@click.option("--scenario", required=True, help="Built-in name or path to a scenario JSON file.")
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help=f"Output directory (default: ${OUT_ENV} or ./out).")
@click.option("--quiet", is_flag=True, help="Do not print the metrics summary.")
def cmd_run(scenario, seed, out, quiet):
    """Run a scenario and write logs plus metrics.json."""
    out = Path(out or default_out())
    try:
        cfg = load(scenario, seed)
    except ConfigInvalid as exc:
        for path, msg in exc.errors:
            click.echo(f"config error: {path}: {msg}", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        click.echo(f"cannot create output directory {out}: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    t0 = time.perf_counter()
    try:
        metrics, _ = sim_run(cfg, out)
    except Exception as exc:  # noqa: BLE001 - any failure maps to the runtime exit code
        click.echo(f"run failed: {type(exc).__name__}: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    if not quiet:
        click.echo(_summary(metrics))
        click.echo(f"wall_time: {time.perf_counter() - t0:.2f} s ({kernels.BACKEND} kernels)")
        click.echo(f"outputs: {out}")
    sys.exit(EXIT_OK)


@cli.command("list")
def cmd_list():
    """List the built-in scenarios."""
    for name in BUILTINS:
        cfg = load(name)
        click.echo(f"{name:14s} {cfg.data.get('description', '')}")


@cli.command("detection-map")
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help=f"Output directory (default: ${OUT_ENV} or ./out).")
@click.option("--altitude", "altitudes", type=float, multiple=True,
              help="Altitude in metres; repeat for several (default 5, 7.5, 10).")
@click.option("--grid", nargs=2, type=int, default=(8, 6), show_default=True,
              help="Cells across and down the image.")
@click.option("--vignetting", type=click.FloatRange(0.0, 1.0), default=0.8, show_default=True)
@click.option("--quiet", is_flag=True)
def cmd_detection_map(out, altitudes, grid, vignetting, quiet):
    """Write detection_map.csv: 3D error per image cell and altitude (blank = missed)."""
    out = Path(out or default_out())
    if any(z <= 0 for z in altitudes) or min(grid) < 1:
        click.echo("config error: altitudes and grid must be positive", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        out.mkdir(parents=True, exist_ok=True)
        k = CameraIntrinsics.centered(500.0, 640, 480)
        rows = detection_map(k, altitudes or (5.0, 7.5, 10.0), grid, vignetting)
        write_detection_map(rows, out / "detection_map.csv")
        summary = detection_map_summary(rows, grid)
        (out / "metrics.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    except Exception as exc:  # noqa: BLE001
        click.echo(f"run failed: {type(exc).__name__}: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    if not quiet:
        click.echo(_summary(summary))
        click.echo(f"outputs: {out}")


def main(argv=None):
    cli.main(args=argv, prog_name="mavpick")


if __name__ == "__main__":
    main()
