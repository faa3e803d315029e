"""Command-line front end: run configuration, optimization modes and export
of plot-ready artifacts (racing line, speed trace, g-g-v, convergence, energy
comparison). Plot emission is file-based (SVG); outputs are deterministic for
identical configs and seeds."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "apexcvx"
import matplotlib.pyplot as plt

from . import energy as energy_mod
from .baseline import apex_speed_profile, min_curvature_line
from .conic import SolverTolerances
from .scp import SCPConfig, SolveReport, report_channels, solve_fixed_trajectory, \
    solve_min_lap_time
from .track import (PathState, TrackRibbon, TrackError, differentiate_ribbon,
                    fd_matrices, load_track, make_test_track, resample_track,
                    save_track, curvature, trajectory_derivatives)
from .transcription import TranscriptionError
from .vehicle import VehicleError, VehicleParams, default_vehicle, ggv_envelope, \
    load_vehicle

log = logging.getLogger("apexcvx")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_NO_CONVERGENCE = 4

MODES = ("min-time", "fixed-line", "min-curvature", "apex", "ggv", "energy")


class ConfigError(ValueError):
    pass


def _fmt(x) -> str:
    return repr(float(x))


def write_csv(path: Path, columns: dict) -> None:
    """Column-dict CSV with repr floats, LF endings, documented header."""
    keys = list(columns)
    n = len(next(iter(columns.values())))
    with open(path, "w", newline="\n") as f:
        f.write(",".join(keys) + "\n")
        for i in range(n):
            f.write(",".join(_fmt(columns[k][i]) for k in keys) + "\n")


def _read_csv(path: Path) -> dict:
    with open(path) as f:
        header = f.readline().strip().split(",")
        rows = [line.strip().split(",") for line in f if line.strip()]
    data = np.array([[float(v) for v in row] for row in rows])
    return {k: data[:, j] for j, k in enumerate(header)}


def _error_json(out_dir: Path, code: int, kind: str, message: str) -> int:
    payload = {"error": kind, "message": message, "exit_code": code}
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "error.json").write_text(json.dumps(payload) + "\n")
    except OSError:
        pass
    print(json.dumps(payload), file=sys.stderr)
    return code


def _load_inputs(args) -> tuple[TrackRibbon, VehicleParams]:
    if args.track is None:
        raise ConfigError("--track is required for this mode")
    track = load_track(args.track)
    params = load_vehicle(args.vehicle) if args.vehicle else default_vehicle()
    return track, params


def _config_from_args(args) -> SCPConfig:
    if args.samples < 16:
        raise ConfigError("--samples must be at least 16")
    if args.epsilon <= 0:
        raise ConfigError("--epsilon must be positive")
    return SCPConfig(epsilon=args.epsilon, samples=args.samples,
                     max_iters=args.max_iters, trust_radius=args.trust_radius,
                     tolerances=SolverTolerances())


def _fixed_line_from_channels(path: Path, track: TrackRibbon,
                              samples: int) -> PathState:
    """Rebuild a pinnable offset profile from an exported channels file."""
    ch = _read_csv(path)
    if "n" not in ch or "s_ref" not in ch:
        raise ConfigError("fixed-line file must carry s_ref and n columns")
    grid = resample_track(track, samples)
    m = samples if track.closed else samples
    s_nodes = grid.s_ref[:m]
    src_s, src_n = ch["s_ref"], ch["n"]
    if track.closed:
        src_s = np.append(src_s, track.length)
        src_n = np.append(src_n, src_n[0])
    n = np.interp(s_nodes, src_s, src_n)
    h = s_nodes[1] - s_nodes[0]
    D1, D2 = fd_matrices(m, h, track.closed)
    return PathState(n, D1 @ n, D2 @ n)


def _write_report_artifacts(out: Path, report: SolveReport, config: SCPConfig,
                            args) -> None:
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "report.json")
    write_csv(out / "convergence.csv", {
        "iteration": [r.index for r in report.iterations],
        "t_lap_exact": [r.t_lap for r in report.iterations],
        "t_lap_surrogate": [r.t_lap_surrogate for r in report.iterations],
        "wall_time": [r.wall_time for r in report.iterations],
    })
    if report.final is None:  # failed before any usable iterate
        return
    ch = report_channels(report)
    write_csv(out / "channels.csv", ch)
    _plot_line(out / "racing_line.svg", report, ch)
    _plot_speed(out / "speed.svg", ch)
    _plot_convergence(out / "convergence.svg", report)
    log.info("run complete: t_lap=%.3f s status=%s artifacts=%s",
             report.t_lap, report.status, out)


def _savefig(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _plot_line(path: Path, report: SolveReport, ch: dict) -> None:
    mesh = report.mesh
    fig, ax = plt.subplots(figsize=(7, 6))
    nodes = np.arange(mesh.n_nodes)
    for bound, style in ((mesh.n_lo, "k-"), (mesh.n_hi, "k-")):
        edge = mesh.P[nodes] + bound[nodes, None] * mesh.N[nodes]
        ax.plot(edge[:, 0], edge[:, 1], style, linewidth=0.6)
    sc = ax.scatter(ch["x"], ch["y"], c=ch["v_kmh"], s=4, cmap="viridis")
    fig.colorbar(sc, ax=ax, label="speed [km/h]")
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(f"racing line: {report.track_name}")
    _savefig(fig, path)


def _plot_speed(path: Path, ch: dict) -> None:
    fig, ax = plt.subplots(figsize=(8, 3.2))
    ax.plot(ch["s_ref"], ch["v_kmh"], lw=1.0)
    ax.set_xlabel("reference distance [m]")
    ax.set_ylabel("speed [km/h]")
    ax.grid(alpha=0.3)
    _savefig(fig, path)


def _plot_convergence(path: Path, report: SolveReport) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    its = [r.index for r in report.iterations]
    ax.plot(its, [r.t_lap for r in report.iterations], "o-", label="exact")
    ax.plot(its, [r.t_lap_surrogate for r in report.iterations], "s--",
            label="surrogate")
    ax.set_xlabel("iteration")
    ax.set_ylabel("lap time [s]")
    ax.legend()
    ax.grid(alpha=0.3)
    _savefig(fig, path)


def cmd_solve(args) -> int:
    out = Path(args.out)
    try:
        if args.mode not in MODES:
            raise ConfigError(f"unknown mode {args.mode!r}")
        track, params = _load_inputs(args)
        config = _config_from_args(args)
    except (ConfigError, TrackError, VehicleError, TranscriptionError,
            ValueError) as exc:
        return _error_json(out, EXIT_CONFIG, "config", str(exc))

    try:
        if args.mode == "ggv":
            return _run_ggv(args, params, out)
        if args.mode == "energy":
            return _run_energy(args, track, params, config, out)
        if args.mode == "apex":
            return _run_apex(args, track, params, config, out)

        if args.mode == "min-time":
            report = solve_min_lap_time(track, params, config)
        elif args.mode == "fixed-line":
            if args.fixed_line:
                line = _fixed_line_from_channels(Path(args.fixed_line), track,
                                                 config.samples)
            else:
                m = config.samples
                line = PathState(np.zeros(m), np.zeros(m), np.zeros(m))
            report = solve_fixed_trajectory(track, params, config, line)
        else:  # min-curvature
            grid = resample_track(track, config.samples)
            derivs = differentiate_ribbon(grid)
            line = min_curvature_line(grid, derivs, params.w_veh)
            m = config.samples
            report = solve_fixed_trajectory(
                track, params, config,
                PathState(line.n[:m], line.np_[:m], line.npp[:m]))
    except (ConfigError, TrackError, VehicleError, TranscriptionError) as exc:
        return _error_json(out, EXIT_CONFIG, "config", str(exc))
    except Exception as exc:  # solver-level breakage
        return _error_json(out, EXIT_SOLVER, "solver", str(exc))

    _write_report_artifacts(out, report, config, args)
    if report.status == "solver-failure":
        return _error_json(out, EXIT_SOLVER, "solver", "conic solve failed")
    if report.status != "converged":
        return _error_json(out, EXIT_NO_CONVERGENCE, "non-convergence",
                           f"no convergence in {config.max_iters} iterations")
    return EXIT_OK


def _run_ggv(args, params: VehicleParams, out: Path) -> int:
    speeds = np.linspace(args.ggv_vmin, args.ggv_vmax, args.ggv_speeds)
    slices = ggv_envelope(params, speeds)
    out.mkdir(parents=True, exist_ok=True)
    rows = {"v": [], "ay": [], "ax_max": [], "ax_min": []}
    for s in slices:
        for j in range(len(s.ay)):
            rows["v"].append(s.v)
            rows["ay"].append(s.ay[j])
            rows["ax_max"].append(s.ax_max[j])
            rows["ax_min"].append(s.ax_min[j])
    write_csv(out / "ggv.csv", rows)
    fig, ax = plt.subplots(figsize=(6, 5))
    for s in slices:
        if not s.feasible:
            continue
        ay = np.concatenate([s.ay, s.ay[::-1], s.ay[:1]])
        ax_b = np.concatenate([s.ax_max, s.ax_min[::-1], s.ax_max[:1]])
        ax.plot(ay / 9.81, ax_b / 9.81, lw=0.9, label=f"{s.v * 3.6:.0f} km/h")
    ax.set_xlabel("lateral acceleration [g]")
    ax.set_ylabel("longitudinal acceleration [g]")
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    _savefig(fig, out / "ggv.svg")
    (out / "report.json").write_text(json.dumps(
        {"status": "converged", "mode": "ggv",
         "speeds": [float(s.v) for s in slices],
         "feasible": [bool(s.feasible) for s in slices]}) + "\n")
    return EXIT_OK


def _run_apex(args, track: TrackRibbon, params: VehicleParams,
              config: SCPConfig, out: Path) -> int:
    grid = resample_track(track, config.samples)
    derivs = differentiate_ribbon(grid)
    m = config.samples
    if args.fixed_line:
        line = _fixed_line_from_channels(Path(args.fixed_line), track, m)
        n, np1, np2 = line.n, line.np_, line.npp
    else:
        n = np1 = np2 = np.zeros(m)
    full = m + 1 if track.closed else m
    xyz1, xyz2 = trajectory_derivatives(
        grid, derivs, np.resize(n, full), np.resize(np1, full), np.resize(np2, full))
    kappa = curvature(xyz1, xyz2)[:m]
    sg = np.linalg.norm(xyz1, axis=1)[:m]
    h = grid.s_ref[1] - grid.s_ref[0]
    ds = sg * h if track.closed else (sg * h)[:-1]
    profile = apex_speed_profile(kappa, ds, params, closed=track.closed)
    out.mkdir(parents=True, exist_ok=True)
    pos = grid.P[:m] + n[:, None] * grid.N[:m]
    write_csv(out / "channels.csv", {
        "s_ref": grid.s_ref[:m], "x": pos[:, 0], "y": pos[:, 1], "z": pos[:, 2],
        "n": n, "v": profile.v, "v_kmh": profile.v * 3.6, "kappa": kappa,
        "v_corner": profile.v_corner,
    })
    (out / "report.json").write_text(json.dumps(
        {"status": "converged", "mode": "apex",
         "t_lap": profile.lap_time,
         "regimes": profile.regime.tolist()}) + "\n")
    fig, ax = plt.subplots(figsize=(8, 3.2))
    ax.plot(grid.s_ref[:m], profile.v * 3.6, lw=1.0)
    ax.plot(grid.s_ref[:m], profile.v_corner * 3.6, lw=0.7, ls="--")
    ax.set_xlabel("reference distance [m]")
    ax.set_ylabel("speed [km/h]")
    ax.grid(alpha=0.3)
    _savefig(fig, out / "speed.svg")
    log.info("apex profile: %.3f s", profile.lap_time)
    return EXIT_OK


def _run_energy(args, track: TrackRibbon, params: VehicleParams,
                config: SCPConfig, out: Path) -> int:
    params = energy_mod.hybrid_vehicle(params)
    pt = energy_mod.default_hybrid(params)
    scenarios = energy_mod.SCENARIOS if args.scenario == "all" else (args.scenario,)
    out.mkdir(parents=True, exist_ok=True)
    if args.scenario == "all":
        comp = energy_mod.run_scenarios(track, params, pt, config)
        rows = comp.to_rows()
    else:
        cfg = dataclasses.replace(config, powertrain=pt,
                                  scenario=energy_mod.EnergyScenario(args.scenario))
        report = solve_min_lap_time(track, params, cfg)
        _write_report_artifacts(out, report, cfg, args)
        if report.final is None or report.final.battery is None:
            return _error_json(out, EXIT_SOLVER, "solver",
                               f"{args.scenario} scenario did not solve")
        rows = [{"scenario": args.scenario, "mode": "free",
                 "status": report.status, "t_lap": report.t_lap,
                 "delta_to_drain_free": 0.0,
                 "battery_min": float(report.final.battery.min()),
                 "battery_max": float(report.final.battery.max()),
                 "battery_end": float(report.final.battery[-1]),
                 "recheck_error": 0.0}]
    cols = {k: [r[k] for r in rows] for k in rows[0] if k not in ("scenario", "mode", "status")}
    cols = {"scenario": [r["scenario"] for r in rows],
            "mode": [r["mode"] for r in rows],
            "status": [r["status"] for r in rows], **cols}
    with open(out / "energy.csv", "w", newline="\n") as f:
        keys = list(cols)
        f.write(",".join(keys) + "\n")
        for i in range(len(rows)):
            f.write(",".join(
                str(cols[k][i]) if isinstance(cols[k][i], str) else _fmt(cols[k][i])
                for k in keys) + "\n")
    (out / "report.json").write_text(json.dumps(
        {"status": "converged" if all(r["status"] == "converged" for r in rows)
         else "partial", "mode": "energy", "rows": rows}) + "\n")
    bad = [r for r in rows if r["status"] != "converged"]
    if bad:
        return _error_json(out, EXIT_SOLVER, "solver",
                           f"{len(bad)} scenario runs did not converge")
    return EXIT_OK


def cmd_compare(args) -> int:
    out = Path(args.out)
    try:
        runs = [Path(p) for p in args.reports]
        if len(runs) < 2:
            raise ConfigError("compare needs at least two report directories")
        channels = []
        names = []
        for run in runs:
            ch = _read_csv(run / "channels.csv")
            meta = json.loads((run / "report.json").read_text())
            channels.append(ch)
            names.append(meta.get("track", run.name))
        base = channels[0]["s_ref"]
        for ch in channels[1:]:
            if len(ch["s_ref"]) != len(base) or abs(ch["s_ref"][-1] - base[-1]) > 1e-6:
                raise ConfigError("reports do not share a track")
    except (ConfigError, OSError, KeyError, json.JSONDecodeError) as exc:
        return _error_json(out, EXIT_CONFIG, "config", str(exc))

    out.mkdir(parents=True, exist_ok=True)
    # cumulative time from the lethargy/stretch channels when present,
    # else from inverse speed
    cums = []
    for ch in channels:
        if "dt_ds" in ch and "ds_dsref" in ch:
            rate = ch["dt_ds"] * ch["ds_dsref"]
        else:
            rate = 1.0 / ch["v"]
        ds = np.diff(np.append(base, base[-1] + (base[1] - base[0])))
        cums.append(np.cumsum(rate * ds))
    delta = {"s_ref": base}
    for i in range(1, len(cums)):
        delta[f"delta_t_{i}"] = cums[i] - cums[0]
    write_csv(out / "delta_time.csv", delta)

    fig, axes = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    for i, ch in enumerate(channels):
        axes[0].plot(base, ch["v_kmh"] if "v_kmh" in ch else ch["v"] * 3.6,
                     lw=0.9, label=f"run {i}")
        axes[1].plot(base, ch["n"], lw=0.9)
    axes[0].set_ylabel("speed [km/h]")
    axes[0].legend(fontsize=8)
    axes[1].set_ylabel("offset n [m]")
    axes[1].set_xlabel("reference distance [m]")
    for a in axes:
        a.grid(alpha=0.3)
    _savefig(fig, out / "compare.svg")
    return EXIT_OK


def cmd_make_track(args) -> int:
    try:
        geometry = {}
        for item in args.param or []:
            key, _, value = item.partition("=")
            if not value:
                raise ConfigError(f"bad --param {item!r}, expected key=value")
            geometry[key] = float(value)
        if args.lobes is not None:
            geometry["lobes"] = args.lobes
        track = make_test_track(args.kind, samples=args.samples,
                                half_width=args.half_width, **geometry)
    except (ConfigError, TrackError) as exc:
        return _error_json(Path("."), EXIT_CONFIG, "config", str(exc))
    save_track(track, args.output)
    log.info("wrote %s (%d samples, %.1f m)", args.output, track.n_samples,
             track.length)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="apexcvx",
        description="Minimum-lap-time racing line and powertrain optimization")
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="run one optimization mode")
    solve.add_argument("--track", help="track CSV file")
    solve.add_argument("--vehicle", help="vehicle JSON file (defaults used when omitted)")
    solve.add_argument("--samples", type=int, default=2000)
    solve.add_argument("--epsilon", type=float, default=0.01)
    solve.add_argument("--max-iters", type=int, default=15)
    solve.add_argument("--mode", default="min-time", choices=MODES)
    solve.add_argument("--scenario", default="all",
                       choices=("drain", "fill", "sustain", "all"))
    solve.add_argument("--fixed-line", help="channels.csv carrying the line to pin")
    solve.add_argument("--trust-radius", type=float, default=None)
    solve.add_argument("--out", default="out")
    solve.add_argument("--seed", type=int, default=0)
    solve.add_argument("--ggv-vmin", type=float, default=15.0)
    solve.add_argument("--ggv-vmax", type=float, default=90.0)
    solve.add_argument("--ggv-speeds", type=int, default=6)
    solve.set_defaults(func=cmd_solve)

    comp = sub.add_parser("compare", help="overlay completed runs")
    comp.add_argument("reports", nargs="+", help="report directories")
    comp.add_argument("--out", default="compare")
    comp.set_defaults(func=cmd_compare)

    mk = sub.add_parser("make-track", help="generate a synthetic circuit file")
    mk.add_argument("kind", choices=("straight", "circle", "oval", "s-bend", "wiggle"))
    mk.add_argument("output")
    mk.add_argument("--samples", type=int, default=1000)
    mk.add_argument("--half-width", type=float, default=6.0)
    mk.add_argument("--lobes", type=int, default=None)
    mk.add_argument("--param", action="append",
                    help="geometry parameter, e.g. --param radius=100")
    mk.set_defaults(func=cmd_make_track)

    ggv = sub.add_parser("ggv", help="export the acceleration envelope")
    ggv.add_argument("--vehicle", help="vehicle JSON file")
    ggv.add_argument("--out", default="ggv")
    ggv.add_argument("--ggv-vmin", type=float, default=15.0)
    ggv.add_argument("--ggv-vmax", type=float, default=90.0)
    ggv.add_argument("--ggv-speeds", type=int, default=6)
    ggv.set_defaults(func=lambda a: _run_ggv(
        a, load_vehicle(a.vehicle) if a.vehicle else default_vehicle(),
        Path(a.out)))

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("APEXCVX_LOG", "INFO").upper(),
        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
