"""Sequential conic programming driver.

Repeatedly linearizes the lap-time problem at the previous iterate, solves the
conic subproblem and re-extracts, until the exact (quadrature) lap time stops
improving by more than the threshold. The exact lap time, not the linearized
surrogate, drives convergence; a solver failure mid-sequence halves (or
activates) the trust region and retries, twice per iteration at most, before
aborting.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .conic import OK_STATUSES, SolverTolerances, conic_solve
from .energy import EnergyScenario, PowertrainConfig
from .track import PathState, TrackRibbon, curvature
from .transcription import (Mesh, TrajectoryIterate, TranscriptionOptions,
                            build_mesh, build_subproblem, extract_iterate,
                            initial_iterate, iterate_geometry,
                            nonlinear_residuals)
from .vehicle import VehicleParams

__all__ = [
    "SCPConfig",
    "IterationRecord",
    "SolveReport",
    "solve_min_lap_time",
    "solve_fixed_trajectory",
    "expand_fixed_line",
    "report_channels",
]


@dataclass
class SCPConfig:
    epsilon: float = 1e-2          # lap-time convergence threshold [s]
    max_iters: int = 15
    samples: int = 500
    trust_radius: Optional[float] = None
    initial_speed: float = 30.0
    v_floor: float = 1.0
    entry_speed: float = 15.0      # open tracks
    tolerances: SolverTolerances = field(default_factory=SolverTolerances)
    powertrain: Optional[PowertrainConfig] = None
    scenario: Optional[EnergyScenario] = None

    def validate(self) -> None:
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.samples < 16:
            raise ValueError("samples must be at least 16")


@dataclass
class IterationRecord:
    index: int
    t_lap: float
    t_lap_surrogate: float
    delta: float
    solver_status: str
    solver_iterations: int
    solve_time: float
    wall_time: float
    trust_radius: Optional[float]
    max_gap_path: float
    max_gap_inverse: float
    max_gap_energy: float


@dataclass
class SolveReport:
    status: str                       # converged | max-iters | solver-failure
    iterations: list[IterationRecord]
    final: Optional[TrajectoryIterate]
    mesh: Optional[Mesh]
    epsilon: float
    track_name: str
    track_length: float
    monotone_violations: list[int] = field(default_factory=list)
    nonlinear: dict = field(default_factory=dict)

    @property
    def t_lap(self) -> float:
        return self.final.t_lap if self.final is not None else float("nan")

    @property
    def n_iterations(self) -> int:
        return len(self.iterations)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def to_dict(self) -> dict:
        out = {
            "status": self.status,
            "epsilon": self.epsilon,
            "track": self.track_name,
            "track_length": self.track_length,
            "t_lap": self.t_lap,
            "monotone_violations": self.monotone_violations,
            "nonlinear_residuals": self.nonlinear,
            "iterations": [dataclasses.asdict(r) for r in self.iterations],
        }
        if self.final is not None and self.mesh is not None:
            out["channels"] = {k: v.tolist() for k, v in
                               report_channels(self).items()}
            if self.final.battery is not None:
                out["battery"] = self.final.battery.tolist()
        return out

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")


def _transcription_options(config: SCPConfig,
                           fixed_line: Optional[PathState]) -> TranscriptionOptions:
    return TranscriptionOptions(
        samples=config.samples, trust_radius=config.trust_radius,
        v_floor=config.v_floor, initial_speed=config.initial_speed,
        entry_speed=config.entry_speed, fixed_line=fixed_line,
        powertrain=config.powertrain, scenario=config.scenario)


def solve_min_lap_time(track: TrackRibbon, params: VehicleParams,
                       config: SCPConfig,
                       warm_start: Optional[TrajectoryIterate] = None,
                       fixed_line: Optional[PathState] = None,
                       mesh: Optional[Mesh] = None) -> SolveReport:
    """Run the sequential conic loop from a cold or warm start.

    Each iteration freezes slope, curvature gradient and the bilinear product
    linearizations at the previous iterate. Non-convergence within the
    iteration budget is flagged, not fatal; solver failures shrink the trust
    region and abort only when the retries are spent.
    """
    config.validate()
    track.validate()
    if mesh is None:
        mesh = build_mesh(track, params, config.samples)
    options = _transcription_options(config, fixed_line)
    prev = warm_start if warm_start is not None else initial_iterate(mesh, params, options)

    records: list[IterationRecord] = []
    monotone: list[int] = []
    status = "max-iters"
    final: Optional[TrajectoryIterate] = None
    retries: dict[int, int] = {}

    k = 0
    while k < config.max_iters:
        k += 1
        t0 = time.perf_counter()
        program, layout = build_subproblem(mesh, params, prev, options)
        sol = conic_solve(program, config.tolerances)
        wall = time.perf_counter() - t0

        if sol.status not in OK_STATUSES:
            if retries.get(k, 0) < 2:
                # tighten the step and rebuild at the same linearization
                # point; the reduced radius stays on for later iterations
                retries[k] = retries.get(k, 0) + 1
                k -= 1
                current = options.trust_radius
                fallback = 0.25 * float(np.max(mesh.n_hi - mesh.n_lo))
                options = dataclasses.replace(
                    options,
                    trust_radius=(0.5 * current) if current else fallback)
                continue
            records.append(IterationRecord(
                index=k, t_lap=float("nan"), t_lap_surrogate=float("nan"),
                delta=float("nan"), solver_status=sol.status,
                solver_iterations=sol.iterations, solve_time=sol.solve_time,
                wall_time=wall, trust_radius=options.trust_radius,
                max_gap_path=float("nan"), max_gap_inverse=float("nan"),
                max_gap_energy=float("nan")))
            status = "solver-failure"
            break

        it = extract_iterate(sol, layout, mesh, params, options, k, sol.objective)
        delta = abs(it.t_lap - prev.t_lap)
        gaps = it.tightness
        records.append(IterationRecord(
            index=k, t_lap=it.t_lap, t_lap_surrogate=it.t_lap_surrogate,
            delta=delta, solver_status=sol.status,
            solver_iterations=sol.iterations, solve_time=sol.solve_time,
            wall_time=wall, trust_radius=options.trust_radius,
            max_gap_path=float(np.max(np.abs(gaps["path_length"]))),
            max_gap_inverse=float(np.max(np.abs(gaps["speed_inverse"]))),
            max_gap_energy=float(np.max(np.abs(gaps["kinetic_energy"])))))
        if k > 2 and it.t_lap > prev.t_lap + 1e-3:
            monotone.append(k)
        final = it
        prev = it
        if delta <= config.epsilon:
            status = "converged"
            break

    report = SolveReport(status=status, iterations=records, final=final,
                         mesh=mesh, epsilon=config.epsilon,
                         track_name=track.name, track_length=track.length,
                         monotone_violations=monotone)
    if final is not None:
        report.nonlinear = nonlinear_residuals(mesh, params, final)
    return report


def expand_fixed_line(mesh: Mesh, line: PathState) -> PathState:
    """Expand node-only offset arrays to all mesh points.

    Midpoint values follow the Hermite interpolant of the node states so a
    line extracted at nodes is pinned consistently.
    """
    n = np.asarray(line.n, dtype=float)
    if len(n) == mesh.n_points:
        return line
    if len(n) != mesh.n_nodes:
        raise ValueError("fixed line must cover the nodes or all points")
    np1 = np.asarray(line.np_, dtype=float)
    np2 = np.asarray(line.npp, dtype=float)
    i0, i1, _ = mesh.intervals.T
    h = mesh.h
    n_m = 0.5 * (n[i0] + n[i1]) + h / 8.0 * (np1[i0] - np1[i1])
    np_m = 0.5 * (np1[i0] + np1[i1]) + h / 8.0 * (np2[i0] - np2[i1])
    npp_m = 0.5 * (np2[i0] + np2[i1])
    return PathState(np.concatenate([n, n_m]),
                     np.concatenate([np1, np_m]),
                     np.concatenate([np2, npp_m]))


def solve_fixed_trajectory(track: TrackRibbon, params: VehicleParams,
                           config: SCPConfig, n_fixed: PathState,
                           mesh: Optional[Mesh] = None) -> SolveReport:
    """Same pipeline with the racing line pinned; only speeds and forces are
    optimized, so only the domain-transform bilinearities need iteration."""
    if mesh is None:
        mesh = build_mesh(track, params, config.samples)
    line = expand_fixed_line(mesh, n_fixed)
    # midpoint interpolation of a bound-hugging line may overshoot the
    # corridor by a hair; the pinned offsets must stay inside it
    line = PathState(np.clip(line.n, mesh.n_lo, mesh.n_hi), line.np_, line.npp)
    return solve_min_lap_time(track, params, config, fixed_line=line, mesh=mesh)


def report_channels(report: SolveReport) -> dict:
    """Per-node channel arrays of the final iterate (SI plus km/h speed)."""
    mesh, it = report.mesh, report.final
    if mesh is None or it is None:
        raise ValueError("report has no solution channels")
    nodes = np.arange(mesh.n_nodes)
    xyz1, xyz2 = iterate_geometry(mesh, it.n, it.np_, it.npp)
    kappa = curvature(xyz1, xyz2)
    pos = mesh.P + it.n[:, None] * mesh.N
    ch = {
        "s_ref": mesh.s[nodes],
        "x": pos[nodes, 0], "y": pos[nodes, 1], "z": pos[nodes, 2],
        "n": it.n[nodes],
        "v": it.v[nodes],
        "v_kmh": it.v[nodes] * 3.6,
        "kappa": kappa[nodes],
        "dt_ds": it.L[nodes],
        "ds_dsref": it.sg[nodes],
        "E_kin": it.E[nodes],
        "F_x_R": it.FxR[nodes], "F_x_F": it.FxF[nodes],
        "F_y_R": it.FyR[nodes], "F_y_F": it.FyF[nodes],
        "F_z_R": it.FzR[nodes], "F_z_F": it.FzF[nodes],
        "F_w_R": it.FwR[nodes], "F_w_F": it.FwF[nodes],
        "F_c": it.Fc[nodes],
        "theta": (it.theta[nodes] if it.theta is not None else np.zeros(len(nodes))),
        "phi": mesh.phi[nodes],
        "gap_path": it.tightness["path_length"][nodes],
        "gap_inverse": it.tightness["speed_inverse"][nodes],
        "gap_energy": it.tightness["kinetic_energy"][nodes],
    }
    if it.battery is not None:
        ch["battery"] = it.battery[:mesh.n_nodes]
    if it.components:
        for name, arr in it.components.items():
            ch[f"F_{name}"] = arr[nodes]
    return ch
