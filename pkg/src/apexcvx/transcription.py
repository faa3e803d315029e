"""Convex subproblem assembly.

Builds one conic subproblem per outer iteration: Hermite-Simpson collocation
of the offset/energy states on a uniform reference-distance grid, exact affine
track geometry, force and moment balances with slope/banking frozen at the
previous iterate, friction/actuator cones, and the linearized centrifugal and
domain-transform couplings. Path constraints are enforced at collocation nodes
and interval midpoints alike.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import energy as energy_mod
from .conic import ConicProgram, ConicSolution, ProgramBuilder
from .track import (PathState, TrackRibbon, curvature, curvature_gradient,
                    differentiate_ribbon, resample_track)
from .vehicle import VehicleParams

__all__ = [
    "Mesh",
    "build_mesh",
    "TranscriptionOptions",
    "VariableLayout",
    "layout_variables",
    "TrajectoryIterate",
    "initial_iterate",
    "build_subproblem",
    "collocate_dynamics",
    "extract_iterate",
    "nonlinear_residuals",
    "iterate_geometry",
    "TranscriptionError",
    "POINT_FIELDS",
    "SPEED_SCALE",
]

POINT_FIELDS = ("n", "np", "npp", "E", "D", "L", "v", "sg", "FwR", "FwF",
                "FxR", "FxF", "FyR", "FyF", "FzR", "FzF", "FzsR", "FzsF",
                "dFzR", "dFzF", "Fc")

SPEED_SCALE = 50.0  # conditions the kinetic-energy cone


class TranscriptionError(ValueError):
    """Inconsistent transcription inputs."""


# ---------------------------------------------------------------------------
# mesh


@dataclass
class Mesh:
    """Geometry of every enforcement point (nodes first, then midpoints)."""

    s: np.ndarray
    P: np.ndarray
    N: np.ndarray
    P1: np.ndarray
    P2: np.ndarray
    N1: np.ndarray
    N2: np.ndarray
    n_lo: np.ndarray          # corridor bounds, vehicle width already removed
    n_hi: np.ndarray
    phi: np.ndarray           # banking [rad], ribbon data only
    closed: bool
    n_nodes: int
    intervals: np.ndarray     # (n_int, 3) point indices [node0, node1, mid]
    h: float                  # uniform reference-distance step

    @property
    def n_points(self) -> int:
        return len(self.s)

    @property
    def n_int(self) -> int:
        return len(self.intervals)

    @property
    def length(self) -> float:
        return self.h * self.n_int


def build_mesh(track: TrackRibbon, params: VehicleParams, samples: int) -> Mesh:
    """Evaluate track geometry at nodes and interval midpoints.

    The track is resampled to a grid of half-step spacing so midpoints are
    genuine samples; analytic tracks are evaluated exactly.
    """
    if samples < 16:
        raise TranscriptionError("need at least 16 samples")
    fine_count = 2 * samples if track.closed else 2 * samples - 1
    fine = resample_track(track, fine_count)
    derivs = differentiate_ribbon(fine)

    m_unique = fine_count
    nodes = np.arange(0, m_unique, 2)
    mids = np.arange(1, m_unique, 2)
    order = np.concatenate([nodes, mids])

    half = 0.5 * params.w_veh
    n_lo = fine.n_min[order] + half
    n_hi = fine.n_max[order] - half
    if np.any(n_lo >= n_hi):
        raise TranscriptionError("corridor narrower than the vehicle")

    n1_h = np.hypot(derivs.N1[order, 0], derivs.N1[order, 1])
    phi = np.where(n1_h < 1e-9, 0.0,
                   np.arctan2(fine.N[order, 2],
                              np.hypot(fine.N[order, 0], fine.N[order, 1])))

    n_nodes = len(nodes)
    if track.closed:
        n_int = n_nodes
        i0 = np.arange(n_int)
        i1 = (i0 + 1) % n_nodes
    else:
        n_int = n_nodes - 1
        i0 = np.arange(n_int)
        i1 = i0 + 1
    im = n_nodes + np.arange(n_int)
    h = fine.s_ref[2] - fine.s_ref[0]

    return Mesh(
        s=fine.s_ref[order], P=fine.P[order], N=fine.N[order],
        P1=derivs.P1[order], P2=derivs.P2[order],
        N1=derivs.N1[order], N2=derivs.N2[order],
        n_lo=n_lo, n_hi=n_hi, phi=phi, closed=track.closed,
        n_nodes=n_nodes, intervals=np.column_stack([i0, i1, im]), h=float(h),
    )


# ---------------------------------------------------------------------------
# options and layout


@dataclass
class TranscriptionOptions:
    samples: int = 500
    trust_radius: Optional[float] = None
    v_floor: float = 1.0
    initial_speed: float = 30.0
    entry_speed: float = 15.0               # open tracks: fixed initial speed
    fixed_line: Optional[PathState] = None  # arrays over all mesh points
    powertrain: Optional[energy_mod.PowertrainConfig] = None
    scenario: Optional[energy_mod.EnergyScenario] = None

    def validate(self) -> None:
        if self.samples < 16:
            raise TranscriptionError("samples must be at least 16")
        if self.v_floor <= 0 or self.initial_speed <= self.v_floor:
            raise TranscriptionError("need initial_speed > v_floor > 0")
        if self.scenario is not None and self.powertrain is None:
            raise TranscriptionError("scenario requires a powertrain config")


@dataclass
class VariableLayout:
    """Deterministic index map of the decision vector.

    Point-major: point p's fields live at ``p * n_fields + offset``; battery
    states (if any) trail the point block. Total size is
    ``n_points * n_fields + n_battery``.
    """

    n_points: int
    n_nodes: int
    intervals: np.ndarray
    h: float
    closed: bool
    fields: dict
    n_fields: int
    n_battery: int
    row_ranges: dict = field(default_factory=dict)
    theta: Optional[np.ndarray] = None  # frozen slope of the build, per point

    @property
    def n_vars(self) -> int:
        return self.n_points * self.n_fields + self.n_battery

    @property
    def n_int(self) -> int:
        return len(self.intervals)

    def col(self, name: str, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, dtype=np.int64) * self.n_fields + self.fields[name]

    def battery_col(self, j: np.ndarray) -> np.ndarray:
        return self.n_points * self.n_fields + np.asarray(j, dtype=np.int64)

    def value(self, x: np.ndarray, name: str) -> np.ndarray:
        return x[self.col(name, np.arange(self.n_points))]


def layout_variables(samples: int, options: TranscriptionOptions,
                     closed: bool = True) -> VariableLayout:
    """Index map for a given sample count and option set (no track needed)."""
    options.validate()
    n_nodes = samples
    n_int = n_nodes if closed else n_nodes - 1
    n_points = n_nodes + n_int
    names = list(POINT_FIELDS)
    n_battery = 0
    if options.powertrain is not None:
        names += [f"comp{i}" for i in range(len(options.powertrain.components))]
        names += ["dis", "chg"]
        n_battery = n_int + 1
    fields = {name: i for i, name in enumerate(names)}
    if closed:
        i0 = np.arange(n_int)
        i1 = (i0 + 1) % n_nodes
    else:
        i0 = np.arange(n_int)
        i1 = i0 + 1
    intervals = np.column_stack([i0, i1, n_nodes + np.arange(n_int)])
    return VariableLayout(n_points=n_points, n_nodes=n_nodes, intervals=intervals,
                          h=float("nan"), closed=closed, fields=fields,
                          n_fields=len(names), n_battery=n_battery)


# ---------------------------------------------------------------------------
# iterates


@dataclass
class TrajectoryIterate:
    """One solution (or guess) of the subproblem, arrays over mesh points."""

    n: np.ndarray
    np_: np.ndarray
    npp: np.ndarray
    E: np.ndarray
    D: np.ndarray
    L: np.ndarray
    v: np.ndarray
    sg: np.ndarray
    FwR: np.ndarray
    FwF: np.ndarray
    FxR: np.ndarray
    FxF: np.ndarray
    FyR: np.ndarray
    FyF: np.ndarray
    FzR: np.ndarray
    FzF: np.ndarray
    FzsR: np.ndarray
    FzsF: np.ndarray
    dFzR: np.ndarray
    dFzF: np.ndarray
    Fc: np.ndarray
    iteration: int = 0
    t_lap: float = float("nan")            # exact quadrature lap time
    t_lap_surrogate: float = float("nan")  # linearized objective value
    theta: Optional[np.ndarray] = None     # slope used in this iterate's balances
    tightness: dict = field(default_factory=dict)
    battery: Optional[np.ndarray] = None
    components: Optional[dict] = None
    dis: Optional[np.ndarray] = None
    chg: Optional[np.ndarray] = None

    def path_state(self) -> PathState:
        return PathState(self.n.copy(), self.np_.copy(), self.npp.copy())


def iterate_geometry(mesh: Mesh, n: np.ndarray, np_: np.ndarray,
                     npp: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Trajectory derivatives on the mesh for given offset arrays."""
    c1 = n[:, None]
    xyz1 = mesh.P1 + c1 * mesh.N1 + np_[:, None] * mesh.N
    xyz2 = mesh.P2 + c1 * mesh.N2 + npp[:, None] * mesh.N + 2 * np_[:, None] * mesh.N1
    return xyz1, xyz2


def exact_lap_time(mesh: Mesh, L: np.ndarray, sg: np.ndarray) -> float:
    """Simpson quadrature of the true lethargy/path-length product."""
    i0, i1, im = mesh.intervals.T
    f = L * sg
    return float(mesh.h / 6.0 * np.sum(f[i0] + 4.0 * f[im] + f[i1]))


def initial_iterate(mesh: Mesh, params: VehicleParams,
                    options: TranscriptionOptions) -> TrajectoryIterate:
    """Cold-start linearization point: given line (or centerline) at constant
    speed. Only the fields entering the linearizations need to be coherent."""
    m = mesh.n_points
    if options.fixed_line is not None:
        n, np_, npp = (np.asarray(options.fixed_line.n, dtype=float),
                       np.asarray(options.fixed_line.np_, dtype=float),
                       np.asarray(options.fixed_line.npp, dtype=float))
        if len(n) != m:
            raise TranscriptionError("fixed line length does not match the mesh")
    else:
        n = np.zeros(m)
        np_ = np.zeros(m)
        npp = np.zeros(m)
    v0 = options.initial_speed
    xyz1, _ = iterate_geometry(mesh, n, np_, npp)
    sg = np.linalg.norm(xyz1, axis=1)
    z = np.zeros(m)
    it = TrajectoryIterate(
        n=n, np_=np_, npp=npp,
        E=np.full(m, 0.5 * params.m * v0**2), D=z.copy(),
        L=np.full(m, 1.0 / v0), v=np.full(m, v0), sg=sg,
        FwR=z.copy(), FwF=z.copy(), FxR=z.copy(), FxF=z.copy(),
        FyR=z.copy(), FyF=z.copy(), FzR=z.copy(), FzF=z.copy(),
        FzsR=z.copy(), FzsF=z.copy(), dFzR=z.copy(), dFzF=z.copy(), Fc=z.copy(),
    )
    it.t_lap = exact_lap_time(mesh, it.L, it.sg)
    return it


# ---------------------------------------------------------------------------
# subproblem assembly


def collocate_dynamics(builder: ProgramBuilder, layout: VariableLayout,
                       mesh: Mesh, prev: TrajectoryIterate,
                       options: TranscriptionOptions) -> tuple[int, int]:
    """Hermite-Simpson defect rows for the states (n, n', E_kin).

    Midpoint states are decision variables tied by the Hermite interpolant;
    Simpson closes each interval. The energy derivative in the reference
    domain is the affine previous-iterate product linearization. Returns the
    (start, stop) equality row range.
    """
    i0, i1, im = layout.intervals.T
    h = mesh.h
    col = layout.col
    start = builder.n_eq_rows

    pin_line = options.fixed_line is not None
    if not pin_line:
        # n: derivative is n'
        builder.add_eq([(col("n", im), 1.0), (col("n", i0), -0.5), (col("n", i1), -0.5),
                        (col("np", i0), -h / 8.0), (col("np", i1), h / 8.0)], 0.0)
        builder.add_eq([(col("n", i1), 1.0), (col("n", i0), -1.0),
                        (col("np", i0), -h / 6.0), (col("np", im), -4.0 * h / 6.0),
                        (col("np", i1), -h / 6.0)], 0.0)
        # n': derivative is n''
        builder.add_eq([(col("np", im), 1.0), (col("np", i0), -0.5), (col("np", i1), -0.5),
                        (col("npp", i0), -h / 8.0), (col("npp", i1), h / 8.0)], 0.0)
        builder.add_eq([(col("np", i1), 1.0), (col("np", i0), -1.0),
                        (col("npp", i0), -h / 6.0), (col("npp", im), -4.0 * h / 6.0),
                        (col("npp", i1), -h / 6.0)], 0.0)

    # E_kin: derivative in the reference domain is the bilinear product
    # D * sg evaluated with the path-length factor frozen at the previous
    # iterate. Exact at the expansion point and at the converged fixed point;
    # keeping the current sg out of the energy chain closes the free-energy
    # channel an unbounded relaxed sg would otherwise open where the frozen
    # dE/ds is positive.
    sgp = prev.sg
    builder.add_eq(
        [(col("E", im), 1.0), (col("E", i0), -0.5), (col("E", i1), -0.5),
         (col("D", i0), -h / 8.0 * sgp[i0]), (col("D", i1), h / 8.0 * sgp[i1])],
        0.0)
    builder.add_eq(
        [(col("E", i1), 1.0), (col("E", i0), -1.0),
         (col("D", i0), -h / 6.0 * sgp[i0]),
         (col("D", im), -4.0 * h / 6.0 * sgp[im]),
         (col("D", i1), -h / 6.0 * sgp[i1])],
        0.0)
    return start, builder.n_eq_rows


def build_subproblem(mesh: Mesh, params: VehicleParams, prev: TrajectoryIterate,
                     options: TranscriptionOptions
                     ) -> tuple[ConicProgram, VariableLayout]:
    """Assemble the full conic subproblem linearized at ``prev``."""
    options.validate()
    layout = layout_variables(mesh.n_nodes, options, closed=mesh.closed)
    layout = dataclasses.replace(layout, h=mesh.h, intervals=mesh.intervals)
    if len(prev.n) != mesh.n_points:
        raise TranscriptionError("previous iterate does not match the mesh")

    p = params
    pts = np.arange(mesh.n_points)
    col = layout.col
    b = ProgramBuilder(layout.n_vars)

    # previous-iterate geometry and frozen nonlinear data
    xyz1p, xyz2p = iterate_geometry(mesh, prev.n, prev.np_, prev.npp)
    horiz = np.hypot(xyz1p[:, 0], xyz1p[:, 1])
    if np.any(horiz < 1e-9):
        raise TranscriptionError("singular previous-iterate tangent")
    kp = curvature(xyz1p, xyz2p)
    Gp = curvature_gradient(xyz1p, xyz2p)
    theta = np.arctan2(xyz1p[:, 2], horiz)
    phi = mesh.phi
    Ep = prev.E
    ct, st = np.cos(theta), np.sin(theta)
    cphi, sphi = np.cos(phi), np.sin(phi)

    # objective: Simpson weights on the linearized lethargy/path product
    i0, i1, im = mesh.intervals.T
    w = mesh.h / 6.0
    Lp, sgp = prev.L, prev.sg
    for pts_i, weight in ((i0, w), (im, 4.0 * w), (i1, w)):
        b.add_objective(col("L", pts_i), weight * sgp[pts_i])
        b.add_objective(col("sg", pts_i), weight * Lp[pts_i])
        b.c0 -= float(np.sum(weight * Lp[pts_i] * sgp[pts_i]))

    # centrifugal force, linearized about prev: the affine geometry maps make
    # the expansion exact at the expansion point
    geom_const = np.column_stack([mesh.P1[:, 0], mesh.P1[:, 1],
                                  mesh.P2[:, 0], mesh.P2[:, 1]])
    geom_prev = np.column_stack([xyz1p[:, 0], xyz1p[:, 1], xyz2p[:, 0], xyz2p[:, 1]])
    gn = (Gp[:, 0] * mesh.N1[:, 0] + Gp[:, 1] * mesh.N1[:, 1]
          + Gp[:, 2] * mesh.N2[:, 0] + Gp[:, 3] * mesh.N2[:, 1])
    gnp = (Gp[:, 0] * mesh.N[:, 0] + Gp[:, 1] * mesh.N[:, 1]
           + 2.0 * (Gp[:, 2] * mesh.N1[:, 0] + Gp[:, 3] * mesh.N1[:, 1]))
    gnpp = Gp[:, 2] * mesh.N[:, 0] + Gp[:, 3] * mesh.N[:, 1]
    rhs_fc = 2.0 * Ep * np.einsum("ij,ij->i", Gp, geom_const - geom_prev)
    b.add_eq([(col("Fc", pts), 1.0), (col("E", pts), -2.0 * kp),
              (col("n", pts), -2.0 * Ep * gn), (col("np", pts), -2.0 * Ep * gnp),
              (col("npp", pts), -2.0 * Ep * gnpp)], rhs_fc)

    # force and moment balances with slope/banking as per-point constants
    drag_c = p.rho * p.CdA / p.m
    down_c = p.rho * p.ClA / p.m
    b.add_eq([(col("D", pts), 1.0), (col("FxR", pts), -1.0), (col("FxF", pts), -1.0),
              (col("E", pts), drag_c)], -cphi * st * p.m * p.g)
    b.add_eq([(col("FyR", pts), 1.0), (col("FyF", pts), 1.0),
              (col("Fc", pts), -cphi)], -sphi * p.m * p.g)
    b.add_eq([(col("FzR", pts), 1.0), (col("FzF", pts), 1.0),
              (col("Fc", pts), -sphi * ct), (col("E", pts), -down_c)],
             cphi * ct * p.m * p.g)
    b.add_eq([(col("FyF", pts), p.l_F), (col("FyR", pts), -p.l_R)], 0.0)
    b.add_eq([(col("FzF", pts), -p.l_F), (col("FzR", pts), p.l_R),
              (col("FxR", pts), -p.h_G), (col("FxF", pts), -p.h_G),
              (col("E", pts), -(p.l_GP * down_c + (p.h_P - p.h_G) * drag_c))], 0.0)

    # roll load transfer
    elR = 2.0 * (1.0 - p.xi) / p.w_axle_R
    elF = 2.0 * p.xi / p.w_axle_F
    b.add_eq([(col("dFzR", pts), 1.0),
              (col("FyR", pts), -(2.0 * p.h_rc_R / p.w_axle_R + elR * (p.h_G - p.h_rc_R))),
              (col("FyF", pts), -elR * (p.h_G - p.h_rc_F))], 0.0)
    b.add_eq([(col("dFzF", pts), 1.0),
              (col("FyF", pts), -(2.0 * p.h_rc_F / p.w_axle_F + elF * (p.h_G - p.h_rc_F))),
              (col("FyR", pts), -elF * (p.h_G - p.h_rc_R))], 0.0)

    # collocation and boundary conditions
    colloc = collocate_dynamics(b, layout, mesh, prev, options)
    layout.row_ranges["collocation"] = colloc
    if options.fixed_line is not None:
        line = options.fixed_line
        if len(line.n) != mesh.n_points:
            raise TranscriptionError("fixed line length does not match the mesh")
        if np.any(line.n < mesh.n_lo - 1e-6) or np.any(line.n > mesh.n_hi + 1e-6):
            raise TranscriptionError("fixed line leaves the corridor")
        b.add_eq([(col("n", pts), 1.0)], line.n)
        b.add_eq([(col("np", pts), 1.0)], line.np_)
        b.add_eq([(col("npp", pts), 1.0)], line.npp)
    if not mesh.closed:
        first = np.array([0])
        b.add_eq([(col("E", first), 1.0)], 0.5 * p.m * options.entry_speed**2)
        if options.fixed_line is None:
            b.add_eq([(col("n", first), 1.0)],
                     np.clip(0.0, mesh.n_lo[0], mesh.n_hi[0]))
            b.add_eq([(col("np", first), 1.0)], 0.0)

    # corridor, trust region and conditioning bounds (pins govern the offset
    # in fixed-line mode)
    if options.fixed_line is None:
        n_lo, n_hi = mesh.n_lo.copy(), mesh.n_hi.copy()
        if options.trust_radius is not None:
            n_lo = np.maximum(n_lo, prev.n - options.trust_radius)
            n_hi = np.minimum(n_hi, prev.n + options.trust_radius)
            bad = n_lo > n_hi
            n_lo[bad] = mesh.n_lo[bad]
            n_hi[bad] = mesh.n_hi[bad]
        b.set_lower(col("n", pts), n_lo)
        b.set_upper(col("n", pts), n_hi)
    b.set_lower(col("v", pts), options.v_floor)
    b.set_lower(col("E", pts), 0.5 * p.m * options.v_floor**2)
    b.set_lower(col("L", pts), 1e-6)
    b.set_lower(col("sg", pts), 1e-3)
    b.set_lower(col("FzR", pts), 0.0)
    b.set_lower(col("FzF", pts), 0.0)

    # axle actuator limits: torque as bounds, power against lethargy
    for axle, fw in (("R", "FwR"), ("F", "FwF")):
        T_max = getattr(p, f"T_max_{axle}")
        T_min = getattr(p, f"T_min_{axle}")
        r_w = getattr(p, f"r_w_{axle}")
        if math.isfinite(T_max):
            b.set_upper(col(fw, pts), T_max / r_w)
        if math.isfinite(T_min):
            b.set_lower(col(fw, pts), T_min / r_w)
        P_max = getattr(p, f"P_max_{axle}")
        P_min = getattr(p, f"P_min_{axle}")
        if math.isfinite(P_max):
            b.add_ineq([(col(fw, pts), 1.0), (col("L", pts), -P_max)], 0.0)
        if math.isfinite(P_min):
            b.add_ineq([(col(fw, pts), -1.0), (col("L", pts), P_min)], 0.0)

    # path-length cone: sg >= ||xyz'||
    b.add_soc([
        ([(col("sg", pts), 1.0)], 0.0),
        ([(col("n", pts), mesh.N1[:, 0]), (col("np", pts), mesh.N[:, 0])], mesh.P1[:, 0]),
        ([(col("n", pts), mesh.N1[:, 1]), (col("np", pts), mesh.N[:, 1])], mesh.P1[:, 1]),
        ([(col("n", pts), mesh.N1[:, 2]), (col("np", pts), mesh.N[:, 2])], mesh.P1[:, 2]),
    ])
    # lethargy-speed cone: L v >= 1, balanced so both legs are O(1) at speed
    b.add_soc([
        ([(col("L", pts), SPEED_SCALE), (col("v", pts), 1.0 / SPEED_SCALE)], 0.0),
        ([], np.full(mesh.n_points, 2.0)),
        ([(col("L", pts), SPEED_SCALE), (col("v", pts), -1.0 / SPEED_SCALE)], 0.0),
    ])
    # kinetic-energy cone: E >= m v^2 / 2 (scaled)
    qE = 2.0 / (p.m * SPEED_SCALE**2)
    b.add_soc([
        ([(col("E", pts), qE)], 1.0),
        ([(col("v", pts), 2.0 / SPEED_SCALE)], 0.0),
        ([(col("E", pts), qE)], -1.0),
    ])
    # friction ellipses with effective loads
    for axle in ("R", "F"):
        mu_x, mu_y = getattr(p, f"mu_x_{axle}"), getattr(p, f"mu_y_{axle}")
        b.add_soc([
            ([(col(f"Fzs{axle}", pts), 1.0)], 0.0),
            ([(col(f"Fx{axle}", pts), 1.0 / mu_x)], 0.0),
            ([(col(f"Fy{axle}", pts), 1.0 / mu_y)], 0.0),
        ])
        gamma = getattr(p, f"gamma_{axle}")
        Fz_nom = getattr(p, f"Fz_nom_{axle}")
        if gamma < 0:
            alpha = 2.0 * (1.0 - gamma) / (-gamma * Fz_nom)
            beta = 2.0 / (-gamma * Fz_nom)
            b.add_soc([
                ([(col(f"Fz{axle}", pts), alpha), (col(f"Fzs{axle}", pts), -beta)], 1.0),
                ([(col(f"Fz{axle}", pts), 2.0 / Fz_nom)], 0.0),
                ([(col(f"dFz{axle}", pts), 2.0 / Fz_nom)], 0.0),
                ([(col(f"Fz{axle}", pts), alpha), (col(f"Fzs{axle}", pts), -beta)], -1.0),
            ])
        else:
            b.add_ineq([(col(f"Fzs{axle}", pts), 1.0), (col(f"Fz{axle}", pts), -1.0)], 0.0)
        # wheel-force budget with rolling and cornering resistance, as the
        # rotated cone Fy^2 <= slack * (-C_alpha Fz), legs balanced to their
        # typical magnitudes
        c_r = getattr(p, f"c_r_{axle}")
        C_a = getattr(p, f"C_alpha_{axle}")
        force = p.m * p.g
        gA = force * (mu_x * mu_y / abs(C_a) + c_r + 0.02)  # slack-leg scale
        gB = force * abs(C_a)
        g1 = math.sqrt(gA * gB)
        b.add_soc([
            ([(col(f"Fx{axle}", pts), -1.0 / gA), (col(f"Fw{axle}", pts), 1.0 / gA),
              (col(f"Fz{axle}", pts), -c_r / gA - C_a / gB)], 0.0),
            ([(col(f"Fy{axle}", pts), 2.0 / g1)], 0.0),
            ([(col(f"Fx{axle}", pts), -1.0 / gA), (col(f"Fw{axle}", pts), 1.0 / gA),
              (col(f"Fz{axle}", pts), -c_r / gA + C_a / gB)], 0.0),
        ])

    if options.powertrain is not None:
        options.powertrain.validate(p)
        energy_mod.add_energy_constraints(
            b, layout, prev, options.powertrain,
            options.scenario or energy_mod.EnergyScenario("drain"), p)

    program = b.finalize()
    program.col_scale = _column_scales(layout, p, options)
    layout.theta = theta
    return program, layout


def _column_scales(layout: VariableLayout, p: VehicleParams,
                   options: TranscriptionOptions) -> np.ndarray:
    """Typical magnitude per decision variable; conditions the solve."""
    force = p.m * p.g
    per_field = {
        "n": 1.0, "np": 0.2, "npp": 0.05,
        "E": 0.5 * p.m * SPEED_SCALE**2, "D": force,
        "L": 1.0 / SPEED_SCALE, "v": SPEED_SCALE, "sg": 1.0,
    }
    scales = np.empty(layout.n_vars)
    for name, offset in layout.fields.items():
        scales[offset::layout.n_fields][:layout.n_points] = per_field.get(name, force)
    if layout.n_battery:
        cap = options.powertrain.capacity if options.powertrain else 1.0
        scales[layout.n_points * layout.n_fields:] = cap
    return scales


def extract_iterate(solution: ConicSolution, layout: VariableLayout, mesh: Mesh,
                    params: VehicleParams, options: TranscriptionOptions,
                    iteration: int, surrogate_objective: float) -> TrajectoryIterate:
    """Populate an iterate from a solver solution, with the exact lap time by
    quadrature of the recovered lethargy and path-length factor, and the
    relaxation-tightness diagnostics."""
    if solution.status not in ("optimal", "near_optimal"):
        raise TranscriptionError(f"cannot extract from status {solution.status}")
    x = solution.x
    val = lambda name: layout.value(x, name)
    it = TrajectoryIterate(
        n=val("n"), np_=val("np"), npp=val("npp"), E=val("E"), D=val("D"),
        L=val("L"), v=val("v"), sg=val("sg"), FwR=val("FwR"), FwF=val("FwF"),
        FxR=val("FxR"), FxF=val("FxF"), FyR=val("FyR"), FyF=val("FyF"),
        FzR=val("FzR"), FzF=val("FzF"), FzsR=val("FzsR"), FzsF=val("FzsF"),
        dFzR=val("dFzR"), dFzF=val("dFzF"), Fc=val("Fc"),
        iteration=iteration,
    )
    it.t_lap = exact_lap_time(mesh, it.L, it.sg)
    it.t_lap_surrogate = surrogate_objective
    it.theta = layout.theta
    it.tightness = tightness_report(mesh, params, it)
    if options.powertrain is not None:
        it.battery = x[layout.battery_col(np.arange(layout.n_battery))]
        it.dis = val("dis")
        it.chg = val("chg")
        it.components = {
            comp.name: val(f"comp{i}")
            for i, comp in enumerate(options.powertrain.components)
        }
    return it


def tightness_report(mesh: Mesh, params: VehicleParams,
                     it: TrajectoryIterate) -> dict:
    """Relative slack in the relaxed cones; all should vanish at an optimum.

    The load cones are reported where the friction cone is active (elsewhere
    the effective load is free to float)."""
    xyz1, _ = iterate_geometry(mesh, it.n, it.np_, it.npp)
    gap_sg = (it.sg - np.linalg.norm(xyz1, axis=1)) / np.maximum(it.sg, 1e-9)
    gap_inv = it.L * it.v - 1.0
    gap_E = (it.E - 0.5 * params.m * it.v**2) / np.maximum(it.E, 1e-9)
    out = {
        "path_length": gap_sg,
        "speed_inverse": gap_inv,
        "kinetic_energy": gap_E,
    }
    for axle in ("R", "F"):
        mu_x = getattr(params, f"mu_x_{axle}")
        mu_y = getattr(params, f"mu_y_{axle}")
        Fzs = getattr(it, f"Fzs{axle}")
        demand = np.hypot(getattr(it, f"Fx{axle}") / mu_x,
                          getattr(it, f"Fy{axle}") / mu_y)
        scale = np.maximum(Fzs, 1e-6 * params.m * params.g)
        active = (Fzs - demand) / scale <= 1e-5
        gamma = getattr(params, f"gamma_{axle}")
        Fz_nom = getattr(params, f"Fz_nom_{axle}")
        Fz, dFz = getattr(it, f"Fz{axle}"), getattr(it, f"dFz{axle}")
        cap = gamma / (2 * Fz_nom) * (Fz**2 + dFz**2) + (1 - gamma) * Fz
        out[f"grip_cap_{axle}"] = (cap - Fzs) / scale
        out[f"grip_active_{axle}"] = active
    return out


def nonlinear_residuals(mesh: Mesh, params: VehicleParams,
                        it: TrajectoryIterate) -> dict:
    """Max relative violation of the exact nonconvex relations by an iterate:
    centrifugal force, slope, lap-time objective and the energy-domain
    transform. Evaluated with the exact track/vehicle evaluators."""
    xyz1, xyz2 = iterate_geometry(mesh, it.n, it.np_, it.npp)
    kappa = curvature(xyz1, xyz2)
    fc_exact = 2.0 * it.E * kappa
    scale_f = np.maximum(np.abs(fc_exact), params.m * params.g)
    res_fc = float(np.max(np.abs(it.Fc - fc_exact) / scale_f))

    theta_exact = np.arctan2(xyz1[:, 2], np.hypot(xyz1[:, 0], xyz1[:, 1]))
    theta_used = it.theta if it.theta is not None else theta_exact
    res_theta = float(np.max(np.abs(theta_used - theta_exact) / np.maximum(
        np.abs(theta_exact), 1e-2)))

    res_obj = abs(it.t_lap - it.t_lap_surrogate) / max(it.t_lap, 1e-9)

    # E' in the reference domain implied by collocation vs the true product
    i0, i1, im = mesh.intervals.T
    simpson = (it.E[i1] - it.E[i0]) - mesh.h / 6.0 * (
        it.D[i0] * it.sg[i0] + 4.0 * it.D[im] * it.sg[im] + it.D[i1] * it.sg[i1])
    scale_e = max(mesh.h * float(np.max(np.abs(it.D * it.sg))), 1.0)
    res_energy = float(np.max(np.abs(simpson)) / scale_e)

    return {
        "centrifugal": res_fc,
        "slope": res_theta,
        "objective": res_obj,
        "energy_transform": res_energy,
    }
