"""Hybrid powertrain splitting and battery energy accounting.

The wheel force on each axle is split linearly into named components (engine,
motor, friction brake), each with its own power/torque box. One component may
be battery-coupled; a battery state chain then integrates its force over
traveled distance with the previous-iterate path-length factor, keeping the
augmentation affine. Three lap scenarios constrain the battery boundary
values: drain (start full, may empty), fill (start empty, end full) and
charge-sustain (end at least at the start).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
import numpy as np

from .vehicle import VehicleParams

__all__ = [
    "PowertrainComponent",
    "PowertrainConfig",
    "EnergyScenario",
    "EnergyError",
    "default_hybrid",
    "hybrid_vehicle",
    "add_energy_constraints",
    "battery_recheck",
    "run_scenarios",
    "ScenarioRun",
    "ScenarioComparison",
    "SCENARIOS",
]

_INF = float("inf")
_FUEL_TIE = 1e-11  # objective weight per newton of engine force per meter


class EnergyError(ValueError):
    """Invalid powertrain or scenario configuration."""


@dataclass(frozen=True)
class PowertrainComponent:
    name: str
    axle: str                    # 'R' or 'F'
    P_max: float = _INF          # [W]
    P_min: float = -_INF
    T_max: float = _INF          # [N m]
    T_min: float = -_INF
    battery: bool = False        # force drawn from / regenerated into the battery


@dataclass(frozen=True)
class PowertrainConfig:
    components: tuple[PowertrainComponent, ...]
    capacity: float              # battery capacity [J]
    eta_discharge: float = 1.0
    eta_charge: float = 1.0

    def validate(self, params: VehicleParams) -> None:
        if self.capacity <= 0:
            raise EnergyError("battery capacity must be positive")
        if not 0 < self.eta_discharge <= 1 or not 0 < self.eta_charge <= 1:
            raise EnergyError("efficiencies must lie in (0, 1]")
        if sum(c.battery for c in self.components) != 1:
            raise EnergyError("exactly one battery-coupled component is supported")
        for c in self.components:
            if c.axle not in ("R", "F"):
                raise EnergyError(f"component {c.name}: axle must be 'R' or 'F'")
            if c.P_max > getattr(params, f"P_max_{c.axle}") + 1e-9:
                raise EnergyError(f"component {c.name}: P_max exceeds axle limit")
            if c.T_max > getattr(params, f"T_max_{c.axle}") + 1e-9:
                raise EnergyError(f"component {c.name}: T_max exceeds axle limit")
            if c.P_min < getattr(params, f"P_min_{c.axle}") - 1e-9:
                raise EnergyError(f"component {c.name}: P_min below axle limit")
            if c.T_min < getattr(params, f"T_min_{c.axle}") - 1e-9:
                raise EnergyError(f"component {c.name}: T_min below axle limit")

    @property
    def motor_index(self) -> int:
        return next(i for i, c in enumerate(self.components) if c.battery)


@dataclass(frozen=True)
class EnergyScenario:
    """Battery boundary conditions over one lap."""

    kind: str  # 'drain' | 'fill' | 'sustain'

    def __post_init__(self):
        if self.kind not in SCENARIOS:
            raise EnergyError(f"unknown scenario {self.kind!r}")


SCENARIOS = ("drain", "fill", "sustain")


def hybrid_vehicle(params: VehicleParams, boost_power: float = 120e3,
                   motor_torque: float = 1500.0) -> VehicleParams:
    """Open the front axle actuator envelope for the hybrid drive motor."""
    import dataclasses

    return dataclasses.replace(
        params, P_max_F=max(params.P_max_F, boost_power),
        T_max_F=max(params.T_max_F, motor_torque))


def default_hybrid(params: VehicleParams, capacity: float = 6e5,
                   boost_power: float = 120e3, regen_power: float = 120e3,
                   engine_power: float = 440e3) -> PowertrainConfig:
    """Fixture hybrid: rear engine, battery motor on the front axle, friction
    brakes on both axles.

    The axle separation makes battery charging flow through the front wheel
    force alone: whenever the motor absorbs, the front axle is net braking,
    so regeneration can never exceed the braking demand. ``params`` must
    admit the motor on the front axle (see ``hybrid_vehicle``).
    """
    if engine_power > params.P_max_R:
        raise EnergyError("engine exceeds the rear axle power limit")
    engine = PowertrainComponent(
        "engine", "R", P_max=engine_power, P_min=0.0,
        T_max=min(params.T_max_R, 4300.0), T_min=0.0)
    motor = PowertrainComponent(
        "motor", "F", P_max=min(boost_power, params.P_max_F),
        P_min=-regen_power,
        T_max=min(params.T_max_F, 1500.0), T_min=max(params.T_min_F, -1500.0),
        battery=True)
    brake_r = PowertrainComponent("brake_R", "R", P_max=0.0, T_max=0.0,
                                  T_min=params.T_min_R)
    brake_f = PowertrainComponent("brake_F", "F", P_max=0.0, T_max=0.0,
                                  T_min=params.T_min_F)
    return PowertrainConfig((engine, motor, brake_r, brake_f), capacity=capacity)


def add_energy_constraints(builder, layout, prev, config: PowertrainConfig,
                           scenario: EnergyScenario, params: VehicleParams) -> None:
    """Append force-split, component-actuator, battery-chain and scenario rows.

    ``layout`` must have been created with this powertrain so the component,
    charge-split and battery columns already exist. The battery chain uses the
    previous-iterate path-length factor (affine); quadrature weights match the
    state collocation so midpoint motor forces are accounted.
    """
    pts = np.arange(layout.n_points)
    col = layout.col
    sg_prev = prev.sg

    # per-axle force split
    for axle, fw in (("R", "FwR"), ("F", "FwF")):
        terms = [(col(fw, pts), 1.0)]
        for i, comp in enumerate(config.components):
            if comp.axle == axle:
                terms.append((col(f"comp{i}", pts), -1.0))
        builder.add_eq(terms, 0.0)

    # component actuator boxes: torque as bounds, power against lethargy
    for i, comp in enumerate(config.components):
        cols = col(f"comp{i}", pts)
        r_w = getattr(params, f"r_w_{comp.axle}")
        if math.isfinite(comp.T_max):
            builder.set_upper(cols, comp.T_max / r_w)
        if math.isfinite(comp.T_min):
            builder.set_lower(cols, comp.T_min / r_w)
        if math.isfinite(comp.P_max):
            builder.add_ineq([(cols, 1.0), (col("L", pts), -comp.P_max)], 0.0)
        if math.isfinite(comp.P_min):
            builder.add_ineq([(cols, -1.0), (col("L", pts), comp.P_min)], 0.0)

    # motor charge/discharge split
    im = config.motor_index
    builder.add_eq([(col(f"comp{im}", pts), 1.0), (col("dis", pts), -1.0),
                    (col("chg", pts), 1.0)], 0.0)
    builder.set_lower(col("dis", pts), 0.0)
    builder.set_lower(col("chg", pts), 0.0)

    # microscopic fuel-use penalty: engine output costs something, braking
    # regeneration does not, so battery charge comes from the brakes whenever
    # they can supply it (the lap-time distortion is orders below epsilon)
    for i, comp in enumerate(config.components):
        if not comp.battery and comp.P_max > 0:
            builder.add_objective(col(f"comp{i}", pts), _FUEL_TIE * layout.h)
    builder.add_objective(col("chg", pts), 0.1 * _FUEL_TIE * layout.h)
    builder.add_objective(col("dis", pts), 0.1 * _FUEL_TIE * layout.h)

    # battery chain over intervals, Simpson-weighted like the energy state
    i0, i1, im_ = layout.intervals.T
    b0 = layout.battery_col(np.arange(layout.n_int))
    b1 = layout.battery_col(np.arange(layout.n_int) + 1)
    w = layout.h / 6.0
    terms = [(b1, 1.0), (b0, -1.0)]
    for pts_i, weight in ((i0, w), (im_, 4.0 * w), (i1, w)):
        terms.append((col("dis", pts_i), weight * sg_prev[pts_i] / config.eta_discharge))
        terms.append((col("chg", pts_i), -weight * sg_prev[pts_i] * config.eta_charge))
    builder.add_eq(terms, 0.0)

    # box and boundary conditions
    all_b = layout.battery_col(np.arange(layout.n_battery))
    builder.set_lower(all_b, 0.0)
    builder.set_upper(all_b, config.capacity)
    first = layout.battery_col(np.array([0]))
    last = layout.battery_col(np.array([layout.n_battery - 1]))
    if scenario.kind == "drain":
        builder.set_lower(first, config.capacity)
    elif scenario.kind == "fill":
        builder.set_upper(first, 0.0)
        builder.set_lower(last, config.capacity)
    else:  # sustain
        builder.add_ineq([(first, 1.0), (last, -1.0)], 0.0)


@dataclass
class ScenarioRun:
    scenario: str
    mode: str               # free | fixed
    status: str
    t_lap: float
    iterations: int
    battery_min: float
    battery_max: float
    battery_end: float
    recheck_error: float    # battery chain re-integrated with solved factors


@dataclass
class ScenarioComparison:
    runs: list[ScenarioRun]
    capacity: float

    def t(self, scenario: str, mode: str) -> float:
        for r in self.runs:
            if r.scenario == scenario and r.mode == mode:
                return r.t_lap
        raise KeyError((scenario, mode))

    def to_rows(self) -> list[dict]:
        base = self.t("drain", "free")
        return [
            {"scenario": r.scenario, "mode": r.mode, "status": r.status,
             "t_lap": r.t_lap, "delta_to_drain_free": r.t_lap - base,
             "battery_min": r.battery_min, "battery_max": r.battery_max,
             "battery_end": r.battery_end, "recheck_error": r.recheck_error}
            for r in self.runs
        ]


def run_scenarios(track, params: VehicleParams, pt_config: PowertrainConfig,
                  config) -> ScenarioComparison:
    """Six lap optimizations: each scenario with a free trajectory and with
    the trajectory pinned to the drain scenario's free solution."""
    import dataclasses as _dc

    from . import scp as scp_mod  # local import: scp depends on this module

    pt_config.validate(params)
    runs: list[ScenarioRun] = []
    mesh = None
    drain_line = None
    for kind in SCENARIOS:
        for mode in ("free", "fixed"):
            cfg = _dc.replace(config, powertrain=pt_config,
                              scenario=EnergyScenario(kind))
            if mode == "free":
                rep = scp_mod.solve_min_lap_time(track, params, cfg, mesh=mesh)
            else:
                if drain_line is None:
                    raise EnergyError("drain free run must precede fixed runs")
                rep = scp_mod.solve_fixed_trajectory(track, params, cfg,
                                                     drain_line, mesh=mesh)
            mesh = rep.mesh
            it = rep.final
            if it is None or it.battery is None:
                runs.append(ScenarioRun(kind, mode, rep.status, float("nan"),
                                        rep.n_iterations, float("nan"),
                                        float("nan"), float("nan"), float("nan")))
                continue
            layout = _scenario_layout(mesh, cfg)
            re_chain = battery_recheck(layout, pt_config, it.dis, it.chg,
                                       it.sg, float(it.battery[0]))
            err = float(np.max(np.abs(re_chain - it.battery))) / pt_config.capacity
            runs.append(ScenarioRun(
                kind, mode, rep.status, rep.t_lap, rep.n_iterations,
                float(it.battery.min()), float(it.battery.max()),
                float(it.battery[-1]), err))
            if kind == "drain" and mode == "free":
                drain_line = it.path_state()
    return ScenarioComparison(runs=runs, capacity=pt_config.capacity)


def _scenario_layout(mesh, cfg):
    from .transcription import TranscriptionOptions, layout_variables
    opts = TranscriptionOptions(samples=mesh.n_nodes, powertrain=cfg.powertrain,
                                scenario=cfg.scenario)
    layout = layout_variables(mesh.n_nodes, opts, closed=mesh.closed)
    import dataclasses as _dc
    return _dc.replace(layout, h=mesh.h, intervals=mesh.intervals)


def battery_recheck(layout, config: PowertrainConfig, dis: np.ndarray,
                    chg: np.ndarray, sg: np.ndarray, e0: float) -> np.ndarray:
    """Re-integrate the battery chain from solved forces and solved (not
    previous-iterate) path-length factors; quantifies linearization error."""
    i0, i1, im_ = layout.intervals.T
    w = layout.h / 6.0
    q = dis / config.eta_discharge - chg * config.eta_charge
    flow = w * (q[i0] * sg[i0] + 4.0 * q[im_] * sg[im_] + q[i1] * sg[i1])
    return np.concatenate([[e0], e0 - np.cumsum(flow)])
