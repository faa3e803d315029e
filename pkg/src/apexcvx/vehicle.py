"""Quasi-steady-state single-track vehicle model.

Holds every vehicle constant and provides exact evaluators for the force and
moment balances, the load-sensitive axle friction ellipses, cornering/rolling
resistance wheel-force budgets and actuator limits. These evaluators double as
the independent oracle for the conic-optimization route: the performance
envelope here is computed by plain bisection with small linear solves, never
through a conic solver.

Sign conventions: wheel force F_w < 0 is braking, cornering stiffness
C_alpha < 0, grip load sensitivity gamma <= 0.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

__all__ = [
    "VehicleParams",
    "OperatingPoint",
    "VehicleError",
    "load_vehicle",
    "save_vehicle",
    "default_vehicle",
    "residual_balances",
    "effective_grip_load",
    "friction_feasible",
    "wheel_force_budget",
    "actuator_limits",
    "axle_loads",
    "lateral_force_split",
    "lateral_load_transfer",
    "axle_fx_range",
    "longitudinal_envelope",
    "lateral_limit",
    "ggv_envelope",
    "GgvSlice",
]

_INF = float("inf")


class VehicleError(ValueError):
    """Invalid vehicle parameters or operating point."""


@dataclass(frozen=True)
class VehicleParams:
    """All vehicle constants, SI units, per-axle values suffixed _R/_F."""

    m: float = 798.0              # mass [kg]
    g: float = 9.81               # gravity [m/s^2]
    w_veh: float = 2.0            # vehicle width [m]
    rho: float = 1.2              # air density [kg/m^3]
    CdA: float = 1.5              # drag area [m^2]
    ClA: float = 4.4              # downforce area [m^2]
    l_F: float = 1.7              # CoG to front axle [m]
    l_R: float = 1.9              # CoG to rear axle [m]
    h_G: float = 0.31             # CoG height [m]
    l_GP: float = 0.15            # CoG to CoP, longitudinal [m]
    h_P: float = 0.42             # CoP height [m]
    mu_x_R: float = 1.65
    mu_x_F: float = 1.65
    mu_y_R: float = 1.75
    mu_y_F: float = 1.75
    Fz_nom_R: float = 3000.0      # per-tire load at nominal grip [N]
    Fz_nom_F: float = 3000.0
    gamma_R: float = -0.10        # grip loss per load, <= 0
    gamma_F: float = -0.10
    h_rc_R: float = 0.07          # roll-center heights [m]
    h_rc_F: float = 0.04
    w_axle_R: float = 1.55        # track widths [m]
    w_axle_F: float = 1.60
    xi: float = 0.45              # roll-stiffness distribution to the front
    C_alpha_R: float = -22.0      # normalized cornering stiffness, < 0
    C_alpha_F: float = -22.0
    c_r_R: float = 0.008          # rolling-resistance coefficients
    c_r_F: float = 0.008
    P_max_R: float = 575e3        # axle power limits [W]
    P_max_F: float = 0.0
    P_min_R: float = -_INF        # friction brakes: unbounded power
    P_min_F: float = -_INF
    T_max_R: float = 5200.0       # axle torque limits [N m]
    T_max_F: float = 0.0
    T_min_R: float = -7500.0
    T_min_F: float = -9500.0
    r_w_R: float = 0.36           # wheel radii [m]
    r_w_F: float = 0.33

    def __post_init__(self):
        positive = ["m", "g", "rho", "l_F", "l_R", "w_axle_R", "w_axle_F",
                    "r_w_R", "r_w_F", "w_veh", "mu_x_R", "mu_x_F", "mu_y_R",
                    "mu_y_F", "Fz_nom_R", "Fz_nom_F"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise VehicleError(f"{name} must be positive")
        if self.gamma_R > 0 or self.gamma_F > 0:
            raise VehicleError("gamma must be <= 0")
        if self.C_alpha_R >= 0 or self.C_alpha_F >= 0:
            raise VehicleError("C_alpha must be < 0")
        if not 0.0 <= self.xi <= 1.0:
            raise VehicleError("xi must be in [0, 1]")

    @property
    def wheelbase(self) -> float:
        return self.l_F + self.l_R

    def axle(self, name: str) -> tuple[float, float]:
        """(rear, front) pair of a per-axle parameter family, e.g. 'mu_x'."""
        return getattr(self, f"{name}_R"), getattr(self, f"{name}_F")

    def drag(self, E_kin: float) -> float:
        return self.rho * self.CdA * E_kin / self.m

    def downforce(self, E_kin: float) -> float:
        return self.rho * self.ClA * E_kin / self.m


@dataclass
class OperatingPoint:
    """One quasi-steady-state operating point of the vehicle."""

    E_kin: float
    v: float
    dt_ds: float              # lethargy, 1/v at a consistent point
    F_c: float                # centrifugal force
    theta: float = 0.0        # slope [rad]
    phi: float = 0.0          # banking [rad]
    F_x_R: float = 0.0
    F_x_F: float = 0.0
    F_y_R: float = 0.0
    F_y_F: float = 0.0
    F_z_R: float = 0.0
    F_z_F: float = 0.0
    F_zs_R: float = 0.0       # effective (grip-weighted) loads F_z*
    F_zs_F: float = 0.0
    dF_z_R: float = 0.0       # lateral per-axle load transfer
    dF_z_F: float = 0.0
    F_w_R: float = 0.0
    F_w_F: float = 0.0

    @property
    def F_y(self) -> float:
        return self.F_y_R + self.F_y_F


_FIELDS = {f.name for f in dataclasses.fields(VehicleParams)}


def load_vehicle(path: str | Path) -> VehicleParams:
    """Read a flat JSON parameter object. Unknown keys are rejected;
    null means unbounded for the P/T limit fields."""
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise VehicleError("vehicle file must hold a JSON object")
    unknown = set(data) - _FIELDS
    if unknown:
        raise VehicleError(f"unknown vehicle keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if value is None:
            value = -_INF if key.startswith(("P_min", "T_min")) else _INF
        kwargs[key] = float(value)
    return VehicleParams(**kwargs)


def save_vehicle(params: VehicleParams, path: str | Path) -> None:
    out = {}
    for key, value in dataclasses.asdict(params).items():
        out[key] = None if math.isinf(value) else value
    Path(path).write_text(json.dumps(out, indent=2) + "\n")


def default_vehicle() -> VehicleParams:
    """Fixture defaults for a high-downforce open-wheel car (not calibrated)."""
    return VehicleParams()


# ---------------------------------------------------------------------------
# exact constraint evaluators


def residual_balances(p: VehicleParams, op: OperatingPoint, dEkin_ds: float) -> np.ndarray:
    """Residuals of the longitudinal/lateral/vertical force balances, the yaw
    and pitch moment balances and the two roll load-transfer identities, in
    that order. All zero iff the operating point is balanced."""
    ct, st = math.cos(op.theta), math.sin(op.theta)
    cp, sp = math.cos(op.phi), math.sin(op.phi)
    drag = p.drag(op.E_kin)
    down = p.downforce(op.E_kin)
    F_x = op.F_x_R + op.F_x_F
    r_long = dEkin_ds - (F_x - cp * st * p.m * p.g - drag)
    r_lat = op.F_y_R + op.F_y_F - cp * op.F_c + sp * p.m * p.g
    r_vert = op.F_z_R + op.F_z_F - cp * ct * p.m * p.g - sp * ct * op.F_c - down
    r_yaw = p.l_F * op.F_y_F - p.l_R * op.F_y_R
    r_pitch = (-p.l_F * op.F_z_F + p.l_R * op.F_z_R - p.h_G * F_x
               - p.l_GP * down - (p.h_P - p.h_G) * drag)
    dR, dF = lateral_load_transfer(p, op.F_y_R, op.F_y_F)
    return np.array([r_long, r_lat, r_vert, r_yaw, r_pitch,
                     op.dF_z_R - dR, op.dF_z_F - dF])


def lateral_load_transfer(p: VehicleParams, F_y_R: float, F_y_F: float) -> tuple[float, float]:
    """Per-axle tire load difference from the steady-state roll balance."""
    F_y = F_y_R + F_y_F
    elastic = p.h_G * F_y - p.h_rc_R * F_y_R - p.h_rc_F * F_y_F
    dR = 2.0 * (p.h_rc_R * F_y_R + (1.0 - p.xi) * elastic) / p.w_axle_R
    dF = 2.0 * (p.h_rc_F * F_y_F + p.xi * elastic) / p.w_axle_F
    return dR, dF


def effective_grip_load(p: VehicleParams, axle: str, F_z: float, dF_z: float) -> float:
    """Upper bound on the effective load F_z* entering the friction ellipse.

    Quadratic in (F_z, dF_z); concave for gamma <= 0, so any load transfer at
    fixed axle load strictly reduces usable grip.
    """
    gamma, Fz_nom = p.axle("gamma"), p.axle("Fz_nom")
    i = 0 if axle == "R" else 1
    return gamma[i] / (2.0 * Fz_nom[i]) * (F_z**2 + dF_z**2) + (1.0 - gamma[i]) * F_z


def friction_feasible(p: VehicleParams, op: OperatingPoint) -> tuple[float, float]:
    """Per-axle friction-ellipse margins (>= 0 means feasible).

    The effective load is taken at its upper bound; the margin is that bound
    minus the ellipse demand ||(F_x/mu_x, F_y/mu_y)||.
    """
    if op.F_z_R < 0 or op.F_z_F < 0:
        raise VehicleError("negative vertical load")
    dR, dF = lateral_load_transfer(p, op.F_y_R, op.F_y_F)
    margins = []
    for axle, F_x, F_y, F_z, d in (
        ("R", op.F_x_R, op.F_y_R, op.F_z_R, dR),
        ("F", op.F_x_F, op.F_y_F, op.F_z_F, dF),
    ):
        mu_x, mu_y = getattr(p, f"mu_x_{axle}"), getattr(p, f"mu_y_{axle}")
        cap = effective_grip_load(p, axle, F_z, d)
        margins.append(cap - math.hypot(F_x / mu_x, F_y / mu_y))
    return margins[0], margins[1]


def wheel_force_budget(p: VehicleParams, op: OperatingPoint) -> tuple[float, float]:
    """Per-axle upper bound on longitudinal tire force given wheel force,
    lateral force and load: F_w - c_r F_z + F_y^2 / (C_alpha F_z). The last
    term is a loss (C_alpha < 0). The conic restatement of the same budget is
    checked for agreement at the returned boundary."""
    budgets = []
    for axle, F_w, F_y, F_z in (
        ("R", op.F_w_R, op.F_y_R, op.F_z_R),
        ("F", op.F_w_F, op.F_y_F, op.F_z_F),
    ):
        if F_z <= 0:
            raise VehicleError("vertical load must be positive")
        c_r = getattr(p, f"c_r_{axle}")
        C_a = getattr(p, f"C_alpha_{axle}")
        budget = F_w - c_r * F_z + F_y**2 / (C_a * F_z)
        if not _soc_budget_holds(F_x=budget, F_w=F_w, F_y=F_y, F_z=F_z, c_r=c_r,
                                 C_a=C_a, tol=1e-6 * max(1.0, abs(budget))):
            raise VehicleError("conic budget form disagrees with the explicit form")
        budgets.append(budget)
    return budgets[0], budgets[1]


def _soc_budget_holds(F_x: float, F_w: float, F_y: float, F_z: float,
                      c_r: float, C_a: float, tol: float = 0.0) -> bool:
    lhs = -F_x + F_w - (c_r + C_a) * F_z
    rhs = math.hypot(2.0 * F_y, F_x - F_w + (c_r - C_a) * F_z)
    return lhs + tol >= rhs


def actuator_limits(p: VehicleParams, op: OperatingPoint) -> dict:
    """Wheel-force bounds from power and torque limits at this lethargy.

    Returns per-axle ceiling/floor and feasibility of the current F_w.
    """
    if op.dt_ds <= 0:
        raise VehicleError("lethargy must be positive")
    out = {}
    for axle, F_w in (("R", op.F_w_R), ("F", op.F_w_F)):
        hi = min(getattr(p, f"P_max_{axle}") * op.dt_ds,
                 getattr(p, f"T_max_{axle}") / getattr(p, f"r_w_{axle}"))
        lo = max(getattr(p, f"P_min_{axle}") * op.dt_ds,
                 getattr(p, f"T_min_{axle}") / getattr(p, f"r_w_{axle}"))
        out[axle] = {"ceiling": hi, "floor": lo, "feasible": lo <= F_w <= hi}
    return out


# ---------------------------------------------------------------------------
# performance envelope (bisection oracle, flat ground)


def axle_loads(p: VehicleParams, v: float, F_x_total: float) -> tuple[float, float]:
    """Vertical axle loads on flat ground from the vertical and pitch balances."""
    E = 0.5 * p.m * v**2
    W = p.m * p.g + p.downforce(E)
    M = p.h_G * F_x_total + p.l_GP * p.downforce(E) + (p.h_P - p.h_G) * p.drag(E)
    F_z_R = (W * p.l_F + M) / p.wheelbase
    F_z_F = (W * p.l_R - M) / p.wheelbase
    return F_z_R, F_z_F


def lateral_force_split(p: VehicleParams, F_y: float) -> tuple[float, float]:
    """Axle shares of a total lateral force per the yaw balance."""
    return F_y * p.l_F / p.wheelbase, F_y * p.l_R / p.wheelbase


def axle_fx_range(p: VehicleParams, axle: str, F_z: float, F_y: float, dF_z: float,
                  v: float) -> Optional[tuple[float, float]]:
    """Feasible longitudinal tire-force interval for one axle.

    None when the lateral demand alone exceeds grip. Thrust is capped by both
    the friction ellipse and the powertrain wheel-force budget; braking is
    grip-limited only (brakes outrun the tires; wheel-force floors cap
    regeneration, not tire force).
    """
    if F_z <= 1e-9:
        return None
    mu_x = getattr(p, f"mu_x_{axle}")
    mu_y = getattr(p, f"mu_y_{axle}")
    cap = effective_grip_load(p, axle, F_z, dF_z)
    lat = F_y / mu_y
    if cap <= 0 or abs(lat) >= cap:
        return None
    f_fric = mu_x * math.sqrt(cap**2 - lat**2)
    F_w_hi = min(getattr(p, f"P_max_{axle}") / v,
                 getattr(p, f"T_max_{axle}") / getattr(p, f"r_w_{axle}"))
    loss = F_y**2 / (getattr(p, f"C_alpha_{axle}") * F_z)
    hi = min(f_fric, F_w_hi - getattr(p, f"c_r_{axle}") * F_z + loss)
    lo = -f_fric
    if lo > hi:
        return None
    return lo, hi


def _total_fx_range(p: VehicleParams, v: float, ay: float,
                    F_x_total: float) -> Optional[tuple[float, float]]:
    """Feasible per-axle interval sum, with loads evaluated at F_x_total."""
    F_z_R, F_z_F = axle_loads(p, v, F_x_total)
    F_y_R, F_y_F = lateral_force_split(p, p.m * ay)
    dR, dF = lateral_load_transfer(p, F_y_R, F_y_F)
    r = axle_fx_range(p, "R", F_z_R, F_y_R, dR, v)
    f = axle_fx_range(p, "F", F_z_F, F_y_F, dF, v)
    if r is None or f is None:
        return None
    return r[0] + f[0], r[1] + f[1]


def _bisect_consistent_fx(p: VehicleParams, v: float, ay: float,
                          upper: bool, iters: int = 60) -> Optional[float]:
    """Largest (upper) or smallest total F_x consistent with the loads it
    induces through pitch transfer.

    The admissible set {F : loads feasible and F within the per-axle budget
    at those loads} is an interval, so the boundary is found by bisection
    between an interior anchor and the always-infeasible outer bracket. The
    anchor is scanned on a coarse grid because extreme F fully unloads one
    axle (range undefined there).
    """

    def pred(F: float) -> bool:
        rng = _total_fx_range(p, v, ay, F)
        if rng is None:
            return False
        return (F <= rng[1]) if upper else (F >= rng[0])

    scale = p.m * p.g * 8.0 + p.rho * p.ClA * v**2 * 2.0
    anchor = None
    if pred(0.0):  # fast path: coasting is feasible away from the lateral limit
        anchor = 0.0
    else:
        candidates = np.linspace(-scale, scale, 17)
        if not upper:
            candidates = candidates[::-1]
        anchor = next((F for F in candidates if pred(F)), None)
        if anchor is None:
            return None
    a, b = anchor, (scale if upper else -scale)
    for _ in range(iters):
        mid = 0.5 * (a + b)
        if pred(mid):
            a = mid
        else:
            b = mid
    return a


def longitudinal_envelope(p: VehicleParams, v: float, ay: float
                          ) -> Optional[tuple[float, float]]:
    """(a_x_min, a_x_max) reachable at speed v and lateral acceleration ay,
    on flat ground, including aerodynamic drag. None when infeasible."""
    if v <= 0:
        raise VehicleError("speed must be positive")
    hi = _bisect_consistent_fx(p, v, ay, upper=True)
    lo = _bisect_consistent_fx(p, v, ay, upper=False)
    if hi is None or lo is None:
        return None
    drag = p.drag(0.5 * p.m * v**2)
    return (lo - drag) / p.m, (hi - drag) / p.m


def max_longitudinal_accel(p: VehicleParams, v: float, ay: float) -> Optional[float]:
    """Largest sustainable a_x at (v, ay) on flat ground, drag included."""
    hi = _bisect_consistent_fx(p, v, ay, upper=True)
    if hi is None:
        return None
    return (hi - p.drag(0.5 * p.m * v**2)) / p.m


def min_longitudinal_accel(p: VehicleParams, v: float, ay: float) -> Optional[float]:
    """Strongest braking a_x at (v, ay) on flat ground, drag included."""
    lo = _bisect_consistent_fx(p, v, ay, upper=False)
    if lo is None:
        return None
    return (lo - p.drag(0.5 * p.m * v**2)) / p.m


def lateral_limit(p: VehicleParams, v: float, iters: int = 60) -> float:
    """Largest feasible lateral acceleration at speed v (pure cornering,
    no longitudinal tire force), by bisection with the roll-transfer fixed
    point evaluated directly."""
    if v <= 0:
        raise VehicleError("speed must be positive")

    def feasible(ay: float) -> bool:
        F_z_R, F_z_F = axle_loads(p, v, 0.0)
        F_y_R, F_y_F = lateral_force_split(p, p.m * ay)
        dR, dF = lateral_load_transfer(p, F_y_R, F_y_F)
        for axle, F_y, F_z, d in (("R", F_y_R, F_z_R, dR), ("F", F_y_F, F_z_F, dF)):
            cap = effective_grip_load(p, axle, F_z, d)
            if cap <= 0 or abs(F_y) / getattr(p, f"mu_y_{axle}") > cap:
                return False
        return True

    if not feasible(0.0):
        return 0.0
    lo, hi = 0.0, 30.0 * p.g
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return lo


@dataclass
class GgvSlice:
    """One constant-speed slice of the acceleration envelope."""

    v: float
    ay: np.ndarray
    ax_max: np.ndarray
    ax_min: np.ndarray
    ay_max: float
    feasible: bool


def ggv_envelope(p: VehicleParams, speeds: np.ndarray, n_lat: int = 33) -> list[GgvSlice]:
    """Acceleration envelope slices over the given speeds (flat ground).

    Sweeps lateral acceleration symmetrically to the pure-cornering limit and
    bounds longitudinal acceleration at each point. Infeasible speeds yield an
    empty, flagged slice.
    """
    slices = []
    for v in np.asarray(speeds, dtype=float):
        if v <= 0:
            raise VehicleError("speeds must be positive")
        ay_cap = lateral_limit(p, v)
        if ay_cap <= 0.0 or longitudinal_envelope(p, v, 0.0) is None:
            slices.append(GgvSlice(v, np.array([]), np.array([]), np.array([]),
                                   0.0, feasible=False))
            continue
        ay = np.linspace(-ay_cap, ay_cap, n_lat)
        ax_hi = np.empty(n_lat)
        ax_lo = np.empty(n_lat)
        for i, a in enumerate(ay):
            rng = longitudinal_envelope(p, v, a)
            if rng is None:
                # lateral sweep touches the boundary; collapse to the drag line
                drag = p.drag(0.5 * p.m * v**2)
                rng = (-drag / p.m, -drag / p.m)
            ax_lo[i], ax_hi[i] = rng
        slices.append(GgvSlice(v, ay, ax_hi, ax_lo, ay_cap, feasible=True))
    return slices
