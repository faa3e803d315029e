"""Comparison methods: minimum-curvature racing line and apex-finding profiler.

Both serve as independent cross-checks of the conic lap-time route. The
minimum-curvature line is a single convex quadratic program (expressed through
the conic interface) on the curvature linearized about the centerline; the
apex profiler computes per-sample pure-cornering speed limits and runs
acceleration-limited forward/backward passes over a fixed curvature profile.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .conic import OK_STATUSES, ProgramBuilder, SolverTolerances, conic_solve
from .track import (PathState, RibbonDerivatives, TrackRibbon, curvature,
                    curvature_gradient, fd_matrices)
from .vehicle import (VehicleParams, _total_fx_range, max_longitudinal_accel,
                      min_longitudinal_accel)

__all__ = [
    "SpeedProfile",
    "min_curvature_line",
    "apex_speed_profile",
    "top_speed",
    "pure_cornering_speed",
]

_TIE_BREAK = 1e-8  # weight pulling the offset toward zero on flat objectives


@dataclass
class SpeedProfile:
    """Speed trace of a fixed line with the limiting regime per sample."""

    v: np.ndarray
    regime: np.ndarray       # grip | power | torque | braking | corner-apex
    lap_time: float
    v_corner: np.ndarray     # pure-cornering limit per sample


def min_curvature_line(track: TrackRibbon, derivs: RibbonDerivatives,
                       w_veh: float) -> PathState:
    """Offset profile minimizing summed squared linearized curvature.

    The curvature of the offset line is linearized about the centerline and
    the squared sum is minimized subject to the corridor bounds, with a tiny
    norm regularization breaking flat ties (straight corridors return the
    centerline). Offset derivatives follow the same finite-difference
    operators used to couple n' and n'' to n.
    """
    closed = track.closed
    m = track.n_samples - 1 if closed else track.n_samples
    h = float(track.s_ref[1] - track.s_ref[0])
    if not np.allclose(np.diff(track.s_ref), h, rtol=1e-6):
        raise ValueError("min-curvature line needs a uniform grid")
    D1, D2 = fd_matrices(m, h, closed)

    P1, P2 = derivs.P1[:m], derivs.P2[:m]
    N, N1, N2 = track.N[:m], derivs.N1[:m], derivs.N2[:m]
    kappa_c = curvature(P1, P2)
    G = curvature_gradient(P1, P2)
    # chain rule through the affine geometry maps
    gn = G[:, 0] * N1[:, 0] + G[:, 1] * N1[:, 1] + G[:, 2] * N2[:, 0] + G[:, 3] * N2[:, 1]
    gnp = (G[:, 0] * N[:, 0] + G[:, 1] * N[:, 1]
           + 2.0 * (G[:, 2] * N1[:, 0] + G[:, 3] * N1[:, 1]))
    gnpp = G[:, 2] * N[:, 0] + G[:, 3] * N[:, 1]
    K = (sparse.diags(gn) + sparse.diags(gnp) @ D1 + sparse.diags(gnpp) @ D2).tocsr()

    b = ProgramBuilder(m + 1)
    t_col = m
    b.add_objective(np.array([t_col]), 1.0)
    rows = [(np.array([t_col]), np.array([1.0]), 0.0)]
    for i in range(m):
        row = K.getrow(i)
        rows.append((row.indices.astype(np.int64), row.data, float(kappa_c[i])))
    mu = math.sqrt(_TIE_BREAK)
    for j in range(m):
        rows.append((np.array([j]), np.array([mu]), 0.0))
    b.add_soc_block(rows)
    cols = np.arange(m)
    b.set_lower(cols, track.n_min[:m] + 0.5 * w_veh)
    b.set_upper(cols, track.n_max[:m] - 0.5 * w_veh)

    sol = conic_solve(b.finalize(), SolverTolerances())
    if sol.status not in OK_STATUSES:
        raise RuntimeError(f"min-curvature program failed: {sol.status}")
    n = sol.x[:m]
    np1 = D1 @ n
    np2 = D2 @ n
    if closed:
        n = np.append(n, n[0])
        np1 = np.append(np1, np1[0])
        np2 = np.append(np2, np2[0])
    return PathState(n, np1, np2)


# ---------------------------------------------------------------------------
# apex-finding profiler


def top_speed(p: VehicleParams, iters: int = 60) -> float:
    """Straight-line top speed (thrust budget meets drag)."""
    lo, hi = 1.0, 200.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        ax = max_longitudinal_accel(p, mid, 0.0)
        if ax is not None and ax > 0:
            lo = mid
        else:
            hi = mid
    return lo


def pure_cornering_speed(p: VehicleParams, kappa: float, v_cap: float,
                         iters: int = 50, tol: float = 1e-6) -> float:
    """Largest speed sustainable through curvature ``kappa``: all grip beyond
    the drag-sustaining thrust goes to cornering. Bisection with the
    load-transfer balance evaluated in the loop; matches the envelope's
    a_x = 0 boundary."""
    k = abs(kappa)
    if k < 1e-9:
        return v_cap

    def feasible(v: float) -> bool:
        thrust = p.drag(0.5 * p.m * v**2)
        rng = _total_fx_range(p, v, v**2 * k, thrust)
        return rng is not None and rng[0] <= thrust <= rng[1]

    if feasible(v_cap):
        return v_cap
    lo, hi = 1.0, v_cap
    while hi - lo > tol and iters > 0:
        iters -= 1
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return lo


def apex_speed_profile(kappa: np.ndarray, seg_lengths: np.ndarray,
                       params: VehicleParams, closed: bool = True) -> SpeedProfile:
    """Forward-backward acceleration-limited profile over a fixed line.

    ``kappa`` holds per-sample curvature of the line; ``seg_lengths`` the
    distances between consecutive samples (wrapping for closed tracks, so one
    entry per sample; one fewer for open tracks). Sample speeds start at the
    pure-cornering limits, a forward pass applies drive/grip limits and a
    backward pass applies braking limits; lap time is the trapezoidal
    quadrature of inverse speed.
    """
    kappa = np.asarray(kappa, dtype=float)
    ds = np.asarray(seg_lengths, dtype=float)
    m = len(kappa)
    if np.any(~np.isfinite(kappa)):
        raise ValueError("curvature must be finite")
    if np.any(ds <= 0):
        raise ValueError("arc lengths must be positive")
    if len(ds) != (m if closed else m - 1):
        raise ValueError("segment count does not match the sample count")

    v_cap = top_speed(params)
    v_corner = np.array([pure_cornering_speed(params, k, v_cap) for k in kappa])
    v = v_corner.copy()
    regime = np.where(v_corner < v_cap, "corner-apex", "power").astype(object)

    def ahead(i):  # segment from sample i to its successor
        return (i + 1) % m, ds[i]

    def forward_sweep(start):
        order = range(start, start + m) if closed else range(m - 1)
        for idx in order:
            i = idx % m
            j, d = ahead(i)
            if not closed and i >= m - 1:
                break
            # speeds never exceed the corner limit, so the slightly shrunk
            # lateral demand keeps the envelope query feasible
            ay = 0.9999 * v[i] ** 2 * abs(kappa[i])
            ax = max_longitudinal_accel(params, v[i], ay)
            if ax is None:
                ax = 0.0
            v_reach = math.sqrt(max(v[i] ** 2 + 2.0 * max(ax, 0.0) * d, 1.0))
            if v_reach < v[j]:
                v[j] = v_reach
                regime[j] = _drive_regime(params, v[j])

    def backward_sweep(start):
        order = range(start, start - m, -1) if closed else range(m - 2, -1, -1)
        for idx in order:
            i = idx % m
            j, d = ahead(i)
            if not closed and i >= m - 1:
                continue
            ay = 0.9999 * v[j] ** 2 * abs(kappa[j])
            ax = min_longitudinal_accel(params, v[j], ay)
            if ax is None:
                ax = 0.0
            v_reach = math.sqrt(max(v[j] ** 2 - 2.0 * min(ax, 0.0) * d, 1.0))
            if v_reach < v[i]:
                v[i] = v_reach
                regime[i] = "braking"

    if closed:
        start = int(np.argmin(v_corner))
        forward_sweep(start)
        forward_sweep(start)  # second wrap settles the seam
        backward_sweep(start)
        backward_sweep(start)
    else:
        forward_sweep(0)
        backward_sweep(0)

    if closed:
        t = float(np.sum(ds * 0.5 * (1.0 / v + 1.0 / np.roll(v, -1))))
    else:
        t = float(np.sum(ds * 0.5 * (1.0 / v[:-1] + 1.0 / v[1:])))
    return SpeedProfile(v=v, regime=np.asarray(regime), lap_time=t, v_corner=v_corner)


def _drive_regime(p: VehicleParams, v: float) -> str:
    power = p.P_max_R / v + (p.P_max_F / v if p.P_max_F > 0 else 0.0)
    torque = p.T_max_R / p.r_w_R + (p.T_max_F / p.r_w_F if p.T_max_F > 0 else 0.0)
    return "power" if power < torque else "torque"
