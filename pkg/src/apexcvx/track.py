"""Ribbon circuit model.

A track is a sampled 3D reference path plus a unit lateral normal field and
corridor bounds. Any driven line is the reference path offset laterally along
the normal, so its geometry (tangents, second derivatives, curvature, slope,
banking) is an affine function of the offset and its distance derivatives.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy import sparse

__all__ = [
    "TrackRibbon",
    "RibbonDerivatives",
    "PathState",
    "TrackError",
    "load_track",
    "save_track",
    "make_test_track",
    "resample_track",
    "differentiate_ribbon",
    "trajectory_derivatives",
    "curvature",
    "curvature_gradient",
    "slope_and_banking",
    "fd_matrices",
]

_NORMAL_TOL = 1e-6
_CLOSURE_TOL = 1e-6


class TrackError(ValueError):
    """Malformed or geometrically invalid track data."""


# Analytic geometry callback: s -> dict with P, N, P1, P2, N1, N2 rows.
AnalyticGeometry = Callable[[np.ndarray], dict]


@dataclass
class TrackRibbon:
    """Sampled reference path, lateral normal field and corridor bounds.

    ``s_ref`` is arc length along the reference path, strictly increasing and
    starting at zero. Closed circuits carry a duplicate final sample at
    ``s_ref = S_ref`` coinciding with the first. All data is immutable after
    construction; operations on it are pure functions.
    """

    s_ref: np.ndarray
    P: np.ndarray           # (m, 3) reference-path points
    N: np.ndarray           # (m, 3) unit lateral normals, driver's left
    n_min: np.ndarray       # (m,) corridor bound toward the right edge
    n_max: np.ndarray       # (m,) corridor bound toward the left edge
    closed: bool
    name: str = "track"
    analytic: Optional[AnalyticGeometry] = field(default=None, repr=False, compare=False)

    @property
    def length(self) -> float:
        return float(self.s_ref[-1])

    @property
    def n_samples(self) -> int:
        return len(self.s_ref)

    def validate(self) -> None:
        s = self.s_ref
        if s.ndim != 1 or len(s) < 2:
            raise TrackError("need at least 2 samples")
        if abs(s[0]) > 1e-12:
            raise TrackError("s_ref must start at 0")
        if np.any(np.diff(s) <= 0):
            raise TrackError("s_ref must be strictly increasing")
        if self.P.shape != (len(s), 3) or self.N.shape != (len(s), 3):
            raise TrackError("P and N must be (m, 3) arrays")
        norms = np.linalg.norm(self.N, axis=1)
        if np.any(np.abs(norms - 1.0) > _NORMAL_TOL):
            raise TrackError("non-unit normal beyond 1e-6 tolerance")
        if np.any(self.n_min >= self.n_max):
            raise TrackError("empty corridor (n_min >= n_max)")
        if self.closed:
            gap = np.linalg.norm(self.P[0] - self.P[-1])
            if gap > _CLOSURE_TOL:
                raise TrackError(f"closed track endpoints differ by {gap:.2e} m")


@dataclass
class RibbonDerivatives:
    """First and second distance derivatives of the reference path and normal."""

    P1: np.ndarray
    P2: np.ndarray
    N1: np.ndarray
    N2: np.ndarray


@dataclass
class PathState:
    """Lateral offset and its first two distance derivatives, per sample."""

    n: np.ndarray
    np_: np.ndarray
    npp: np.ndarray


def _renormalize(N: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(N, axis=1)
    if np.any(np.abs(norms - 1.0) > _NORMAL_TOL):
        raise TrackError("non-unit normal beyond 1e-6 tolerance")
    # leave already-unit rows untouched so load(save(t)) round-trips bit-exactly
    off = np.abs(norms - 1.0) > 1e-12
    if np.any(off):
        N = N.copy()
        N[off] /= norms[off, None]
    return N


def load_track(path: str | Path) -> TrackRibbon:
    """Load a ribbon from CSV (with optional JSON metadata sidecar).

    Expected header: ``s_ref,x_ref,y_ref,z_ref,Nx,Ny,Nz,n_min,n_max``. The
    sidecar ``<stem>.json`` may carry ``{"name": ..., "closed": ...}``; when
    absent, closure is inferred from endpoint coincidence.
    """
    path = Path(path)
    if not path.exists():
        raise TrackError(f"track file not found: {path}")
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        expected = ["s_ref", "x_ref", "y_ref", "z_ref", "Nx", "Ny", "Nz", "n_min", "n_max"]
        if header is None or [h.strip() for h in header] != expected:
            raise TrackError(f"bad track header, expected {','.join(expected)}")
        try:
            rows = np.array([[float(v) for v in row] for row in reader if row])
        except ValueError as exc:
            raise TrackError(f"malformed track row: {exc}") from None
    if rows.ndim != 2 or rows.shape[1] != 9:
        raise TrackError("malformed track file")

    meta = {}
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
    closed = meta.get("closed")
    if closed is None:
        closed = bool(np.linalg.norm(rows[0, 1:4] - rows[-1, 1:4]) <= _CLOSURE_TOL)

    track = TrackRibbon(
        s_ref=rows[:, 0],
        P=rows[:, 1:4],
        N=_renormalize(rows[:, 4:7]),
        n_min=rows[:, 7],
        n_max=rows[:, 8],
        closed=bool(closed),
        name=meta.get("name", path.stem),
    )
    track.validate()
    return track


def save_track(track: TrackRibbon, path: str | Path) -> None:
    """Write a ribbon as CSV plus JSON sidecar; floats use repr round-trip."""
    path = Path(path)
    with open(path, "w", newline="\n") as f:
        f.write("s_ref,x_ref,y_ref,z_ref,Nx,Ny,Nz,n_min,n_max\n")
        for i in range(track.n_samples):
            vals = [track.s_ref[i], *track.P[i], *track.N[i], track.n_min[i], track.n_max[i]]
            f.write(",".join(repr(float(v)) for v in vals) + "\n")
    path.with_suffix(".json").write_text(
        json.dumps({"name": track.name, "closed": track.closed}) + "\n"
    )


# ---------------------------------------------------------------------------
# synthetic tracks


def _left_normal(tx: np.ndarray, ty: np.ndarray) -> np.ndarray:
    return np.column_stack([-ty, tx, np.zeros_like(tx)])


def _straight_geom(grade: float) -> AnalyticGeometry:
    c = 1.0 / math.hypot(1.0, grade)

    def geom(s: np.ndarray) -> dict:
        m = len(s)
        z3 = np.zeros((m, 3))
        P = np.column_stack([c * s, np.zeros(m), grade * c * s])
        P1 = np.tile([c, 0.0, grade * c], (m, 1))
        N = np.tile([0.0, 1.0, 0.0], (m, 1))
        return {"P": P, "N": N, "P1": P1, "P2": z3, "N1": z3.copy(), "N2": z3.copy()}

    return geom


def _circle_geom(radius: float, bank: float) -> AnalyticGeometry:
    cb, sb = math.cos(bank), math.sin(bank)

    def geom(s: np.ndarray) -> dict:
        t = s / radius
        ct, st = np.cos(t), np.sin(t)
        z = np.zeros_like(s)
        P = np.column_stack([radius * ct, radius * st, z])
        P1 = np.column_stack([-st, ct, z])
        P2 = np.column_stack([-ct / radius, -st / radius, z])
        # unit normal, tilted out of plane by the banking angle
        N = np.column_stack([-cb * ct, -cb * st, np.full_like(s, sb)])
        N1 = np.column_stack([cb * st / radius, -cb * ct / radius, z])
        N2 = np.column_stack([cb * ct / radius**2, cb * st / radius**2, z])
        return {"P": P, "N": N, "P1": P1, "P2": P2, "N1": N1, "N2": N2}

    return geom


def _arc_chain_geom(segments: list[tuple[float, float]],
                    closed: bool = True) -> AnalyticGeometry:
    """Piecewise straight/arc chain; segments are (length, curvature) pairs."""
    lengths = np.array([seg[0] for seg in segments])
    kappas = np.array([seg[1] for seg in segments])
    s_start = np.concatenate([[0.0], np.cumsum(lengths)])
    # integrate heading and position at segment starts
    psi0 = np.zeros(len(segments) + 1)
    x0 = np.zeros(len(segments) + 1)
    y0 = np.zeros(len(segments) + 1)
    for j, (ell, k) in enumerate(segments):
        psi = psi0[j]
        if abs(k) < 1e-15:
            dx, dy = ell * math.cos(psi), ell * math.sin(psi)
            dpsi = 0.0
        else:
            dpsi = k * ell
            dx = (math.sin(psi + dpsi) - math.sin(psi)) / k
            dy = (-math.cos(psi + dpsi) + math.cos(psi)) / k
        psi0[j + 1] = psi + dpsi
        x0[j + 1] = x0[j] + dx
        y0[j + 1] = y0[j] + dy
    total = s_start[-1]

    def geom(s: np.ndarray) -> dict:
        s = np.asarray(s, dtype=float)
        if closed:
            # wrap the closure sample onto the first segment so closed chains
            # are seam-consistent
            sm = np.where(s >= total - 1e-12, s - total, s)
        else:
            sm = s
        sm = np.minimum(sm, total)
        j = np.clip(np.searchsorted(s_start, sm, side="right") - 1, 0, len(segments) - 1)
        ds = sm - s_start[j]
        k = kappas[j]
        psi = psi0[j] + k * ds
        x = np.where(
            np.abs(k) < 1e-15,
            x0[j] + ds * np.cos(psi0[j]),
            x0[j] + (np.sin(psi) - np.sin(psi0[j])) / np.where(k == 0, 1, k),
        )
        y = np.where(
            np.abs(k) < 1e-15,
            y0[j] + ds * np.sin(psi0[j]),
            y0[j] + (-np.cos(psi) + np.cos(psi0[j])) / np.where(k == 0, 1, k),
        )
        z = np.zeros_like(s)
        cp, sp = np.cos(psi), np.sin(psi)
        P = np.column_stack([x, y, z])
        P1 = np.column_stack([cp, sp, z])
        P2 = np.column_stack([-k * sp, k * cp, z])
        N = _left_normal(cp, sp)
        N1 = np.column_stack([-k * cp, -k * sp, z])
        N2 = np.column_stack([k**2 * sp, -(k**2) * cp, z])
        return {"P": P, "N": N, "P1": P1, "P2": P2, "N1": N1, "N2": N2}

    return geom, total


def _wiggle_track(radius: float, amplitude: float, lobes: int, samples: int,
                  half_width: float) -> TrackRibbon:
    # polar harmonic circuit r(t) = R (1 + a cos(lobes t)), reparameterized
    # to arc length on a dense grid
    tt = np.linspace(0.0, 2 * math.pi, 200_000)
    r = radius * (1 + amplitude * np.cos(lobes * tt))
    dr = -radius * amplitude * lobes * np.sin(lobes * tt)
    speed = np.hypot(r, dr)
    s_dense = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(tt))])
    total = float(s_dense[-1])
    s = np.linspace(0.0, total, samples + 1)
    t = np.interp(s, s_dense, tt)
    r = radius * (1 + amplitude * np.cos(lobes * t))
    P = np.column_stack([r * np.cos(t), r * np.sin(t), np.zeros_like(t)])
    P[-1] = P[0]
    dr = -radius * amplitude * lobes * np.sin(lobes * t)
    tx = dr * np.cos(t) - r * np.sin(t)
    ty = dr * np.sin(t) + r * np.cos(t)
    mag = np.hypot(tx, ty)
    N = _left_normal(tx / mag, ty / mag)
    N[-1] = N[0]
    w = np.full_like(s, half_width)
    return TrackRibbon(s, P, N, -w, w, closed=True, name=f"wiggle{lobes}")


def make_test_track(kind: str, samples: int = 1000, half_width: float = 6.0,
                    **geometry) -> TrackRibbon:
    """Generate an analytic test circuit sampled uniformly in arc length.

    Kinds and their geometry parameters:

    * ``straight``: ``length`` (default 500), ``grade`` (rise per unit run, 0)
    * ``circle``: ``radius`` (100), ``bank`` (banking angle, rad, 0)
    * ``oval``: ``straight_length`` (400), ``radius`` (80)
    * ``s-bend``: stadium with an S-chicane on one straight;
      ``straight_length`` (500), ``radius`` (120), ``chicane_radius`` (45),
      ``chicane_angle`` (rad, 0.5)
    * ``wiggle``: polar-harmonic circuit; ``radius`` (400), ``amplitude``
      (0.12), ``lobes`` (10)

    Closed kinds include the duplicate closing sample, so the returned ribbon
    has ``samples + 1`` rows. Exact derivative fields are attached for all
    kinds except ``wiggle``.
    """
    if samples < 4:
        raise TrackError("need at least 4 samples")
    if half_width <= 0:
        raise TrackError("half_width must be positive")

    if kind == "straight":
        length = float(geometry.pop("length", 500.0))
        grade = float(geometry.pop("grade", 0.0))
        if length <= 0:
            raise TrackError("degenerate geometry: length must be positive")
        analytic = _straight_geom(grade)
        s = np.linspace(0.0, length, samples)
        closed = False
        name = "straight"
    elif kind == "circle":
        radius = float(geometry.pop("radius", 100.0))
        bank = float(geometry.pop("bank", 0.0))
        if radius <= 0:
            raise TrackError("degenerate geometry: radius must be positive")
        analytic = _circle_geom(radius, bank)
        s = np.linspace(0.0, 2 * math.pi * radius, samples + 1)
        closed = True
        name = "circle"
    elif kind == "oval":
        ell = float(geometry.pop("straight_length", 400.0))
        radius = float(geometry.pop("radius", 80.0))
        if ell <= 0 or radius <= 0:
            raise TrackError("degenerate geometry")
        k = 1.0 / radius
        segs = [(ell, 0.0), (math.pi * radius, k), (ell, 0.0), (math.pi * radius, k)]
        analytic, total = _arc_chain_geom(segs)
        s = np.linspace(0.0, total, samples + 1)
        closed = True
        name = "oval"
    elif kind == "s-bend":
        ell = float(geometry.pop("straight_length", 500.0))
        radius = float(geometry.pop("radius", 120.0))
        rc = float(geometry.pop("chicane_radius", 55.0))
        alpha = float(geometry.pop("chicane_angle", 0.8))
        if min(ell, radius, rc, alpha) <= 0:
            raise TrackError("degenerate geometry")
        # chicane (left a, right a, right a, left a) returns to the original
        # line; its along-track extent is 4 rc sin(a)
        extent = 4 * rc * math.sin(alpha)
        if extent >= ell:
            raise TrackError("chicane longer than the straight")
        kc, ke = 1.0 / rc, 1.0 / radius
        la = rc * alpha
        segs = [
            ((ell - extent) / 2, 0.0),
            (la, kc), (la, -kc), (la, -kc), (la, kc),
            ((ell - extent) / 2, 0.0),
            (math.pi * radius, ke),
            (ell, 0.0),
            (math.pi * radius, ke),
        ]
        analytic, total = _arc_chain_geom(segs)
        s = np.linspace(0.0, total, samples + 1)
        closed = True
        name = "s-bend"
    elif kind == "wiggle":
        radius = float(geometry.pop("radius", 750.0))
        amplitude = float(geometry.pop("amplitude", 0.02))
        lobes = int(geometry.pop("lobes", 10))
        if radius <= 0 or not 0 < amplitude < 1 or lobes < 1:
            raise TrackError("degenerate geometry")
        if geometry:
            raise TrackError(f"unknown geometry parameters: {sorted(geometry)}")
        return _wiggle_track(radius, amplitude, lobes, samples, half_width)
    else:
        raise TrackError(f"unknown track kind: {kind!r}")

    if geometry:
        raise TrackError(f"unknown geometry parameters: {sorted(geometry)}")

    g = analytic(s)
    w = np.full_like(s, half_width)
    track = TrackRibbon(s, g["P"], g["N"], -w, w, closed=closed, name=name,
                        analytic=analytic)
    if closed:
        # exact closure against float drift in the chain integration
        track.P[-1] = track.P[0]
        track.N[-1] = track.N[0]
    track.validate()
    return track


def resample_track(track: TrackRibbon, samples: int) -> TrackRibbon:
    """Resample to a uniform arc-length grid with ``samples`` unique points.

    Path and normals go through a cubic spline (periodic for closed tracks)
    so the resampled geometry supports finite-difference second derivatives;
    bounds are interpolated linearly. Analytic geometry, when attached, is
    evaluated exactly instead.
    """
    from scipy.interpolate import CubicSpline

    if samples < 4:
        raise TrackError("need at least 4 samples")
    total = track.length
    m = samples + 1 if track.closed else samples
    s = np.linspace(0.0, total, m)
    if track.analytic is not None:
        g = track.analytic(s)
        P, N = g["P"], g["N"]
    else:
        bc = "periodic" if track.closed else "natural"
        P_in, N_in = track.P, track.N
        if track.closed:
            # periodic splines need exactly matching end values
            P_in = np.vstack([P_in[:-1], P_in[0]])
            N_in = np.vstack([N_in[:-1], N_in[0]])
        P = CubicSpline(track.s_ref, P_in, bc_type=bc, axis=0)(s)
        N = CubicSpline(track.s_ref, N_in, bc_type=bc, axis=0)(s)
        N = N / np.linalg.norm(N, axis=1)[:, None]
    n_min = np.interp(s, track.s_ref, track.n_min)
    n_max = np.interp(s, track.s_ref, track.n_max)
    out = TrackRibbon(s, P, N, n_min, n_max, closed=track.closed, name=track.name,
                      analytic=track.analytic)
    if track.closed:
        out.P[-1] = out.P[0]
        out.N[-1] = out.N[0]
    return out


# ---------------------------------------------------------------------------
# differentiation


def fd_matrices(count: int, h: float, closed: bool) -> tuple[sparse.csr_matrix, sparse.csr_matrix]:
    """First/second-derivative finite-difference operators on a uniform grid.

    Periodic central stencils for closed grids; second-order one-sided rows at
    the ends of open grids.
    """
    if count < 5:
        raise TrackError("need at least 5 samples to differentiate")
    e = np.ones(count)
    D1 = sparse.diags([e / 2, -e / 2], [1, -1], shape=(count, count), format="lil")
    D2 = sparse.diags([e, -2 * e, e], [1, 0, -1], shape=(count, count), format="lil")
    if closed:
        D1[0, -1] = -0.5
        D1[-1, 0] = 0.5
        D2[0, -1] = 1.0
        D2[-1, 0] = 1.0
    else:
        D1[0, :3] = [-1.5, 2.0, -0.5]
        D1[-1, -3:] = [0.5, -2.0, 1.5]
        D2[0, :4] = [2.0, -5.0, 4.0, -1.0]
        D2[-1, -4:] = [-1.0, 4.0, -5.0, 2.0]
    return (D1 / h).tocsr(), (D2 / h**2).tocsr()


def _periodic_gradient(y: np.ndarray, s: np.ndarray, total: float) -> np.ndarray:
    # wrap one ghost sample on each side so np.gradient sees the periodic
    # neighborhood; handles nonuniform spacing
    s_ext = np.concatenate([[s[-1] - total], s, [s[0] + total]])
    y_ext = np.concatenate([[y[-1]], y, [y[0]]])
    return np.gradient(y_ext, s_ext, edge_order=2)[1:-1]


def differentiate_ribbon(track: TrackRibbon) -> RibbonDerivatives:
    """Distance derivatives of P and N.

    Uses the attached analytic geometry when present; otherwise periodic
    (closed) or one-sided-at-ends (open) finite differences on the samples.
    """
    if track.n_samples < 5:
        raise TrackError("need at least 5 samples to differentiate")
    if track.analytic is not None:
        g = track.analytic(track.s_ref)
        return RibbonDerivatives(g["P1"], g["P2"], g["N1"], g["N2"])

    s = track.s_ref
    if track.closed:
        total = track.length
        su, Pu, Nu = s[:-1], track.P[:-1], track.N[:-1]

        def d(arr):
            return np.column_stack([_periodic_gradient(arr[:, j], su, total) for j in range(3)])

        P1, N1 = d(Pu), d(Nu)
        P2, N2 = d(P1), d(N1)
        close = lambda a: np.vstack([a, a[0]])
        return RibbonDerivatives(close(P1), close(P2), close(N1), close(N2))

    def d(arr):
        return np.column_stack([np.gradient(arr[:, j], s, edge_order=2) for j in range(3)])

    P1, N1 = d(track.P), d(track.N)
    return RibbonDerivatives(P1, d(P1), N1, d(N1))


def trajectory_derivatives(track: TrackRibbon, derivs: RibbonDerivatives,
                           n: np.ndarray, np_: np.ndarray, npp: np.ndarray
                           ) -> tuple[np.ndarray, np.ndarray]:
    """First/second distance derivatives of the offset trajectory.

    Affine in (n, n', n''):
    ``xyz' = P' + n N' + n' N`` and ``xyz'' = P'' + n N'' + n'' N + 2 n' N'``.
    """
    if not (len(n) == len(np_) == len(npp) == track.n_samples):
        raise TrackError("path arrays must match the track sample count")
    n = np.asarray(n)[:, None]
    np1 = np.asarray(np_)[:, None]
    np2 = np.asarray(npp)[:, None]
    xyz1 = derivs.P1 + n * derivs.N1 + np1 * track.N
    xyz2 = derivs.P2 + n * derivs.N2 + np2 * track.N + 2 * np1 * derivs.N1
    return xyz1, xyz2


def curvature(xyz1: np.ndarray, xyz2: np.ndarray) -> np.ndarray:
    """Planar (x-y) signed curvature; positive for a left turn."""
    x1, y1 = xyz1[:, 0], xyz1[:, 1]
    x2, y2 = xyz2[:, 0], xyz2[:, 1]
    d = x1**2 + y1**2
    if np.any(d <= 1e-18):
        raise TrackError("vanishing horizontal tangent")
    return (y2 * x1 - x2 * y1) / d**1.5


def curvature_gradient(xyz1: np.ndarray, xyz2: np.ndarray) -> np.ndarray:
    """Partial derivatives of curvature w.r.t. (x', y', x'', y''), shape (m, 4)."""
    x1, y1 = xyz1[:, 0], xyz1[:, 1]
    x2, y2 = xyz2[:, 0], xyz2[:, 1]
    d = x1**2 + y1**2
    if np.any(d <= 1e-18):
        raise TrackError("vanishing horizontal tangent")
    num = y2 * x1 - x2 * y1
    d32 = d**1.5
    d52 = d**2.5
    g = np.empty((len(x1), 4))
    g[:, 0] = y2 / d32 - 3 * x1 * num / d52
    g[:, 1] = -x2 / d32 - 3 * y1 * num / d52
    g[:, 2] = -y1 / d32
    g[:, 3] = x1 / d32
    return g


def slope_and_banking(track: TrackRibbon, derivs: RibbonDerivatives,
                      xyz1_prev: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Slope from previous-iterate tangents; banking from ribbon data alone.

    Banking is the tilt of the lateral normal out of the horizontal plane,
    forced to zero on straight sections (vanishing horizontal normal rate)
    where the ribbon carries no banking information.
    """
    horiz = np.hypot(xyz1_prev[:, 0], xyz1_prev[:, 1])
    if np.any(horiz <= 1e-12):
        raise TrackError("vanishing horizontal tangent in previous iterate")
    theta = np.arctan2(xyz1_prev[:, 2], horiz)
    n1_horiz = np.hypot(derivs.N1[:, 0], derivs.N1[:, 1])
    phi = np.where(
        n1_horiz < 1e-9,
        0.0,
        np.arctan2(track.N[:, 2], np.hypot(track.N[:, 0], track.N[:, 1])),
    )
    return theta, phi
