"""Solver-agnostic second-order cone programs.

A program is a linear objective, linear equality rows, second-order cone
blocks (affine maps defining (t, u) with t >= ||u||_2), general linear
inequality rows and variable bounds. Assembly happens through a batched
builder so whole constraint families are emitted with numpy index arithmetic
rather than per-row Python loops. Solving is delegated to an embedded
interior-point backend (Clarabel) behind a thin adapter.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import sparse

import clarabel

__all__ = [
    "ConicProgram",
    "ProgramBuilder",
    "SolverTolerances",
    "ConicSolution",
    "conic_solve",
    "dump_program",
    "SolverFailure",
]

# a "term" contributes one (column, coefficient) entry to each row of a batch
Term = tuple[np.ndarray, "np.ndarray | float"]


class SolverFailure(RuntimeError):
    """Conic solve did not reach an acceptable status."""

    def __init__(self, status: str, detail: str = ""):
        super().__init__(f"conic solve failed: {status}" + (f" ({detail})" if detail else ""))
        self.status = status


@dataclass
class ConicProgram:
    """Immutable assembled program: min c'x + c0 s.t. A x = b, G x <= h,
    (t, u) = F_k x + g_k in SOC per block, lb <= x <= ub."""

    n_vars: int
    c: np.ndarray
    c0: float
    A_eq: sparse.csr_matrix
    b_eq: np.ndarray
    G: sparse.csr_matrix
    h: np.ndarray
    soc_A: sparse.csr_matrix
    soc_b: np.ndarray
    soc_dims: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    col_scale: Optional[np.ndarray] = None  # per-column magnitudes for the solver

    @property
    def n_eq(self) -> int:
        return self.A_eq.shape[0]

    @property
    def n_ineq(self) -> int:
        return self.G.shape[0]

    @property
    def n_cones(self) -> int:
        return len(self.soc_dims)

    def validate(self) -> None:
        if np.any(self.soc_dims < 2):
            raise ValueError("every cone block needs a t-row plus at least one u-row")
        if int(self.soc_dims.sum()) != self.soc_A.shape[0]:
            raise ValueError("cone dimensions inconsistent with cone rows")
        for mat in (self.A_eq, self.G, self.soc_A):
            if mat.shape[1] != self.n_vars:
                raise ValueError("constraint matrix width mismatch")

    def cone_values(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-block (t, ||u||_2) evaluated at x."""
        vals = self.soc_A @ x + self.soc_b
        ends = np.cumsum(self.soc_dims)
        starts = ends - self.soc_dims
        t = vals[starts]
        unorm = np.array([np.linalg.norm(vals[s + 1:e]) for s, e in zip(starts, ends)])
        return t, unorm


class ProgramBuilder:
    """Accumulates constraint families in COO form; finalize() assembles."""

    def __init__(self, n_vars: int):
        self.n_vars = n_vars
        self.c = np.zeros(n_vars)
        self.c0 = 0.0
        self.lb = np.full(n_vars, -np.inf)
        self.ub = np.full(n_vars, np.inf)
        self._eq = _CooRows(n_vars)
        self._ineq = _CooRows(n_vars)
        self._soc = _CooRows(n_vars)
        self._soc_dims: list[np.ndarray] = []

    @property
    def n_eq_rows(self) -> int:
        return self._eq.n_rows

    def add_objective(self, cols: np.ndarray, coefs: "np.ndarray | float") -> None:
        np.add.at(self.c, np.asarray(cols, dtype=np.int64).ravel(),
                  np.broadcast_to(coefs, np.shape(cols)).ravel())

    def add_eq(self, terms: Sequence[Term], rhs: "np.ndarray | float") -> None:
        """Batch of equality rows; each term adds one entry per row."""
        k = _batch_size(terms, rhs)
        idx = self._eq.alloc(k) + np.arange(k, dtype=np.int64)
        for cols, coefs in terms:
            self._eq.add_entries(idx, cols, coefs)
        self._eq.set_rhs(idx, rhs)

    def add_ineq(self, terms: Sequence[Term], rhs: "np.ndarray | float") -> None:
        """Batch of rows G x <= h."""
        k = _batch_size(terms, rhs)
        idx = self._ineq.alloc(k) + np.arange(k, dtype=np.int64)
        for cols, coefs in terms:
            self._ineq.add_entries(idx, cols, coefs)
        self._ineq.set_rhs(idx, rhs)

    def add_soc(self, rows: Sequence[tuple[Sequence[Term], "np.ndarray | float"]]) -> None:
        """Batch of SOC blocks. ``rows`` lists (terms, const) per block row,
        t-row first; rows of one block occupy consecutive program rows."""
        dim = len(rows)
        k = max(_batch_size(terms, const) for terms, const in rows)
        base = self._soc.alloc(dim * k)
        for r, (terms, const) in enumerate(rows):
            idx = base + r + dim * np.arange(k, dtype=np.int64)
            for cols, coefs in terms:
                self._soc.add_entries(idx, cols, coefs)
            self._soc.set_rhs(idx, const)
        self._soc_dims.append(np.full(k, dim, dtype=np.int64))

    def add_eq_row(self, cols: np.ndarray, coefs: np.ndarray, rhs: float) -> None:
        """Single equality row with arbitrary sparsity."""
        idx = np.array([self._eq.alloc(1)], dtype=np.int64)
        self._eq.add_entries(np.full(np.size(cols), idx[0], dtype=np.int64),
                             cols, coefs)
        self._eq.set_rhs(idx, rhs)

    def add_ineq_row(self, cols: np.ndarray, coefs: np.ndarray, rhs: float) -> None:
        """Single row of G x <= h with arbitrary sparsity."""
        idx = np.array([self._ineq.alloc(1)], dtype=np.int64)
        self._ineq.add_entries(np.full(np.size(cols), idx[0], dtype=np.int64),
                               cols, coefs)
        self._ineq.set_rhs(idx, rhs)

    def add_soc_block(self, rows: Sequence[tuple[np.ndarray, np.ndarray, float]]) -> None:
        """One SOC block with arbitrary per-row sparsity: rows of
        (cols, coefs, const), t-row first."""
        base = self._soc.alloc(len(rows))
        for r, (cols, coefs, const) in enumerate(rows):
            idx = np.full(np.size(cols), base + r, dtype=np.int64)
            if np.size(cols):
                self._soc.add_entries(idx, cols, coefs)
            self._soc.set_rhs(np.array([base + r], dtype=np.int64), const)
        self._soc_dims.append(np.array([len(rows)], dtype=np.int64))

    def set_lower(self, cols: np.ndarray, values: "np.ndarray | float") -> None:
        self.lb[np.asarray(cols, dtype=np.int64)] = np.maximum(
            self.lb[np.asarray(cols, dtype=np.int64)], values)

    def set_upper(self, cols: np.ndarray, values: "np.ndarray | float") -> None:
        self.ub[np.asarray(cols, dtype=np.int64)] = np.minimum(
            self.ub[np.asarray(cols, dtype=np.int64)], values)

    def finalize(self) -> ConicProgram:
        A_eq, b_eq = self._eq.build()
        G, h = self._ineq.build()
        soc_A, soc_b = self._soc.build()
        dims = (np.concatenate(self._soc_dims) if self._soc_dims
                else np.zeros(0, dtype=np.int64))
        prog = ConicProgram(self.n_vars, self.c, self.c0, A_eq, b_eq, G, h,
                            soc_A, soc_b, dims, self.lb, self.ub)
        prog.validate()
        return prog


class _CooRows:
    """COO triplet accumulator with explicit row allocation."""

    def __init__(self, n_vars: int):
        self.n_vars = n_vars
        self.n_rows = 0
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []
        self.rhs_idx: list[np.ndarray] = []
        self.rhs_val: list[np.ndarray] = []

    def alloc(self, k: int) -> int:
        """Reserve k rows; returns the first row index."""
        start = self.n_rows
        self.n_rows += k
        return start

    def add_entries(self, row_idx: np.ndarray, cols, coefs) -> None:
        cols = np.asarray(cols, dtype=np.int64)
        self.rows.append(np.broadcast_to(row_idx, cols.shape).ravel())
        self.cols.append(cols.ravel())
        self.vals.append(np.broadcast_to(np.asarray(coefs, dtype=float),
                                         cols.shape).ravel().copy())

    def set_rhs(self, row_idx: np.ndarray, values) -> None:
        self.rhs_idx.append(row_idx)
        self.rhs_val.append(np.broadcast_to(np.asarray(values, dtype=float),
                                            row_idx.shape).copy())

    def build(self) -> tuple[sparse.csr_matrix, np.ndarray]:
        if self.rows:
            rows = np.concatenate(self.rows)
            cols = np.concatenate(self.cols)
            vals = np.concatenate(self.vals)
        else:
            rows = cols = np.zeros(0, dtype=np.int64)
            vals = np.zeros(0)
        mat = sparse.coo_matrix((vals, (rows, cols)),
                                shape=(self.n_rows, self.n_vars)).tocsr()
        rhs = np.zeros(self.n_rows)
        for idx, val in zip(self.rhs_idx, self.rhs_val):
            rhs[idx] = val
        return mat, rhs


def _batch_size(terms: Sequence[Term], rhs) -> int:
    sizes = [int(np.size(cols)) for cols, _ in terms]
    if np.ndim(rhs) > 0:
        sizes.append(int(np.size(rhs)))
    return max(sizes) if sizes else 1


@dataclass
class SolverTolerances:
    tol_gap_abs: float = 1e-8
    tol_gap_rel: float = 1e-8
    tol_feas: float = 1e-8
    max_iter: int = 200
    time_limit: float = 0.0  # 0 disables
    # fallback acceptance when progress stalls; still far tighter than any
    # outer-loop threshold
    reduced_tol_gap_abs: float = 1e-3
    reduced_tol_gap_rel: float = 1e-5
    reduced_tol_feas: float = 1e-4


@dataclass
class ConicSolution:
    x: np.ndarray
    status: str
    objective: float
    solve_time: float
    iterations: int


_STATUS_MAP = {
    "Solved": "optimal",
    "AlmostSolved": "near_optimal",
    "PrimalInfeasible": "infeasible",
    "AlmostPrimalInfeasible": "infeasible",
    "DualInfeasible": "unbounded",
    "AlmostDualInfeasible": "unbounded",
    "MaxIterations": "iteration_limit",
    "MaxTime": "iteration_limit",
}

OK_STATUSES = ("optimal", "near_optimal")


def conic_solve(program: ConicProgram, tolerances: Optional[SolverTolerances] = None,
                verbose: bool = False) -> ConicSolution:
    """Solve the program with the embedded interior-point backend.

    Returns the primal solution and a normalized status; statuses outside
    ``OK_STATUSES`` (infeasible / unbounded / iteration_limit /
    numerical_failure) are reported, not raised.
    """
    tol = tolerances or SolverTolerances()
    program.validate()

    # column scaling: solve in x_hat with x = S x_hat
    S = program.col_scale
    if S is not None:
        D = sparse.diags(S)
        A_eq, G, soc_A = program.A_eq @ D, program.G @ D, program.soc_A @ D
        lb, ub = program.lb / S, program.ub / S
        c = program.c * S
    else:
        A_eq, G, soc_A = program.A_eq, program.G, program.soc_A
        lb, ub, c = program.lb, program.ub, program.c

    blocks = [A_eq, G]
    rhs = [program.b_eq, program.h]
    cones: list = []
    if program.n_eq:
        cones.append(clarabel.ZeroConeT(program.n_eq))
    n_ineq = program.n_ineq

    fin_ub = np.flatnonzero(np.isfinite(ub))
    fin_lb = np.flatnonzero(np.isfinite(lb))
    if len(fin_ub):
        blocks.append(sparse.coo_matrix(
            (np.ones(len(fin_ub)), (np.arange(len(fin_ub)), fin_ub)),
            shape=(len(fin_ub), program.n_vars)))
        rhs.append(ub[fin_ub])
        n_ineq += len(fin_ub)
    if len(fin_lb):
        blocks.append(sparse.coo_matrix(
            (-np.ones(len(fin_lb)), (np.arange(len(fin_lb)), fin_lb)),
            shape=(len(fin_lb), program.n_vars)))
        rhs.append(-lb[fin_lb])
        n_ineq += len(fin_lb)
    if n_ineq:
        cones.append(clarabel.NonnegativeConeT(n_ineq))

    if program.n_cones:
        blocks.append(-soc_A)
        rhs.append(program.soc_b)
        cones.extend(clarabel.SecondOrderConeT(int(d)) for d in program.soc_dims)

    A = sparse.vstack([sparse.csc_matrix(blk) for blk in blocks], format="csc")
    b = np.concatenate(rhs)
    P = sparse.csc_matrix((program.n_vars, program.n_vars))

    settings = clarabel.DefaultSettings()
    settings.verbose = verbose
    settings.tol_gap_abs = tol.tol_gap_abs
    settings.tol_gap_rel = tol.tol_gap_rel
    settings.tol_feas = tol.tol_feas
    settings.max_iter = tol.max_iter
    settings.max_threads = 1  # deterministic factorization order
    settings.reduced_tol_gap_abs = tol.reduced_tol_gap_abs
    settings.reduced_tol_gap_rel = tol.reduced_tol_gap_rel
    settings.reduced_tol_feas = tol.reduced_tol_feas
    if tol.time_limit:
        settings.time_limit = tol.time_limit

    t0 = time.perf_counter()
    solver = clarabel.DefaultSolver(P, c, A, b, cones, settings)
    result = solver.solve()
    elapsed = time.perf_counter() - t0

    status = _STATUS_MAP.get(str(result.status), "numerical_failure")
    if status in OK_STATUSES:
        x = np.asarray(result.x)
        if S is not None:
            x = x * S
        objective = float(program.c @ x + program.c0)
    else:
        x = np.full(program.n_vars, np.nan)
        objective = float("nan")
    return ConicSolution(x=x, status=status, objective=objective,
                         solve_time=elapsed, iterations=int(result.iterations))


def dump_program(program: ConicProgram, path: str | Path) -> None:
    """Plain-text dump for cross-validation with external solvers.

    Format: header counts, then one line per objective/equality/inequality/
    cone row listing ``col:coef`` pairs and the constant.
    """
    def fmt(v) -> str:
        return repr(float(v))

    lines = [
        f"vars {program.n_vars} eq {program.n_eq} ineq {program.n_ineq} "
        f"cones {program.n_cones}",
        "objective " + " ".join(
            f"{j}:{fmt(program.c[j])}" for j in np.flatnonzero(program.c))
        + f" + {fmt(program.c0)}",
    ]
    for label, mat, vec in (("eq", program.A_eq, program.b_eq),
                            ("ineq", program.G, program.h)):
        mat = mat.tocsr()
        for i in range(mat.shape[0]):
            row = mat.getrow(i)
            lines.append(f"{label} " + " ".join(
                f"{j}:{fmt(v)}" for j, v in zip(row.indices, row.data))
                + f" = {fmt(vec[i])}")
    soc = program.soc_A.tocsr()
    r = 0
    for k, dim in enumerate(program.soc_dims):
        lines.append(f"soc {k} dim {dim}")
        for _ in range(dim):
            row = soc.getrow(r)
            lines.append("  " + " ".join(
                f"{j}:{fmt(v)}" for j, v in zip(row.indices, row.data))
                + f" + {fmt(program.soc_b[r])}")
            r += 1
    for i in range(program.n_vars):
        if np.isfinite(program.lb[i]) or np.isfinite(program.ub[i]):
            lines.append(f"bound {i} {fmt(program.lb[i])} {fmt(program.ub[i])}")
    Path(path).write_text("\n".join(lines) + "\n")
