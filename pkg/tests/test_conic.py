import numpy as np
import pytest

from apexcvx import conic as C


def _min_norm_program(n, A, b, x0):
    """min ||x - x0|| s.t. A x = b, via one cone block; oracle is the
    least-squares projection onto the affine subspace."""
    builder = C.ProgramBuilder(n + 1)
    t = n
    builder.add_objective(np.array([t]), 1.0)
    rows = [(np.array([t]), np.array([1.0]), 0.0)]
    for j in range(n):
        rows.append((np.array([j]), np.array([1.0]), -float(x0[j])))
    builder.add_soc_block(rows)
    for i in range(A.shape[0]):
        cols = np.flatnonzero(A[i])
        builder.add_eq_row(cols, A[i, cols], float(b[i]))
    return builder.finalize()


def test_simple_socp():
    b = C.ProgramBuilder(1)
    b.add_objective(np.array([0]), 1.0)
    b.add_soc([([(np.array([0]), 1.0)], 0.0), ([], 1.0), ([], 1.0)])
    sol = C.conic_solve(b.finalize())
    assert sol.status == "optimal"
    assert sol.x[0] == pytest.approx(np.sqrt(2.0), abs=1e-7)


def test_inverse_speed_gadget():
    # minimize the lethargy subject to its hyperbolic cone with speed fixed
    v0 = 50.0
    b = C.ProgramBuilder(1)
    b.add_objective(np.array([0]), 1.0)
    b.add_soc([([(np.array([0]), 1.0)], v0), ([], 2.0),
               ([(np.array([0]), 1.0)], -v0)])
    sol = C.conic_solve(b.finalize())
    assert sol.status == "optimal"
    assert sol.x[0] == pytest.approx(1.0 / v0, rel=1e-7)


def test_projection_matches_least_squares():
    rng = np.random.default_rng(11)
    for _ in range(5):
        n, m = 12, 5
        A = rng.normal(size=(m, n))
        x_feas = rng.normal(size=n)
        bvec = A @ x_feas
        x0 = rng.normal(size=n)
        prog = _min_norm_program(n, A, bvec, x0)
        sol = C.conic_solve(prog)
        assert sol.status in C.OK_STATUSES
        # oracle: projection onto {A x = b}
        dx, *_ = np.linalg.lstsq(A, bvec - A @ x0, rcond=None)
        oracle = x0 + dx
        assert np.allclose(sol.x[:n], oracle, atol=1e-6)


def test_infeasible_detected():
    b = C.ProgramBuilder(1)
    b.add_objective(np.array([0]), 1.0)
    b.add_eq([(np.array([0]), 1.0)], 1.0)
    b.add_eq([(np.array([0]), 1.0)], 2.0)
    sol = C.conic_solve(b.finalize())
    assert sol.status == "infeasible"
    assert np.isnan(sol.objective)


def test_unbounded_detected():
    b = C.ProgramBuilder(1)
    b.add_objective(np.array([0]), -1.0)
    b.set_lower(np.array([0]), 0.0)
    sol = C.conic_solve(b.finalize())
    assert sol.status == "unbounded"


def test_bounds_and_inequalities():
    b = C.ProgramBuilder(2)
    b.add_objective(np.array([0, 1]), np.array([1.0, 1.0]))
    b.set_lower(np.arange(2), np.array([0.3, -1.0]))
    b.add_ineq([(np.array([0]), -1.0), (np.array([1]), -1.0)], -1.2)
    sol = C.conic_solve(b.finalize())
    assert sol.status == "optimal"
    assert sol.x.sum() == pytest.approx(1.2, abs=1e-7)
    assert sol.x[0] >= 0.3 - 1e-9


def test_cone_dimension_validation():
    b = C.ProgramBuilder(1)
    b.add_soc([([(np.array([0]), 1.0)], 0.0)])  # t-row only
    with pytest.raises(ValueError, match="t-row plus at least one u-row"):
        b.finalize()


def test_column_scaling_changes_nothing():
    rng = np.random.default_rng(3)
    n, m = 8, 3
    A = rng.normal(size=(m, n))
    x_feas = rng.normal(size=n)
    prog = _min_norm_program(n, A, A @ x_feas, rng.normal(size=n))
    ref = C.conic_solve(prog).x
    prog.col_scale = np.concatenate([np.full(n, 100.0), [1e-3]])
    scaled = C.conic_solve(prog).x
    assert np.allclose(ref, scaled, atol=1e-6)


def test_dump_program(tmp_path):
    b = C.ProgramBuilder(2)
    b.add_objective(np.array([0]), 1.0)
    b.add_eq([(np.array([0]), 1.0), (np.array([1]), 2.0)], 3.0)
    b.add_soc([([(np.array([0]), 1.0)], 0.0), ([], 1.0)])
    b.set_upper(np.array([1]), 5.0)
    prog = b.finalize()
    path = tmp_path / "prog.txt"
    C.dump_program(prog, path)
    text = path.read_text()
    assert text.startswith("vars 2 eq 1 ineq 0 cones 1")
    assert "eq 0:1.0 1:2.0 = 3.0" in text
    assert "bound 1" in text


def test_determinism():
    rng = np.random.default_rng(5)
    n, m = 10, 4
    A = rng.normal(size=(m, n))
    prog = _min_norm_program(n, A, A @ rng.normal(size=n), rng.normal(size=n))
    a = C.conic_solve(prog)
    b = C.conic_solve(prog)
    assert np.array_equal(a.x, b.x)
    assert a.iterations == b.iterations
