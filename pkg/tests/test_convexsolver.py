import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radopf.convexsolver import (Callbacks, SmoothConstraint, SmoothConvexProgram, SolverConfig,
                                 Status, phase1, project_euclidean, solve)
from radopf.errors import NotStrictlyFeasibleStart, ProjectionError
from radopf.restriction import build_restricted
from radopf.transform import EdgeSum, injections

from conftest import bisect


def quad(c):
    c = np.asarray(c, dtype=float)
    return Callbacks(lambda x: float(np.sum((x - c) ** 2)), lambda x: 2 * (x - c), lambda x: np.full(x.shape, 2.0))


def linear(w):
    w = np.asarray(w, dtype=float)
    return Callbacks(lambda x: float(w @ x), lambda x: w, lambda x: np.zeros(w.shape))


def row_callbacks(g, b):
    row = EdgeSum([g], [b])
    return Callbacks(lambda z: float(row.values(z)[0]), lambda z: row.jacobian(z)[0], lambda z: row.hessian_diag(z)[0])


def test_linear_program_active_bound():
    prog = SmoothConvexProgram(1, objective=linear([1.0]), A=[[-1.0]], r=[-0.25], lo=[0.0], hi=[1.0])
    res = solve(prog, [0.5])
    assert res.status == Status.OPTIMAL
    assert res.x[0] == pytest.approx(0.25, abs=1e-6)
    # certificate: linear objective within m/t of the optimum
    assert res.objective_value - 0.25 <= res.certified_gap + 1e-15
    assert res.certified_gap <= SolverConfig().duality_gap_tol


def test_quadratic_with_smooth_constraint():
    ball = Callbacks(lambda x: float(x @ x), lambda x: 2 * x, lambda x: np.full(x.shape, 2.0))
    prog = SmoothConvexProgram(1, objective=quad([0.3]), smooth=[SmoothConstraint(ball, 0.04)])
    res = solve(prog, [0.0])
    assert res.x[0] == pytest.approx(0.2, abs=1e-6)


def test_infeasible_start_rejected():
    prog = SmoothConvexProgram(1, objective=linear([1.0]), A=[[-1.0]], r=[-0.25], lo=[0.0], hi=[1.0])
    with pytest.raises(NotStrictlyFeasibleStart):
        solve(prog, [0.1])


def test_merit_descends_within_each_stage():
    ball = Callbacks(lambda x: float(x @ x), lambda x: 2 * x, lambda x: np.full(x.shape, 2.0))
    prog = SmoothConvexProgram(3, objective=quad([1.0, -2.0, 0.5]), smooth=[SmoothConstraint(ball, 1.0)],
                               A=[[1.0, 1.0, 1.0]], r=[0.5], lo=[-1, -1, -1], hi=[1, 1, 1])
    res = solve(prog, [0.0, 0.0, 0.0])
    assert res.stages == len(res.merit_history)
    for stage in res.merit_history:
        assert all(b <= a + 1e-12 * (1 + abs(a)) for a, b in zip(stage, stage[1:]))
    assert prog.max_violation(res.x) < 0


def test_fixed_coordinates_and_infinite_sides():
    prog = SmoothConvexProgram(2, objective=quad([3.0, 3.0]), lo=[0.5, -np.inf], hi=[0.5, 1.0])
    res = solve(prog, [0.0, 0.0])
    assert res.x[0] == 0.5
    assert res.x[1] == pytest.approx(1.0, abs=1e-6)


def test_unconstrained_program():
    res = solve(SmoothConvexProgram(2, objective=quad([0.1, -0.2])), [1.0, 1.0])
    np.testing.assert_allclose(res.x, [0.1, -0.2], atol=1e-10)


def test_nudge_recovers_start_on_boundary_edge():
    prog = SmoothConvexProgram(1, objective=linear([1.0]), lo=[0.0], hi=[1.0])
    res = solve(prog, [1e-12])
    assert res.x[0] == pytest.approx(0.0, abs=1e-6)


@pytest.mark.parametrize("kw", [dict(barrier_initial_t=0), dict(barrier_growth=1.0), dict(backtrack_factor=1.0),
                                dict(fraction_to_boundary=1.0), dict(max_newton_per_stage=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SolverConfig(**kw)


def test_phase1_strict_guess():
    prog = SmoothConvexProgram(1, A=[[1.0]], r=[1.0], lo=[-2.0], hi=[2.0])
    res = phase1(prog, [0.0])
    assert res.status == Status.OPTIMAL and res.s < 0 and res.x[0] < 1.0


def test_phase1_contradiction():
    prog = SmoothConvexProgram(1, A=[[1.0], [-1.0]], r=[-1.0, -1.0])
    res = phase1(prog, [0.0])
    assert res.status == Status.INFEASIBLE
    assert res.s == pytest.approx(1.0, abs=1e-6)
    assert res.lower_bound <= 1.0 + 1e-12


def test_phase1_on_two_bus_restriction(fix2):
    problem = build_restricted(fix2, [], None)
    res = phase1(problem.program, [0.0])
    assert res.status == Status.OPTIMAL
    p, _ = injections(fix2, res.x)
    assert p[1] < -0.5


def test_projection_examples():
    u = 1 - math.sqrt(0.75)
    z = project_euclidean(row_callbacks(1.0, 0.0), u, [0.8], [0.0])
    assert z[0] == pytest.approx(0.5, abs=1e-9)
    u = 0.6 - math.sqrt(0.96)
    z = project_euclidean(row_callbacks(1.0, 2.0), u, [0.5], [-2 / math.sqrt(5)])
    assert z[0] == pytest.approx(-0.2, abs=1e-9)
    z = project_euclidean(row_callbacks(1.0, 2.0), u, [-0.2], [-2 / math.sqrt(5)])
    assert z[0] == -0.2


def test_projection_preconditions():
    f = row_callbacks(1.0, 0.0)
    with pytest.raises(ProjectionError):
        project_euclidean(f, 0.2, [0.1], [0.0])      # z0 inside
    with pytest.raises(ProjectionError):
        project_euclidean(f, 0.2, [0.9], [0.85])     # hint outside


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 20.0), st.floats(0.0, 20.0), st.floats(0.05, 0.95), st.floats(-0.95, 0.95))
def test_one_dimensional_projection_matches_bisection(g, b, frac, z0):
    f = row_callbacks(g, b)
    fmin, zmin = g - math.hypot(g, b), -b / math.hypot(g, b)
    bound = fmin + frac * (f.value([z0]) - fmin) if f.value([z0]) > fmin else None
    if bound is None or f.value([z0]) - bound < 1e-6:
        return
    z = project_euclidean(f, bound, [z0], [zmin])[0]
    # in 1-D the projection is the boundary root between the minimizer and z0
    oracle = bisect(lambda v: f.value([v]) - bound, zmin, z0)
    assert z == pytest.approx(oracle, abs=1e-7)
    assert abs(f.value([z]) - bound) <= 1e-6
    # KKT side: z0 - z is a nonnegative multiple of grad f(z)
    assert f.gradient([z])[0] * (z0 - z) >= 0
