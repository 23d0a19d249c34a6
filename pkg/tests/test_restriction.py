import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radopf.cases import random_radial_case, reference_point, two_bus
from radopf.convexsolver import Callbacks, project_euclidean
from radopf.errors import DegenerateGradient, NotStrictlyFeasible
from radopf.model import BusRecord, EdgeRecord, NetworkCase
from radopf.restriction import (LINEAR_EDGE, BasePoints, Hyperplane, base_points, build_restricted, certify,
                                hyperplanes, lower_bound_set_empty, project_onto_row,
                                restricted_mask)
from radopf.transform import EdgeSum, injections

from conftest import bisect


def test_lower_bound_set_empty_examples():
    assert lower_bound_set_empty(two_bus(p_min_1=-2.0), 1, "p")
    assert not lower_bound_set_empty(two_bus(p_min_1=-1.0), 1, "p")
    assert lower_bound_set_empty(two_bus(), 1, "p")


def test_base_point_lands_on_curve():
    case = two_bus(p_min_1=-1.0)
    bp = base_points(case, [0.0])
    assert list(bp.points) == [(1, "p")]
    z = bp.points[(1, "p")]
    assert abs(injections(case, z)[0][0] + 1.0) <= 1e-6
    # 1-D oracle: the boundary root between the minimizer and z0 = 0
    f = lambda v: injections(case, [v])[0][0] + 1.0
    assert z[0] == pytest.approx(bisect(f, -2 / math.sqrt(5), 0.0), abs=1e-10)
    assert {(b, k) for b, k, _ in bp.dropped} == {(2, "p"), (1, "q"), (2, "q")}


def test_all_unbounded_gives_empty_map(free2):
    bp = base_points(free2, [0.0])
    assert bp.points == {}
    assert all(reason == "unbounded" for _, _, reason in bp.dropped)


def test_base_points_require_strict_feasibility(fix2):
    with pytest.raises(NotStrictlyFeasible):
        base_points(fix2, [0.0])
    with pytest.raises(NotStrictlyFeasible):
        base_points(two_bus(p_max_2=-0.5), [0.9])  # outside the box


def test_vacuous_and_empty_bounds_are_dropped():
    exact_min = 1 - math.sqrt(5)
    case = two_bus(p_min_1=exact_min, q_min=-5.0)
    bp = base_points(case, [0.0])
    reasons = {(b, k): why for b, k, why in bp.dropped}
    assert reasons[(1, "p")] == "vacuous"
    assert reasons[(2, "q")] == "empty"
    cert = certify(case, bp, hyperplanes(case, bp), sample_count=2000)
    assert cert.vacuity_violations == 0


def test_hyperplane_example():
    case = NetworkCase((BusRecord(1, p_min=1 - math.sqrt(0.75)), BusRecord(2)),
                       (EdgeRecord(1, 2, 1.0, 0.0, -1.2, 1.2),), 1)
    bp = base_points(case, [0.8])
    (h,) = hyperplanes(case, bp)
    assert bp.points[(1, "p")][0] == pytest.approx(0.5, abs=1e-12)
    assert h.normal[0] == pytest.approx(0.577350, abs=1e-6)
    assert h([0.8]) == pytest.approx(0.307180, abs=1e-6)
    assert h([0.8]) > h.bound


def test_degenerate_gradient():
    case = NetworkCase((BusRecord(1, p_min=0.0), BusRecord(2)), (EdgeRecord(1, 2, 1.0, 0.0, -1, 1),), 1)
    bp = BasePoints(z0=np.array([0.3]), points={(1, "p"): np.array([0.0])}, bounds={(1, "p"): 0.0})
    with pytest.raises(DegenerateGradient):
        hyperplanes(case, bp)


def test_normal_supported_on_incident_edges(line3):
    bp = base_points(line3, [0.0, 0.0])
    for h in hyperplanes(line3, bp):
        bus, _ = h.owner
        incident = set(line3.adjacency[line3.bus_index[bus]])
        assert set(np.flatnonzero(h.normal)) <= incident
    q_plane = next(h for h in hyperplanes(two_bus(q_min=0.05), base_points(two_bus(q_min=0.05), [0.3])))
    assert np.count_nonzero(q_plane.normal) == 1


def test_build_restricted_counts(line3, free2):
    case = two_bus(p_min_1=-1.0, p_max_2=0.5)
    case = NetworkCase((BusRecord(1, p_min=-1.0, p_max=1.5), BusRecord(2)), case.edges, 1)
    prob = build_restricted(case, base_points(case, [0.0]), None)
    assert prob.program.dimension == 1
    assert prob.program.n_smooth == 1 and prob.program.A.shape == (1, 1)
    np.testing.assert_allclose(prob.program.hi, [math.sin(math.pi / 3)])

    prob = build_restricted(free2, base_points(free2, [0.0]), None)
    assert prob.program.n_smooth == 0 and prob.program.A.shape[0] == 0

    prob = build_restricted(line3, base_points(line3, [0.0, 0.0]), None)
    assert prob.program.dimension == 2
    assert prob.program.n_smooth == 4 and prob.program.A.shape[0] == 4


def test_certificate_passes_and_detects_fault(line3):
    bp = base_points(line3, [0.0, 0.0])
    planes = hyperplanes(line3, bp)
    cert = certify(line3, bp, planes, sample_count=10_000, seed=1)
    assert cert.passed
    assert max(cert.max_excess.values()) <= 1e-9
    assert max(cert.tangency_gap.values()) <= 1e-8
    bad = [replace(planes[0], offset=planes[0].offset + 0.1)] + planes[1:]
    cert = certify(line3, bp, bad, sample_count=10_000, seed=1)
    assert not cert.passed
    assert cert.max_excess[planes[0].owner] > 0


def test_warm_start_retention():
    for seed in range(5):
        case = random_radial_case(8, seed=seed)
        z0 = reference_point(8, seed=seed)
        bp = base_points(case, z0)
        planes = hyperplanes(case, bp)
        for h in planes:
            assert h(z0) >= h.bound
        assert restricted_mask(case, planes, [z0])[0]


def test_base_points_serialize(line3):
    bp = base_points(line3, [0.0, 0.0])
    back = BasePoints.from_dict(bp.to_dict())
    assert back.points.keys() == bp.points.keys()
    for key in bp.points:
        np.testing.assert_array_equal(back.points[key], bp.points[key])
    assert back.dropped == bp.dropped


def _random_row(rng, n):
    g = rng.uniform(0.1, 20.0, n)
    b = rng.uniform(0.0, 20.0, n)
    signs = rng.choice([-1.0, 1.0], n)
    return (g, signs * b) if rng.random() < 0.5 else (b + 0.05, -signs * g)


def test_separable_projection_matches_barrier_projection():
    rng = np.random.default_rng(3)
    for _ in range(30):
        n = int(rng.integers(1, 4))
        alpha, beta = _random_row(rng, n)
        row = EdgeSum(alpha, beta)
        z0 = rng.uniform(-0.8, 0.8, n)
        f0, fmin = row.values(z0)[0], row.minimum()[0]
        if f0 - fmin < 1e-3:
            continue
        bound = fmin + rng.uniform(0.1, 0.9) * (f0 - fmin)
        y, mu = project_onto_row(alpha, beta, bound, z0)
        cb = Callbacks(lambda z: float(row.values(z)[0]), lambda z: row.jacobian(z)[0],
                       lambda z: row.hessian_diag(z)[0])
        y2 = project_euclidean(cb, bound, z0, row.minimizer(0))
        np.testing.assert_allclose(y, y2, atol=1e-6)
        assert abs(row.values(y)[0] - bound) <= 1e-12 * (1 + abs(bound))
        np.testing.assert_allclose(z0 - y, mu * row.jacobian(y)[0], atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-0.9, 0.9), min_size=1, max_size=3), st.floats(0.05, 0.95), st.integers(0, 10**6))
def test_projection_is_closest_point(z0, frac, seed):
    rng = np.random.default_rng(seed)
    z0 = np.array(z0)
    alpha, beta = _random_row(rng, z0.size)
    row = EdgeSum(alpha, beta)
    f0, fmin = row.values(z0)[0], row.minimum()[0]
    if f0 - fmin < 1e-6:
        return
    bound = fmin + frac * (f0 - fmin)
    y, _ = project_onto_row(alpha, beta, bound, z0)
    # no sampled point of the set is closer than the projection
    cand = rng.uniform(-0.999, 0.999, (4000, z0.size))
    vals = (1 - np.sqrt(1 - cand**2)) @ alpha + cand @ beta
    inside = cand[vals <= bound]
    if inside.size:
        assert np.min(np.linalg.norm(inside - z0, axis=1)) >= np.linalg.norm(y - z0) - 1e-9


def test_projection_with_linear_coordinate():
    # one coordinate enters the row linearly (zero conductance on a q row)
    alpha, beta = np.array([0.0, 9.594033128979403]), np.array([-11.38384312788425, 17.69694312130120])
    z0 = np.array([0.65841823, 0.19355051])
    bound = -16.16170569722266
    y, mu = project_onto_row(alpha, beta, bound, z0)
    row = EdgeSum(alpha, beta)
    assert abs(row.values(y)[0] - bound) <= 1e-9
    assert mu > 0
    resid = y - z0 + mu * row.jacobian(y)[0]
    # the linear coordinate runs into the domain edge, where only the sign is fixed
    assert y[0] == pytest.approx(LINEAR_EDGE) and resid[0] < 0
    assert abs(resid[1]) <= 1e-9


def test_projection_purely_linear_row():
    # f = -2 y on one edge: the set is y >= 0.25, so the projection of -0.5 is 0.25
    y, mu = project_onto_row(np.array([0.0]), np.array([-2.0]), -0.5, np.array([-0.5]))
    assert y[0] == pytest.approx(0.25, abs=1e-12)
    assert mu == pytest.approx(0.375, abs=1e-12)
