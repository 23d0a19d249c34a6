"""Small fixtures and random radial cases used by tests and examples."""
from __future__ import annotations

import math

import numpy as np

from .matpower import write_matpower
from .model import INF, BusRecord, EdgeRecord, NetworkCase
from .transform import injections

PI3 = math.pi / 3


def two_bus(p_max_2: float = INF, p_min_1: float = -INF, g: float = 1.0, b: float = 2.0,
            theta: float = PI3, **bus2) -> NetworkCase:
    """Bus 1 (slack) -- bus 2, one edge 1 -> 2."""
    buses = (BusRecord(1, p_min=p_min_1), BusRecord(2, p_max=p_max_2, **bus2))
    return NetworkCase(buses, (EdgeRecord(1, 2, g, b, -theta, theta),), slack_bus=1)


def three_bus_line() -> NetworkCase:
    """Line 1 - 2 - 3 with finite p/q bounds on buses 2 and 3.

    All four lower bounds have nonempty, nonvacuous sublevel sets, so a
    restriction has four tangent planes.
    """
    buses = (
        BusRecord(1),
        BusRecord(2, p_min=-0.2, p_max=0.9, q_min=-0.25, q_max=1.3),
        BusRecord(3, p_min=-1.0, p_max=0.45, q_min=-0.05, q_max=0.8),
    )
    edges = (EdgeRecord(1, 2, 1.0, 2.0, -PI3, PI3), EdgeRecord(2, 3, 1.0, 2.0, -PI3, PI3))
    return NetworkCase(buses, edges, slack_bus=1)


def inexact_two_bus() -> NetworkCase:
    """Cheapest-supply case whose cone relaxation is not exact.

    Bus 2 is a 0.2 load that also needs at least 0.3 of reactive injection.
    The real network can only supply it by opening the angle (z of about
    0.24), which costs active power at the slack; the relaxation instead
    shrinks R below sqrt(1 - I^2) and pays far less.
    """
    buses = (BusRecord(1, cost_coeff=1.0), BusRecord(2, p_max=-0.2, q_min=0.3))
    return NetworkCase(buses, (EdgeRecord(1, 2, 1.0, 2.0, -math.pi / 4, math.pi / 4),), slack_bus=1)


def _random_tree(n: int, rng) -> list[tuple[int, int]]:
    return [(int(rng.integers(0, k)), k) for k in range(1, n)]


def random_radial_case(n_buses: int, seed: int = 0, band: float = 0.05,
                       theta_max: float = math.pi / 6, reverse_fraction: float = 0.3,
                       cost: bool = False) -> NetworkCase:
    """Random feeder whose bounds bracket a reference operating point.

    Loads are drawn first, a lossless flow estimate gives reference angles,
    and every non-slack bus then gets p/q bounds of relative width ``band``
    (plus 1e-3 absolute) around its exact injection at that point, so the
    reference point is strictly feasible.  Loads sit near their upper bound
    of consumption, so loss minimization leaves the lower bounds slack.
    Some edges are stored against the feeder direction.
    """
    rng = np.random.default_rng(seed)
    tree = _random_tree(n_buses, rng)
    r = rng.uniform(0.01, 0.05, n_buses - 1)
    x = rng.uniform(0.02, 0.08, n_buses - 1)
    g, b = r / (r**2 + x**2), x / (r**2 + x**2)
    load_p = rng.uniform(0.02, 0.1, n_buses)
    load_q = load_p * rng.uniform(0.2, 0.5, n_buses)
    load_p[0] = load_q[0] = 0.0
    subtree_p = load_p.copy()
    for parent, child in reversed(tree):
        subtree_p[parent] += subtree_p[child]

    edges, z_ref = [], []
    for k, (parent, child) in enumerate(tree):
        z = min(subtree_p[child] / b[k], 0.9 * math.sin(theta_max))
        if rng.random() < reverse_fraction:
            edges.append(EdgeRecord(child + 1, parent + 1, g[k], b[k], -theta_max, theta_max))
            z_ref.append(-z)
        else:
            edges.append(EdgeRecord(parent + 1, child + 1, g[k], b[k], -theta_max, theta_max))
            z_ref.append(z)
    draft = NetworkCase(tuple(BusRecord(i + 1) for i in range(n_buses)), tuple(edges), slack_bus=1)
    p, q = injections(draft, np.array(z_ref))

    coeffs = rng.uniform(0.5, 2.0, n_buses) if cost else np.zeros(n_buses)
    buses = [BusRecord(1, cost_coeff=float(coeffs[0]))]
    for i in range(1, n_buses):
        wp = band * abs(p[i]) + 1e-3
        wq = band * abs(q[i]) + 1e-3
        # bias the band so the reference sits near the upper end of consumption
        buses.append(BusRecord(i + 1, p_min=float(p[i] - 1.5 * wp), p_max=float(p[i] + 0.5 * wp),
                               q_min=float(q[i] - 1.5 * wq), q_max=float(q[i] + 0.5 * wq),
                               cost_coeff=float(coeffs[i])))
    return NetworkCase(tuple(buses), tuple(edges), slack_bus=1)


def reference_point(n_buses: int, seed: int = 0, theta_max: float = math.pi / 6,
                    reverse_fraction: float = 0.3) -> np.ndarray:
    """The z used to place the bounds of ``random_radial_case`` with the same arguments."""
    rng = np.random.default_rng(seed)
    tree = _random_tree(n_buses, rng)
    r = rng.uniform(0.01, 0.05, n_buses - 1)
    x = rng.uniform(0.02, 0.08, n_buses - 1)
    b = x / (r**2 + x**2)
    load_p = rng.uniform(0.02, 0.1, n_buses)
    rng.uniform(0.2, 0.5, n_buses)
    load_p[0] = 0.0
    subtree_p = load_p.copy()
    for parent, child in reversed(tree):
        subtree_p[parent] += subtree_p[child]
    out = []
    for k, (parent, child) in enumerate(tree):
        z = min(subtree_p[child] / b[k], 0.9 * math.sin(theta_max))
        out.append(-z if rng.random() < reverse_fraction else z)
    return np.array(out)


def synthetic_feeder_matpower(n_buses: int = 123, seed: int = 0, q_support: float = 5.0) -> str:
    """MATPOWER text for a random radial feeder with fixed loads and one source.

    Bus 1 is the reference with a generator of ample capacity; every other
    bus carries a fixed active load (some zero) and a reactive-only unit of
    +-``q_support`` MVAr.  With unit voltages a bus cannot hold both p and q
    fixed, hence the reactive units.  Fixed-load p bounds coincide, so the
    importer's ``load_tolerance`` is needed to obtain a strict interior.
    """
    rng = np.random.default_rng(seed)
    tree = _random_tree(n_buses, rng)
    base = 100.0
    bus_rows, branch_rows = [], []
    for i in range(n_buses):
        kind = 3 if i == 0 else 1
        if i == 0 or rng.random() < 0.25:
            pd = qd = 0.0
        else:
            pd = rng.uniform(0.05, 0.4)
            qd = pd * rng.uniform(0.2, 0.5)
        bus_rows.append([i + 1, kind, pd, qd, 0, 0, 1, 1.0, 0, 4.16, 1, 1.05, 0.95])
    for parent, child in tree:
        r, x = rng.uniform(0.002, 0.01), rng.uniform(0.004, 0.02)
        branch_rows.append([parent + 1, child + 1, r, x, 0, 0, 0, 0, 0, 0, 1, -360, 360])
    gen_rows = [[1, 0, 0, 50, -50, 1.0, base, 1, 100, -100]]
    gen_rows += [[i, 0, 0, q_support, -q_support, 1.0, base, 1, 0, 0] for i in range(2, n_buses + 1)]
    return write_matpower({"baseMVA": base, "bus": bus_rows, "gen": gen_rows, "branch": branch_rows},
                          name=f"synthetic{n_buses}")
