"""Evaluation in z = sin(theta) coordinates.

Every injection, and every objective this package optimizes, is a row of
the separable family

    f(z) = sum_e alpha_e * (1 - sqrt(1 - z_e**2)) + beta_e * z_e

with alpha >= 0, so each row is convex.  :class:`EdgeSum` holds a stack of such
rows and supplies the values and derivatives the solver needs.  For bus i and
edge e with orientation sign s (+1 at the tail, -1 at the head):

    p_i:  alpha = g_e,  beta =  s * b_e
    q_i:  alpha = b_e,  beta = -s * g_e
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, DomainError, UnknownEdge
from .model import NetworkCase, z_bounds

DOMAIN_MARGIN = 1e-9
KINDS = ("p", "q")


@dataclass(frozen=True)
class EdgeSum:
    alpha: np.ndarray  # (m, E)
    beta: np.ndarray   # (m, E)

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.atleast_2d(np.asarray(self.alpha, dtype=float)))
        object.__setattr__(self, "beta", np.atleast_2d(np.asarray(self.beta, dtype=float)))

    def __len__(self):
        return self.alpha.shape[0]

    @property
    def n_edges(self) -> int:
        return self.alpha.shape[1]

    def values(self, z):
        """Row values; +inf everywhere if any |z_e| >= 1."""
        z = np.asarray(z, dtype=float)
        if np.any(np.abs(z) >= 1.0) or not np.all(np.isfinite(z)):
            return np.full(len(self), np.inf)
        one_minus_c = 1.0 - np.sqrt(1.0 - z * z)
        return self.alpha @ one_minus_c + self.beta @ z

    def jacobian(self, z):
        z = np.asarray(z, dtype=float)
        return self.alpha * (z / np.sqrt(1.0 - z * z)) + self.beta

    def hessian_diag(self, z, weights=None):
        """Diagonal of sum_k w_k * Hess f_k (rows are separable, so it is diagonal)."""
        z = np.asarray(z, dtype=float)
        inv_c3 = (1.0 - z * z) ** -1.5
        if weights is None:
            return self.alpha * inv_c3
        return (np.asarray(weights) @ self.alpha) * inv_c3

    # solver-facing block interface
    def weighted_hessian(self, z, weights):
        return np.diag(self.hessian_diag(z, weights))

    def take(self, rows) -> "EdgeSum":
        return EdgeSum(self.alpha[rows], self.beta[rows])

    def support(self, row: int) -> np.ndarray:
        return np.flatnonzero((self.alpha[row] != 0) | (self.beta[row] != 0))

    def minimum(self) -> np.ndarray:
        """Per-row infimum over the ball |z_e| <= 1 (closed form, edge by edge)."""
        return (self.alpha - np.hypot(self.alpha, self.beta)).sum(axis=1)

    def minimizer(self, row: int) -> np.ndarray:
        """Closed-form per-edge minimizer of one row; entries off its support are 0.

        Where alpha_e = 0 the infimum sits on |z_e| = 1 and is not attained;
        the point returned there is pulled inside by the domain margin.
        """
        a, b = self.alpha[row], self.beta[row]
        r = np.hypot(a, b)
        z = np.divide(-b, r, out=np.zeros_like(b), where=r > 0)
        return np.clip(z, -1.0 + 1e3 * DOMAIN_MARGIN, 1.0 - 1e3 * DOMAIN_MARGIN)


def injection_rows(case: NetworkCase) -> tuple[EdgeSum, EdgeSum]:
    """(p rows, q rows), one row per bus in case order."""
    signed = case.incidence
    unsigned = np.abs(signed)
    g, b = case.g, case.b
    return (EdgeSum(unsigned * g, signed * b), EdgeSum(unsigned * b, -signed * g))


def stacked_rows(case: NetworkCase) -> EdgeSum:
    p, q = injection_rows(case)
    return EdgeSum(np.vstack([p.alpha, q.alpha]), np.vstack([p.beta, q.beta]))


def row_index(case: NetworkCase, bus: int, kind: str) -> int:
    """Position of (bus id, kind) in :func:`stacked_rows`."""
    if kind not in KINDS:
        raise ValueError(f"kind must be 'p' or 'q', got {kind!r}")
    k = case.bus_index[bus]
    return k if kind == "p" else case.n_buses + k


def as_z(case: NetworkCase, z) -> np.ndarray:
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.shape[0] != case.n_edges:
        raise DimensionMismatch(f"z has length {z.shape[0]}, case has {case.n_edges} edges")
    return z


def _check_derivative_domain(z):
    bad = np.flatnonzero(np.abs(z) >= 1.0 - DOMAIN_MARGIN)
    if bad.size:
        raise DomainError(f"|z| too close to 1 on edges {bad.tolist()} (margin {DOMAIN_MARGIN})")


def injections(case: NetworkCase, z) -> tuple[np.ndarray, np.ndarray]:
    z = as_z(case, z)
    if np.any(np.abs(z) > 1.0):
        raise DomainError("injections need |z_e| <= 1")
    one_minus_c = 1.0 - np.sqrt(1.0 - z * z)
    a = case.incidence
    p = np.abs(a) @ (case.g * one_minus_c) + a @ (case.b * z)
    q = np.abs(a) @ (case.b * one_minus_c) - a @ (case.g * z)
    return p, q


def branch_flow(case: NetworkCase, z, edge: int) -> float:
    """Active power leaving the tail of ``edge`` towards its head."""
    z = as_z(case, z)
    if not 0 <= edge < case.n_edges:
        raise UnknownEdge(edge)
    ze = z[edge]
    return case.g[edge] * (1.0 - math.sqrt(1.0 - ze * ze)) + case.b[edge] * ze


def injection_jacobian(case: NetworkCase, z) -> np.ndarray:
    """d[p; q]/dz, shape (2N, E)."""
    z = as_z(case, z)
    _check_derivative_domain(z)
    return stacked_rows(case).jacobian(z)


def injection_hessian_diag(case: NetworkCase, bus: int, kind: str, z) -> np.ndarray:
    z = as_z(case, z)
    _check_derivative_domain(z)
    rows = stacked_rows(case)
    return rows.hessian_diag(z)[row_index(case, bus, kind)]


def recover_angles(case: NetworkCase, z) -> np.ndarray:
    """Bus angles with the slack at 0, by breadth-first search over the tree."""
    z = as_z(case, z)
    step = np.arcsin(np.clip(z, -1.0, 1.0))
    theta = np.zeros(case.n_buses)
    root = case.bus_index[case.slack_bus]
    seen = {root}
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for e in case.adjacency[u]:
            t, h = int(case.tail[e]), int(case.head[e])
            if u == t and h not in seen:
                theta[h] = theta[t] - step[e]
                seen.add(h)
                queue.append(h)
            elif u == h and t not in seen:
                theta[t] = theta[h] + step[e]
                seen.add(t)
                queue.append(t)
    return theta


@dataclass
class OperatingPoint:
    z: np.ndarray
    theta: np.ndarray
    p: np.ndarray
    q: np.ndarray

    @classmethod
    def from_z(cls, case: NetworkCase, z) -> "OperatingPoint":
        z = as_z(case, z).copy()
        p, q = injections(case, z)
        return cls(z=z, theta=recover_angles(case, z), p=p, q=q)

    def to_dict(self) -> dict:
        return {k: np.asarray(getattr(self, k)).tolist() for k in ("z", "theta", "p", "q")}

    @classmethod
    def from_dict(cls, doc: dict) -> "OperatingPoint":
        arrays = {k: np.asarray(doc.get(k, []), dtype=float) for k in ("z", "theta", "p", "q")}
        return cls(**arrays)


@dataclass
class FeasibilityReport:
    feasible: bool
    max_violation: float
    violations: list[tuple[str, float]] = field(default_factory=list)
    tolerance: float = 0.0

    def to_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "max_violation": self.max_violation,
            "tolerance": self.tolerance,
            "violations": [{"constraint": name, "residual": r} for name, r in self.violations],
        }


def constraint_residuals(case: NetworkCase, z) -> list[tuple[str, float]]:
    """Every original constraint as (name, lhs - bound); <= 0 means satisfied.

    Infinite bounds are skipped.  Outside |z| <= 1 only the box and domain
    residuals are reported.
    """
    z = as_z(case, z)
    lo, hi = z_bounds(case)
    out: list[tuple[str, float]] = []
    for e in range(case.n_edges):
        out.append((f"z lower bound edge {e}", float(lo[e] - z[e])))
        out.append((f"z upper bound edge {e}", float(z[e] - hi[e])))
    outside = np.flatnonzero(np.abs(z) > 1.0)
    if outside.size:
        out.extend((f"domain edge {e}", float(abs(z[e]) - 1.0)) for e in outside)
        return out
    p, q = injections(case, z)
    for kind, vals in (("p", p), ("q", q)):
        bmin, bmax = case.bounds(kind)
        for k, bus in enumerate(case.buses):
            if math.isfinite(bmin[k]):
                out.append((f"{kind}_min bus {bus.id}", float(bmin[k] - vals[k])))
            if math.isfinite(bmax[k]):
                out.append((f"{kind}_max bus {bus.id}", float(vals[k] - bmax[k])))
    return out


def check_original_feasibility(case: NetworkCase, z, tol: float = 1e-8) -> FeasibilityReport:
    residuals = constraint_residuals(case, z)
    worst = max((r for _, r in residuals), default=-math.inf)
    bad = [(name, r) for name, r in residuals if r > tol]
    return FeasibilityReport(feasible=not bad, max_violation=worst, violations=bad, tolerance=tol)


def max_violation(case: NetworkCase, z) -> float:
    return max((r for _, r in constraint_residuals(case, z)), default=-math.inf)


def feasible_mask(case: NetworkCase, Z, tol: float = 0.0) -> np.ndarray:
    """Vectorized original-feasibility test for a stack of points Z (K, E)."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    lo, hi = z_bounds(case)
    ok = np.all((Z >= lo - tol) & (Z <= hi + tol), axis=1)
    one_minus_c = 1.0 - np.sqrt(np.clip(1.0 - Z * Z, 0.0, None))
    rows = stacked_rows(case)
    vals = one_minus_c @ rows.alpha.T + Z @ rows.beta.T
    pmin, pmax = case.bounds("p")
    qmin, qmax = case.bounds("q")
    bmin = np.concatenate([pmin, qmin])
    bmax = np.concatenate([pmax, qmax])
    ok &= np.all(vals >= bmin - tol, axis=1) & np.all(vals <= bmax + tol, axis=1)
    return ok


def min_injection(case: NetworkCase, bus: int, kind: str) -> float:
    """Infimum of p_i (or q_i) over |z_e| <= 1."""
    rows = stacked_rows(case)
    r = row_index(case, bus, kind)
    return float(rows.take([r]).minimum()[0])


def min_injection_point(case: NetworkCase, bus: int, kind: str) -> np.ndarray:
    rows = stacked_rows(case)
    return rows.minimizer(row_index(case, bus, kind))
