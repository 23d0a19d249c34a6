"""Convex restriction of the injection lower bounds.

Upper bounds f(z) <= U stay as they are (f is convex).  A lower bound
f(z) >= L is replaced by h(z) >= L, where h is the tangent plane of f at the
Euclidean projection of a strictly feasible point onto {f <= L}.  Since h <= f
everywhere, h(z) >= L implies f(z) >= L.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .convexsolver import (Callbacks, ConstraintBlock, SmoothConvexProgram, SolverConfig,
                           project_euclidean)
from .errors import DegenerateGradient, NotStrictlyFeasible, ProjectionError, RadOPFError
from .model import NetworkCase, z_bounds
from .transform import (DOMAIN_MARGIN, KINDS, EdgeSum, as_z, constraint_residuals, row_index,
                        stacked_rows)

# linear coordinates stop where the row minimizer does
LINEAR_EDGE = 1.0 - 1e3 * DOMAIN_MARGIN

BOUNDARY_TOL = 1e-6
DEGENERATE_GRAD = 1e-12


def _lower_bound(case: NetworkCase, bus: int, kind: str) -> float:
    rec = case.buses[case.bus_index[bus]]
    return rec.p_min if kind == "p" else rec.q_min


def lower_bound_set_empty(case: NetworkCase, bus: int, kind: str) -> bool:
    """True when {z : f(z) <= lower bound} is empty, or the bound is -inf."""
    bound = _lower_bound(case, bus, kind)
    if bound == -math.inf:
        return True
    rows = stacked_rows(case)
    return float(rows.take([row_index(case, bus, kind)]).minimum()[0]) > bound


@dataclass
class BasePoints:
    """Tangent points keyed by (bus id, kind), plus the constraints left out."""

    z0: np.ndarray
    points: dict[tuple[int, str], np.ndarray] = field(default_factory=dict)
    bounds: dict[tuple[int, str], float] = field(default_factory=dict)
    residuals: dict[tuple[int, str], float] = field(default_factory=dict)
    dropped: list[tuple[int, str, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "z0": self.z0.tolist(),
            "points": [
                {"bus": bus, "kind": kind, "z": z.tolist(), "bound": self.bounds[(bus, kind)],
                 "residual": self.residuals.get((bus, kind), 0.0)}
                for (bus, kind), z in self.points.items()
            ],
            "dropped": [{"bus": bus, "kind": kind, "reason": why} for bus, kind, why in self.dropped],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BasePoints":
        bp = cls(z0=np.asarray(doc.get("z0", []), dtype=float))
        for item in doc.get("points", []):
            key = (int(item["bus"]), str(item["kind"]))
            bp.points[key] = np.asarray(item["z"], dtype=float)
            bp.bounds[key] = float(item["bound"])
            bp.residuals[key] = float(item.get("residual", 0.0))
        bp.dropped = [(int(d["bus"]), str(d["kind"]), str(d.get("reason", ""))) for d in doc.get("dropped", [])]
        return bp


@dataclass
class Hyperplane:
    """Affine h(z) = normal . z + offset, tangent to f at ``base``."""

    owner: tuple[int, str]
    normal: np.ndarray
    offset: float
    bound: float
    base: np.ndarray

    def __call__(self, z) -> np.ndarray:
        return np.asarray(z) @ self.normal + self.offset

    def to_dict(self) -> dict:
        return {"bus": self.owner[0], "kind": self.owner[1], "normal": self.normal.tolist(),
                "offset": self.offset, "bound": self.bound, "base": self.base.tolist()}


def _local_function(rows: EdgeSum, row: int, support: np.ndarray) -> tuple[Callbacks, EdgeSum]:
    local = EdgeSum(rows.alpha[row, support], rows.beta[row, support])

    def value(y):
        return float(local.values(y)[0])

    def gradient(y):
        return local.jacobian(y)[0]

    def hessian(y):
        return local.hessian_diag(y)[0]

    return Callbacks(value, gradient, hessian), local


def _solve_stationary(alpha, beta, y0, mu, y_start, max_iter=100):
    """Per coordinate, the root in (-1, 1) of  y - y0 + mu (alpha y / sqrt(1 - y^2) + beta).

    The left side is strictly increasing in y, so a bracketed Newton method
    converges from any start.  Where alpha is zero the root is y0 - mu beta,
    clipped to the domain.
    """
    linear = alpha == 0
    if linear.any():
        y = np.empty_like(y0)
        y[linear] = np.clip(y0[linear] - mu * beta[linear], -LINEAR_EDGE, LINEAR_EDGE)
        if (~linear).any():
            y[~linear] = _solve_stationary(alpha[~linear], beta[~linear], y0[~linear], mu,
                                           y_start[~linear], max_iter)
        return y
    lo, hi = np.full_like(y0, -1.0), np.full_like(y0, 1.0)
    y = np.clip(y_start, -1.0 + 1e-12, 1.0 - 1e-12)
    for _ in range(max_iter):
        c = np.sqrt(1.0 - y * y)
        phi = y - y0 + mu * (alpha * y / c + beta)
        lo = np.where(phi < 0, y, lo)
        hi = np.where(phi > 0, y, hi)
        step = phi / (1.0 + mu * alpha / c**3)
        y_new = y - step
        outside = (y_new <= lo) | (y_new >= hi)
        y_new = np.where(outside, 0.5 * (lo + hi), y_new)
        if np.max(np.abs(y_new - y)) <= 1e-16:
            return y_new
        y = y_new
    return y


def project_onto_row(alpha, beta, bound: float, y0, tol: float = 1e-14) -> tuple[np.ndarray, float]:
    """Projection of y0 onto {y : sum alpha(1 - sqrt(1 - y^2)) + beta y <= bound}.

    Stationarity y - y0 + mu grad f(y) = 0 separates by coordinate, so for a
    fixed multiplier mu each coordinate is a scalar monotone root.  f(y(mu))
    decreases in mu; the multiplier is found by bracketed Newton.  Coordinates
    with alpha = 0 are linear and are kept within |y| <= LINEAR_EDGE.  Needs
    alpha >= 0 and f(y0) > bound > min f.
    Returns (point, multiplier).
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    row = EdgeSum(alpha, beta)

    def f(y):
        return float(row.values(y)[0])

    if np.any(alpha < 0):
        raise ProjectionError("separable projection needs alpha >= 0 on every coordinate")
    if not f(y0) > bound:
        raise ProjectionError("y0 already lies inside the set")
    if not f(row.minimizer(0)) < bound:
        raise ProjectionError("the sublevel set has no interior")
    scale = tol * (1.0 + abs(bound))
    mu_lo, mu_hi = 0.0, math.inf
    mu, y = 0.0, y0.copy()
    for _ in range(200):
        y = _solve_stationary(alpha, beta, y0, mu, y)
        F = f(y) - bound
        if abs(F) <= scale:
            return y, mu
        if F > 0:
            mu_lo = mu
        else:
            mu_hi = mu
        c = np.sqrt(1.0 - y * y)
        grad = alpha * y / c + beta
        moving = (alpha > 0) | (np.abs(y) < LINEAR_EDGE)
        dF = -float(np.sum(np.where(moving, grad**2 / (1.0 + mu * alpha / c**3), 0.0)))
        mu_new = mu - F / dF if dF < 0 else math.inf
        if not mu_lo < mu_new < mu_hi:
            mu_new = 0.5 * (mu_lo + mu_hi) if math.isfinite(mu_hi) else 2.0 * mu_lo + 1.0
        if math.isfinite(mu_hi) and mu_hi - mu_lo <= 1e-15 * max(1.0, mu_hi):
            break
        mu = mu_new
    if abs(f(y) - bound) > BOUNDARY_TOL:
        raise ProjectionError(f"multiplier search stalled with residual {f(y) - bound:.3e}")
    return y, mu


def base_points(case: NetworkCase, z0, config: SolverConfig = SolverConfig(),
                method: str = "separable") -> BasePoints:
    """Project a strictly feasible z0 onto every nonempty lower-bound set.

    Each projection only moves the edges incident to the owning bus, so it
    is solved in that subspace; the other coordinates are copied from z0.
    ``method`` is "separable" (multiplier search, falling back to the barrier
    when some alpha is zero) or "barrier" (generic interior-point projection).
    """
    z0 = as_z(case, z0).copy()
    bad = [(name, r) for name, r in constraint_residuals(case, z0) if not r < 0]
    if bad:
        name, r = max(bad, key=lambda item: item[1])
        raise NotStrictlyFeasible(f"z0 is not strictly feasible: {name} residual {r:.3e}")

    if method not in ("separable", "barrier"):
        raise ValueError(f"unknown projection method {method!r}")
    rows = stacked_rows(case)
    minima = rows.minimum()
    bp = BasePoints(z0=z0)
    for kind in KINDS:
        for bus in case.buses:
            key = (bus.id, kind)
            bound = bus.p_min if kind == "p" else bus.q_min
            r = row_index(case, bus.id, kind)
            if bound == -math.inf:
                bp.dropped.append((bus.id, kind, "unbounded"))
                continue
            if minima[r] > bound:
                bp.dropped.append((bus.id, kind, "empty"))
                continue
            if minima[r] == bound:
                # the set is the single minimizer; f >= bound holds everywhere
                bp.dropped.append((bus.id, kind, "vacuous"))
                continue
            support = rows.support(r)
            f_local, _ = _local_function(rows, r, support)
            hint = rows.minimizer(r)[support]
            local = rows.take([r])
            try:
                if method == "separable":
                    y, _ = project_onto_row(local.alpha[0, support], local.beta[0, support], bound, z0[support])
                else:
                    y = project_euclidean(f_local, bound, z0[support], hint, config)
            except RadOPFError as exc:
                raise ProjectionError(f"projection for {kind} lower bound of bus {bus.id} failed: {exc}") from exc
            point = z0.copy()
            point[support] = y
            bp.points[key] = point
            bp.bounds[key] = float(bound)
            bp.residuals[key] = abs(f_local.value(y) - bound)
    return bp


def hyperplanes(case: NetworkCase, bp: BasePoints) -> list[Hyperplane]:
    rows = stacked_rows(case)
    out = []
    for (bus, kind), point in bp.points.items():
        r = row_index(case, bus, kind)
        single = rows.take([r])
        grad = single.jacobian(point)[0]
        if np.linalg.norm(grad) <= DEGENERATE_GRAD:
            raise DegenerateGradient(f"gradient of {kind}_{bus} vanishes at its base point")
        value = float(single.values(point)[0])
        out.append(Hyperplane(owner=(bus, kind), normal=grad, offset=value - float(grad @ point),
                              bound=bp.bounds[(bus, kind)], base=point.copy()))
    return out


@dataclass
class RestrictedProblem:
    program: SmoothConvexProgram
    hyperplanes: list[Hyperplane]
    upper_rows: list[tuple[int, str]]
    base_points: Optional[BasePoints] = None


def upper_bound_block(case: NetworkCase) -> tuple[Optional[ConstraintBlock], list[tuple[int, str]]]:
    rows = stacked_rows(case)
    keys, idx, upper = [], [], []
    for kind in KINDS:
        _, bmax = case.bounds(kind)
        for k, bus in enumerate(case.buses):
            if math.isfinite(bmax[k]):
                keys.append((bus.id, kind))
                idx.append(row_index(case, bus.id, kind))
                upper.append(bmax[k])
    if not idx:
        return None, keys
    return ConstraintBlock(rows.take(idx), np.array(upper)), keys


def build_restricted(case: NetworkCase, planes, objective: Optional[Callbacks],
                     bp: Optional[BasePoints] = None) -> RestrictedProblem:
    """Box + smooth upper bounds + hyperplane lower bounds (as -h(z) <= -L).

    ``planes`` is a list of :class:`Hyperplane` or a :class:`BasePoints`, in
    which case the planes are built here.
    """
    if isinstance(planes, BasePoints):
        bp, planes = planes, hyperplanes(case, planes)
    lo, hi = z_bounds(case)
    block, keys = upper_bound_block(case)
    if planes:
        A = -np.array([h.normal for h in planes])
        r = np.array([h.offset - h.bound for h in planes])
    else:
        A, r = None, None
    program = SmoothConvexProgram(
        dimension=case.n_edges, objective=objective,
        smooth=[block] if block is not None else [],
        A=A, r=r, lo=lo, hi=hi,
    )
    return RestrictedProblem(program=program, hyperplanes=list(planes), upper_rows=keys, base_points=bp)


def restricted_mask(case: NetworkCase, planes: list[Hyperplane], Z, tol: float = 0.0) -> np.ndarray:
    """Vectorized membership test for the restricted set over points Z (K, E)."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    lo, hi = z_bounds(case)
    ok = np.all((Z >= lo - tol) & (Z <= hi + tol), axis=1)
    block, _ = upper_bound_block(case)
    if block is not None:
        rows = block.rows
        vals = (1.0 - np.sqrt(np.clip(1.0 - Z * Z, 0.0, None))) @ rows.alpha.T + Z @ rows.beta.T
        ok &= np.all(vals <= block.upper + tol, axis=1)
    for h in planes:
        ok &= h(Z) >= h.bound - tol
    return ok


@dataclass
class TangencyCertificate:
    max_excess: dict[tuple[int, str], float]
    tangency_gap: dict[tuple[int, str], float]
    boundary_residual: dict[tuple[int, str], float]
    soundness_violations: int
    vacuity_violations: int
    samples: int
    excess_tol: float = 1e-9
    tangency_tol: float = 1e-8
    boundary_tol: float = BOUNDARY_TOL

    @property
    def passed(self) -> bool:
        return (all(v <= self.excess_tol for v in self.max_excess.values())
                and all(v <= self.tangency_tol for v in self.tangency_gap.values())
                and all(v <= self.boundary_tol for v in self.boundary_residual.values())
                and self.soundness_violations == 0
                and self.vacuity_violations == 0)

    def to_dict(self) -> dict:
        def keyed(d):
            return [{"bus": b, "kind": k, "value": v} for (b, k), v in d.items()]

        return {
            "passed": self.passed, "samples": self.samples,
            "max_excess": keyed(self.max_excess), "tangency_gap": keyed(self.tangency_gap),
            "boundary_residual": keyed(self.boundary_residual),
            "soundness_violations": self.soundness_violations,
            "vacuity_violations": self.vacuity_violations,
        }


def certify(case: NetworkCase, bp: BasePoints, planes: list[Hyperplane],
            sample_count: int = 10_000, seed: int = 0) -> TangencyCertificate:
    """Sample the z box and check h <= f, tangency, and restricted => original."""
    from .transform import feasible_mask

    rng = np.random.default_rng(seed)
    lo, hi = z_bounds(case)
    Z = rng.uniform(lo, hi, size=(sample_count, case.n_edges))
    rows = stacked_rows(case)
    one_minus_c = 1.0 - np.sqrt(1.0 - Z * Z)
    excess, gap, resid = {}, {}, {}
    for h in planes:
        r = row_index(case, *h.owner)
        f_samples = one_minus_c @ rows.alpha[r] + Z @ rows.beta[r]
        excess[h.owner] = float(np.max(h(Z) - f_samples))
        f_base = float(rows.take([r]).values(h.base)[0])
        gap[h.owner] = abs(float(h(h.base)) - f_base)
        resid[h.owner] = abs(f_base - h.bound)
    soundness = int(np.sum(restricted_mask(case, planes, Z) & ~feasible_mask(case, Z)))
    vacuity = 0
    for bus, kind, _ in bp.dropped:
        bound = _lower_bound(case, bus, kind)
        if bound == -math.inf:
            continue
        r = row_index(case, bus, kind)
        f_samples = one_minus_c @ rows.alpha[r] + Z @ rows.beta[r]
        vacuity += int(np.sum(f_samples < bound))
    return TangencyCertificate(excess, gap, resid, soundness, vacuity, sample_count)
