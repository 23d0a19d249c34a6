"""Log-barrier Newton method for smooth convex programs.

Problems have the form

    minimize    f0(x)
    subject to  f_k(x) <= u_k        (smooth, convex)
                A x <= r
                lo <= x <= hi

Coordinates with ``lo == hi`` are held fixed.  Objectives may supply a PSD
surrogate Hessian (e.g. Gauss-Newton) instead of the true one; the method
then returns a feasible stationary point instead of a certified optimum.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import NotStrictlyFeasibleStart, NumericalFailure, ProjectionError

log = logging.getLogger(__name__)

NUDGE_SLACK = 1e-9
T_CEILING = 1e20


@dataclass(frozen=True)
class SolverConfig:
    barrier_initial_t: float = 1.0
    barrier_growth: float = 10.0
    duality_gap_tol: float = 1e-8
    newton_decrement_tol: float = 1e-10
    max_newton_per_stage: int = 50
    armijo_c1: float = 1e-4
    backtrack_factor: float = 0.5
    min_step: float = 1e-14
    fraction_to_boundary: float = 0.99

    def __post_init__(self):
        for name in ("barrier_initial_t", "duality_gap_tol", "newton_decrement_tol",
                     "armijo_c1", "min_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.barrier_growth > 1:
            raise ValueError("barrier_growth must exceed 1")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if not 0 < self.fraction_to_boundary < 1:
            raise ValueError("fraction_to_boundary must lie in (0, 1)")
        if self.max_newton_per_stage < 1:
            raise ValueError("max_newton_per_stage must be >= 1")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class Status(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass
class Callbacks:
    """Objective (or scalar constraint function) as value/gradient/Hessian.

    ``hessian`` may return a full matrix or a 1-D diagonal.
    """

    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]


@dataclass
class SmoothConstraint:
    """f(x) <= upper for a single convex f."""

    f: Callbacks
    upper: float


@dataclass
class ConstraintBlock:
    """A stack of convex constraints f_k(x) <= upper_k evaluated together.

    ``rows`` must provide ``values(x)`` (returning +inf outside the domain),
    ``jacobian(x)`` and ``weighted_hessian(x, w)`` = sum_k w_k Hess f_k(x).
    """

    rows: Any
    upper: np.ndarray

    def __post_init__(self):
        self.upper = np.asarray(self.upper, dtype=float).reshape(-1)

    def __len__(self):
        return self.upper.shape[0]


class _ScalarRows:
    def __init__(self, constraints: Sequence[SmoothConstraint]):
        self.fs = [c.f for c in constraints]

    def values(self, x):
        out = np.empty(len(self.fs))
        for k, f in enumerate(self.fs):
            v = f.value(x)
            out[k] = v if np.isfinite(v) else np.inf
        return out

    def jacobian(self, x):
        return np.array([np.asarray(f.gradient(x), dtype=float) for f in self.fs]).reshape(len(self.fs), -1)

    def weighted_hessian(self, x, w):
        n = x.shape[0]
        acc = np.zeros((n, n))
        for wk, f in zip(w, self.fs):
            acc += wk * _as_matrix(f.hessian(x), n)
        return acc


def _as_matrix(h, n):
    h = np.asarray(h, dtype=float)
    if h.ndim == 0:
        return np.eye(n) * float(h)
    if h.ndim == 1:
        return np.diag(h)
    return h


@dataclass
class SmoothConvexProgram:
    dimension: int
    objective: Optional[Callbacks] = None
    smooth: list = field(default_factory=list)
    A: Optional[np.ndarray] = None
    r: Optional[np.ndarray] = None
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.dimension
        self.A = np.zeros((0, n)) if self.A is None else np.atleast_2d(np.asarray(self.A, dtype=float)).reshape(-1, n)
        self.r = np.zeros(0) if self.r is None else np.asarray(self.r, dtype=float).reshape(-1)
        if self.A.shape[0] != self.r.shape[0]:
            raise ValueError("A and r disagree on the number of linear constraints")
        self.lo = np.full(n, -np.inf) if self.lo is None else np.asarray(self.lo, dtype=float).reshape(-1)
        self.hi = np.full(n, np.inf) if self.hi is None else np.asarray(self.hi, dtype=float).reshape(-1)
        if self.lo.shape != (n,) or self.hi.shape != (n,):
            raise ValueError("box bounds must have the program dimension")
        if np.any(self.lo > self.hi):
            raise ValueError("box lower bound exceeds upper bound")
        blocks = []
        scalars = []
        for item in self.smooth:
            if isinstance(item, SmoothConstraint):
                scalars.append(item)
            elif isinstance(item, ConstraintBlock):
                blocks.append(item)
            else:
                raise TypeError(f"unsupported constraint {type(item).__name__}")
        if scalars:
            blocks.append(ConstraintBlock(_ScalarRows(scalars), [c.upper for c in scalars]))
        self._blocks = [blk for blk in blocks if len(blk)]

    @property
    def blocks(self) -> list[ConstraintBlock]:
        return self._blocks

    @property
    def n_smooth(self) -> int:
        return sum(len(b) for b in self._blocks)

    def smooth_values(self, x) -> np.ndarray:
        """f_k(x) - u_k for every smooth row (<= 0 means satisfied)."""
        if not self._blocks:
            return np.zeros(0)
        return np.concatenate([blk.rows.values(x) - blk.upper for blk in self._blocks])

    def max_violation(self, x) -> float:
        """Largest residual over box, linear and smooth constraints."""
        vals = np.concatenate([self.lo - x, x - self.hi, self.A @ x - self.r, self.smooth_values(x)])
        return float(vals.max()) if vals.size else -np.inf


@dataclass
class SolverResult:
    status: Status
    x: np.ndarray
    objective_value: float
    newton_iterations: int
    certified_gap: float
    stages: int = 0
    merit_history: list = field(default_factory=list)


class _Barrier:
    def __init__(self, program: SmoothConvexProgram):
        self.p = program
        self.fixed = program.lo == program.hi
        self.free = ~self.fixed
        self.has_lo = np.isfinite(program.lo) & self.free
        self.has_hi = np.isfinite(program.hi) & self.free
        self.m = int(self.has_lo.sum() + self.has_hi.sum()) + program.A.shape[0] + program.n_smooth

    def slacks(self, x):
        p = self.p
        parts = [(x - p.lo)[self.has_lo], (p.hi - x)[self.has_hi], p.r - p.A @ x]
        parts.append(-p.smooth_values(x))
        return np.concatenate(parts)

    def min_slack(self, x):
        s = self.slacks(x)
        return float(s.min()) if s.size else np.inf

    def merit(self, x, t, with_objective=True):
        s = self.slacks(x)
        if s.size and not (np.all(s > 0) and np.all(np.isfinite(s))):
            return np.inf
        val = -np.sum(np.log(s))
        if with_objective and self.p.objective is not None:
            f0 = self.p.objective.value(x)
            if not np.isfinite(f0):
                return np.inf
            val += t * f0
        return float(val)

    def grad_hess(self, x, t, with_objective=True):
        p = self.p
        n = p.dimension
        g = np.zeros(n)
        H = np.zeros((n, n))
        if with_objective and p.objective is not None:
            g += t * np.asarray(p.objective.gradient(x), dtype=float)
            H += t * _as_matrix(p.objective.hessian(x), n)
        d = np.zeros(n)
        s_lo = x[self.has_lo] - p.lo[self.has_lo]
        g[self.has_lo] -= 1.0 / s_lo
        d[self.has_lo] += 1.0 / s_lo**2
        s_hi = p.hi[self.has_hi] - x[self.has_hi]
        g[self.has_hi] += 1.0 / s_hi
        d[self.has_hi] += 1.0 / s_hi**2
        H[np.diag_indices(n)] += d
        if p.A.shape[0]:
            inv = 1.0 / (p.r - p.A @ x)
            g += p.A.T @ inv
            H += (p.A.T * inv**2) @ p.A
        for blk in p.blocks:
            inv = 1.0 / (blk.upper - blk.rows.values(x))
            J = np.asarray(blk.rows.jacobian(x), dtype=float)
            g += J.T @ inv
            H += (J.T * inv**2) @ J + blk.rows.weighted_hessian(x, inv)
        return g, H

    def direction(self, g, H):
        f = self.free
        gf, Hf = g[f], H[np.ix_(f, f)]
        d = np.zeros_like(g)
        d[f] = _newton_solve(Hf, gf)
        return d

    def max_step(self, x, d):
        """Largest alpha keeping the box and linear slacks nonnegative."""
        p = self.p
        alpha = np.inf
        for mask, slack, rate in (
            (self.has_lo, x - p.lo, -d),
            (self.has_hi, p.hi - x, d),
        ):
            sel = mask & (rate > 0)
            if np.any(sel):
                alpha = min(alpha, float(np.min(slack[sel] / rate[sel])))
        if p.A.shape[0]:
            rate = p.A @ d
            sel = rate > 0
            if np.any(sel):
                alpha = min(alpha, float(np.min((p.r - p.A @ x)[sel] / rate[sel])))
        return alpha


def _newton_solve(H, g):
    """Solve H d = -g with Jacobi scaling and Cholesky, regularizing if needed."""
    if H.size == 0:
        return np.zeros(0)
    diag = np.diag(H).copy()
    scale = 1.0 / np.sqrt(np.where(diag > 0, diag, 1.0))
    Hs = H * scale[:, None] * scale[None, :]
    rhs = -g * scale
    reg = 0.0
    for _ in range(12):
        try:
            c = cho_factor(Hs + reg * np.eye(H.shape[0]), check_finite=True)
            return cho_solve(c, rhs) * scale
        except (LinAlgError, ValueError):
            reg = 1e-12 if reg == 0.0 else reg * 100
    raise NumericalFailure("Newton system is not positive definite")


def _center(bar: _Barrier, x, t, cfg: SolverConfig, history, with_objective=True):
    iters = 0
    for _ in range(cfg.max_newton_per_stage):
        g, H = bar.grad_hess(x, t, with_objective)
        d = bar.direction(g, H)
        lam2 = float(-g @ d)
        if lam2 / 2.0 <= cfg.newton_decrement_tol:
            break
        if not lam2 > 0:
            # direction is not a descent direction; the system is too ill-conditioned to go on
            if lam2 / 2.0 <= 1e-6:
                break
            raise NumericalFailure(f"non-descent Newton direction (decrement^2={lam2:.3e})")
        phi0 = bar.merit(x, t, with_objective)
        alpha = min(1.0, cfg.fraction_to_boundary * bar.max_step(x, d))
        allowance = 1e-13 * (1.0 + abs(phi0))
        while True:
            xn = x + alpha * d
            phi = bar.merit(xn, t, with_objective)
            if phi <= phi0 - cfg.armijo_c1 * alpha * lam2 + allowance:
                break
            alpha *= cfg.backtrack_factor
            if alpha < cfg.min_step:
                if lam2 / 2.0 <= 1e-6:
                    return x, iters
                raise NumericalFailure(
                    f"line search stalled at t={t:.3e} (decrement^2={lam2:.3e})")
        x = xn
        iters += 1
        history.append(phi)
    return x, iters


def solve(program: SmoothConvexProgram, start, config: SolverConfig = SolverConfig(), *,
          stop_when: Optional[Callable[[np.ndarray], bool]] = None,
          require: Optional[Callable[[np.ndarray], bool]] = None) -> SolverResult:
    """Barrier path-following from a strictly feasible ``start``.

    :param stop_when: checked after every centering stage; returning True ends
        the solve early (used by phase 1).
    :param require: extra condition that must hold, on top of the duality-gap
        test, before the solve may stop.
    :raises NotStrictlyFeasibleStart: if any slack at ``start`` is not positive.
    :raises NumericalFailure: if a Newton stage stalls.
    """
    bar = _Barrier(program)
    x = np.array(start, dtype=float).reshape(-1)
    if x.shape[0] != program.dimension:
        raise ValueError(f"start has length {x.shape[0]}, program dimension is {program.dimension}")
    x[bar.fixed] = program.lo[bar.fixed]
    s = bar.slacks(x)
    if s.size and not (np.all(s > 0) and np.all(np.isfinite(s))):
        raise NotStrictlyFeasibleStart(f"start violates a constraint (min slack {float(np.min(s)):.3e})")

    total = 0
    history: list[list[float]] = []
    if bar.m == 0:
        if program.objective is None:
            return SolverResult(Status.OPTIMAL, x, math.nan, 0, 0.0)
        stage: list[float] = []
        x, total = _center(bar, x, 1.0, config, stage)
        history.append(stage)
        return SolverResult(Status.OPTIMAL, x, float(program.objective.value(x)), total, 0.0, 1, history)

    if bar.min_slack(x) < NUDGE_SLACK:
        x = _nudge(bar, x, config)

    t = config.barrier_initial_t
    stages = 0
    while True:
        stage = []
        x, iters = _center(bar, x, t, config, stage)
        history.append(stage)
        total += iters
        stages += 1
        gap = bar.m / t
        if stop_when is not None and stop_when(x):
            break
        if gap <= config.duality_gap_tol and (require is None or require(x)):
            break
        if t >= T_CEILING:
            raise NumericalFailure("barrier parameter exceeded its ceiling without meeting the stop test")
        t *= config.barrier_growth
    obj = float(program.objective.value(x)) if program.objective is not None else math.nan
    return SolverResult(Status.OPTIMAL, x, obj, total, bar.m / t, stages, history)


def _nudge(bar: _Barrier, x, cfg: SolverConfig):
    """One damped Newton step on the pure barrier, moving x off near-active constraints."""
    g, H = bar.grad_hess(x, 0.0, with_objective=False)
    d = bar.direction(g, H)
    lam = math.sqrt(max(float(-g @ d), 0.0))
    alpha = min(1.0 / (1.0 + lam), cfg.fraction_to_boundary * bar.max_step(x, d))
    phi0 = bar.merit(x, 0.0, with_objective=False)
    while alpha >= cfg.min_step:
        xn = x + alpha * d
        if bar.merit(xn, 0.0, with_objective=False) <= phi0:
            return xn
        alpha *= cfg.backtrack_factor
    return x


# ------------------------------------------------------------------ phase 1

@dataclass
class Phase1Result:
    status: Status
    x: np.ndarray
    s: float
    lower_bound: float
    newton_iterations: int


class _ShiftedRows:
    """Rows f_k(x) - s over the augmented vector (x, s)."""

    def __init__(self, rows):
        self.rows = rows

    def values(self, xs):
        return self.rows.values(xs[:-1]) - xs[-1]

    def jacobian(self, xs):
        J = np.asarray(self.rows.jacobian(xs[:-1]), dtype=float)
        return np.hstack([J, -np.ones((J.shape[0], 1))])

    def weighted_hessian(self, xs, w):
        n = xs.shape[0]
        out = np.zeros((n, n))
        out[:-1, :-1] = self.rows.weighted_hessian(xs[:-1], w)
        return out


def _interior_guess(lo, hi, x):
    x = np.array(x, dtype=float)
    width = np.where(np.isfinite(hi - lo), hi - lo, 2.0)
    inner_lo = np.where(np.isfinite(lo), lo + 0.01 * width, -np.inf)
    inner_hi = np.where(np.isfinite(hi), hi - 0.01 * width, np.inf)
    outside = ~((x > lo) & (x < hi)) & (lo < hi)
    x[outside] = np.clip(x[outside], inner_lo[outside], inner_hi[outside])
    fixed = lo == hi
    x[fixed] = lo[fixed]
    return x


def phase1(program: SmoothConvexProgram, guess, config: SolverConfig = SolverConfig(),
           margin: float = 1e-9) -> Phase1Result:
    """Find a strictly feasible point by minimizing a common constraint slack s.

    Every smooth and linear constraint is relaxed by s, the box stays hard and
    s is kept above -1.  Returns status Optimal with x once s < -margin, or
    Infeasible with a certified lower bound on the smallest achievable s.
    """
    n = program.dimension
    x0 = _interior_guess(program.lo, program.hi, guess)
    if program.A.shape[0] == 0 and program.n_smooth == 0:
        return Phase1Result(Status.OPTIMAL, x0, -math.inf, -math.inf, 0)
    viol = np.concatenate([program.A @ x0 - program.r, program.smooth_values(x0)])
    if not np.all(np.isfinite(viol)):
        raise ValueError("phase-1 guess lies outside the domain of a smooth constraint")
    s0 = float(viol.max()) + 1.0
    if s0 <= -1.0:
        s0 = -0.5
    blocks = [ConstraintBlock(_ShiftedRows(blk.rows), blk.upper) for blk in program.blocks]
    aug = SmoothConvexProgram(
        dimension=n + 1,
        objective=Callbacks(lambda xs: xs[-1],
                            lambda xs: np.eye(1, n + 1, n).ravel(),
                            lambda xs: np.zeros(n + 1)),
        smooth=blocks,
        A=np.hstack([program.A, -np.ones((program.A.shape[0], 1))]),
        r=program.r,
        lo=np.append(program.lo, -1.0),
        hi=np.append(program.hi, np.inf),
    )
    res = solve(aug, np.append(x0, s0), config, stop_when=lambda xs: xs[-1] < -margin)
    x, s = res.x[:-1], float(res.x[-1])
    if s < -margin:
        return Phase1Result(Status.OPTIMAL, x, s, -math.inf, res.newton_iterations)
    return Phase1Result(Status.INFEASIBLE, x, s, s - res.certified_gap, res.newton_iterations)


# --------------------------------------------------------------- projection

def project_euclidean(f: Callbacks, bound: float, z0, interior_hint,
                      config: SolverConfig = SolverConfig(), *, polish: bool = True,
                      boundary_tol: float = 1e-7) -> np.ndarray:
    """Euclidean projection of ``z0`` onto the convex set {z : f(z) <= bound}.

    ``interior_hint`` must satisfy f < bound strictly; it is the barrier
    start.  With ``polish`` the barrier answer is refined by Newton's method
    on the projection's KKT system.
    """
    z0 = np.asarray(z0, dtype=float).reshape(-1)
    hint = np.asarray(interior_hint, dtype=float).reshape(-1)
    f0 = f.value(z0)
    if f0 <= bound:
        if f0 >= bound - 1e-12:
            return z0.copy()
        raise ProjectionError("z0 already lies inside the set")
    if not f.value(hint) < bound:
        raise ProjectionError("interior hint is not strictly inside the set")
    n = z0.shape[0]
    program = SmoothConvexProgram(
        dimension=n,
        objective=Callbacks(lambda z: float(np.sum((z - z0) ** 2)),
                            lambda z: 2.0 * (z - z0),
                            lambda z: np.full(n, 2.0)),
        smooth=[SmoothConstraint(f, bound)],
    )
    res = solve(program, hint, config,
                require=lambda z: bound - f.value(z) <= boundary_tol)
    z = res.x
    if polish:
        z = _polish_projection(f, bound, z0, z)
    return z


def _polish_projection(f: Callbacks, bound, z0, z, max_iter=30):
    """Newton on  z - z0 + mu grad f(z) = 0,  f(z) = bound."""
    n = z.shape[0]

    def residual(z, mu):
        gr = np.asarray(f.gradient(z), dtype=float)
        return np.concatenate([z - z0 + mu * gr, [f.value(z) - bound]]), gr

    gr = np.asarray(f.gradient(z), dtype=float)
    gg = float(gr @ gr)
    if gg == 0:
        return z
    mu = max(float(gr @ (z0 - z)) / gg, 0.0)
    F, gr = residual(z, mu)
    best = (np.linalg.norm(F), z, mu)
    for _ in range(max_iter):
        if not np.all(np.isfinite(F)):
            break
        if np.linalg.norm(F) <= 1e-15 * (1.0 + np.linalg.norm(z0)):
            break
        K = np.zeros((n + 1, n + 1))
        K[:n, :n] = np.eye(n) + mu * _as_matrix(f.hessian(z), n)
        K[:n, n] = gr
        K[n, :n] = gr
        try:
            step = np.linalg.solve(K, -F)
        except np.linalg.LinAlgError:
            break
        alpha = 1.0
        norm0 = np.linalg.norm(F)
        while alpha > 1e-6:
            zn, mun = z + alpha * step[:n], mu + alpha * step[n]
            if mun >= 0:
                Fn, grn = residual(zn, mun)
                if np.all(np.isfinite(Fn)) and np.linalg.norm(Fn) < norm0:
                    break
            alpha *= 0.5
        else:
            break
        z, mu, F, gr = zn, mun, Fn, grn
        if np.linalg.norm(F) < best[0]:
            best = (np.linalg.norm(F), z, mu)
    return best[1]
