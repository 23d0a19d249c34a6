"""Iterative convex-restriction OPF: project, linearize, solve, repeat."""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .convexsolver import (Callbacks, SmoothConvexProgram, SolverConfig, Status, phase1, solve)
from .errors import (FeasibilityRegression, InfeasibleError, NotStrictlyFeasible, RadOPFError)
from .model import NetworkCase, require_valid, z_bounds
from .restriction import (BasePoints, Hyperplane, base_points, build_restricted, hyperplanes)
from .transform import (KINDS, EdgeSum, OperatingPoint, as_z, check_original_feasibility,
                        constraint_residuals, injection_rows, injections, row_index, stacked_rows)

log = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-8
STRICT_MARGIN = 1e-9


class Convexity(str, Enum):
    CONVEX = "Convex"
    NONCONVEX_SMOOTH = "NonconvexSmooth"


@dataclass
class MeasurementSet:
    p_hat: np.ndarray
    q_hat: np.ndarray
    noise_sigma: Optional[float] = None
    seed: Optional[int] = None

    def to_dict(self) -> dict:
        return {"p_hat": np.asarray(self.p_hat).tolist(), "q_hat": np.asarray(self.q_hat).tolist(),
                "noise_sigma": self.noise_sigma, "seed": self.seed}

    @classmethod
    def from_dict(cls, doc: dict) -> "MeasurementSet":
        return cls(p_hat=np.asarray(doc["p_hat"], dtype=float), q_hat=np.asarray(doc["q_hat"], dtype=float),
                   noise_sigma=doc.get("noise_sigma"), seed=doc.get("seed"))


@dataclass(frozen=True)
class Objective:
    """One of the catalog objectives: ``loss``, ``cost`` or ``estimate``."""

    variant: str
    coeffs: Optional[tuple[float, ...]] = None
    measurements: Optional[MeasurementSet] = None

    @classmethod
    def loss(cls) -> "Objective":
        return cls("loss")

    @classmethod
    def linear_cost(cls, coeffs=None) -> "Objective":
        """Sum of c_i p_i; ``None`` means use the case's own cost coefficients."""
        if coeffs is None:
            return cls("cost")
        coeffs = tuple(float(c) for c in coeffs)
        if any(not (c >= 0) for c in coeffs):
            raise ValueError("linear cost coefficients must be nonnegative")
        return cls("cost", coeffs=coeffs)

    @classmethod
    def state_estimation(cls, measurements: MeasurementSet) -> "Objective":
        return cls("estimate", measurements=measurements)

    def to_dict(self) -> dict:
        out: dict = {"variant": self.variant}
        if self.coeffs is not None:
            out["coeffs"] = list(self.coeffs)
        if self.measurements is not None:
            out["measurements"] = self.measurements.to_dict()
        return out


def classify_objective(obj: Objective) -> Convexity:
    if obj.variant in ("loss", "cost"):
        return Convexity.CONVEX
    if obj.variant == "estimate":
        return Convexity.NONCONVEX_SMOOTH
    raise ValueError(f"unknown objective variant {obj.variant!r}")


def _edge_sum_callbacks(row: EdgeSum) -> Callbacks:
    return Callbacks(lambda z: float(row.values(z)[0]),
                     lambda z: row.jacobian(z)[0],
                     lambda z: row.hessian_diag(z)[0])


def objective_callbacks(case: NetworkCase, obj: Objective) -> Callbacks:
    """Value/gradient/Hessian of the objective in z.

    Loss and linear cost are single convex edge-sum rows.  State estimation
    uses the Gauss-Newton surrogate 2 J^T J for its Hessian.
    """
    if obj.variant == "loss":
        return _edge_sum_callbacks(EdgeSum(2.0 * case.g, np.zeros(case.n_edges)))
    if obj.variant == "cost":
        c = np.asarray(obj.coeffs if obj.coeffs is not None else case.cost_coeffs, dtype=float)
        if c.shape != (case.n_buses,):
            raise ValueError(f"need {case.n_buses} cost coefficients, got {c.shape[0]}")
        p_rows, _ = injection_rows(case)
        return _edge_sum_callbacks(EdgeSum(c @ p_rows.alpha, c @ p_rows.beta))
    if obj.variant == "estimate":
        meas = obj.measurements
        target = np.concatenate([meas.p_hat, meas.q_hat])
        if target.shape != (2 * case.n_buses,):
            raise ValueError("measurement vectors must have one entry per bus")
        rows = stacked_rows(case)

        def value(z):
            v = rows.values(z)
            return float(np.sum((target - v) ** 2))

        def gradient(z):
            return -2.0 * rows.jacobian(z).T @ (target - rows.values(z))

        def hessian(z):
            J = rows.jacobian(z)
            return 2.0 * J.T @ J

        return Callbacks(value, gradient, hessian)
    raise ValueError(f"unknown objective variant {obj.variant!r}")


def evaluate_objective(case: NetworkCase, obj: Objective, z) -> float:
    return objective_callbacks(case, obj).value(as_z(case, z))


@dataclass(frozen=True)
class AlgorithmConfig:
    eps: float = 1e-8
    max_outer: int = 50
    solver: SolverConfig = field(default_factory=SolverConfig)
    initial_rounds: int = 5

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.max_outer < 1:
            raise ValueError("max_outer must be >= 1")

    def to_dict(self) -> dict:
        return {"eps": self.eps, "max_outer": self.max_outer, "initial_rounds": self.initial_rounds,
                "solver": self.solver.to_dict()}


# ------------------------------------------------------------ initial point

def _strictly_feasible(case: NetworkCase, z, margin=STRICT_MARGIN) -> bool:
    return all(r < -margin for _, r in constraint_residuals(case, z))


def _boundary_toward_max(row: EdgeSum, bound, guess, lo, hi):
    """Point on f = bound between guess (f <= bound) and the box maximizer of f."""
    support = row.support(0)
    target = guess.copy()
    # f is convex and separable: each edge term is largest at an end of the box
    for e in support:
        ends = np.array([lo[e], hi[e]])
        terms = row.alpha[0, e] * (1.0 - np.sqrt(1.0 - ends**2)) + row.beta[0, e] * ends
        target[e] = ends[int(np.argmax(terms))]
    f = lambda z: float(row.values(z)[0])
    if f(target) <= bound:
        return None
    a, b = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (a + b)
        if f(guess + mid * (target - guess)) > bound:
            b = mid
        else:
            a = mid
    return guess + b * (target - guess)


def _linearize_at_guess(case: NetworkCase, guess, config: SolverConfig) -> list[Hyperplane]:
    """Tangent planes for every finite lower bound, anchored from an arbitrary guess."""
    from .restriction import project_onto_row

    rows = stacked_rows(case)
    minima = rows.minimum()
    lo, hi = z_bounds(case)
    planes = []
    for kind in KINDS:
        bmin, _ = case.bounds(kind)
        for k, bus in enumerate(case.buses):
            bound = bmin[k]
            r = row_index(case, bus.id, kind)
            if bound == -math.inf or minima[r] >= bound:
                continue
            single = rows.take([r])
            fg = float(single.values(guess)[0])
            if fg > bound:
                support = rows.support(r)
                point = guess.copy()
                point[support], _ = project_onto_row(single.alpha[0, support], single.beta[0, support],
                                                     bound, guess[support])
            else:
                point = _boundary_toward_max(single, bound, guess, lo, hi)
                if point is None:
                    raise InfeasibleError(f"{kind}_min of bus {bus.id} cannot be met inside the angle box")
            grad = single.jacobian(point)[0]
            value = float(single.values(point)[0])
            planes.append(Hyperplane((bus.id, kind), grad, value - float(grad @ point), float(bound), point))
    return planes


def initial_point(case: NetworkCase, config: AlgorithmConfig = AlgorithmConfig()) -> np.ndarray:
    """A strictly feasible z, or :class:`InfeasibleError`.

    Tries z = 0 first, then up to ``config.initial_rounds`` rounds of phase 1
    on a restriction linearized around the current guess.
    """
    require_valid(case)
    lo, hi = z_bounds(case)
    guess = np.zeros(case.n_edges)
    if _strictly_feasible(case, guess):
        return guess
    guess = np.clip(guess, lo, hi)
    best = math.inf
    for rnd in range(config.initial_rounds):
        planes = _linearize_at_guess(case, guess, config.solver)
        problem = build_restricted(case, planes, None)
        res = phase1(problem.program, guess, config.solver)
        z = res.x
        viol = max(r for _, r in constraint_residuals(case, z))
        best = min(best, viol)
        log.debug("initial point round %d: phase-1 s=%.3e, original violation %.3e", rnd, res.s, viol)
        if res.status == Status.OPTIMAL and _strictly_feasible(case, z):
            return z
        if np.allclose(z, guess, atol=1e-12, rtol=0):
            break
        guess = z
    raise InfeasibleError("no strictly feasible point found", best_violation=best)


# ---------------------------------------------------------------- main loop

@dataclass
class IterationRecord:
    k: int
    objective: float
    z: np.ndarray
    max_violation: float
    projection_residuals: dict
    newton_iterations: int
    wall_ms: float
    dropped: int = 0

    def to_dict(self) -> dict:
        return {
            "k": self.k, "objective": self.objective, "z": self.z.tolist(),
            "max_violation": self.max_violation, "newton_iterations": self.newton_iterations,
            "projection_residuals": [{"bus": b, "kind": kd, "residual": v}
                                     for (b, kd), v in self.projection_residuals.items()],
            "dropped": self.dropped,
        }


@dataclass
class IterationTrace:
    records: list[IterationRecord] = field(default_factory=list)
    initial_objective: float = math.nan
    converged: bool = False

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def objectives(self) -> list[float]:
        return [r.objective for r in self.records]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "objective", "max_violation", "newton_iters", "wall_ms"])
        for r in self.records:
            w.writerow([r.k, repr(r.objective), repr(r.max_violation), r.newton_iterations, f"{r.wall_ms:.3f}"])
        return buf.getvalue()


@dataclass
class OPFResult:
    trace: IterationTrace
    point: OperatingPoint
    objective_value: float
    feasibility: object


def solve_opf(case: NetworkCase, obj: Objective, z_init=None,
              config: AlgorithmConfig = AlgorithmConfig()) -> OPFResult:
    """Run the project / linearize / solve loop from a strictly feasible z_init.

    Stops when the squared change in objective is at most ``config.eps`` or
    after ``config.max_outer`` restricted solves.  Every accepted iterate is
    checked against the original constraints.
    """
    require_valid(case)
    if z_init is None:
        z_init = initial_point(case, config)
    z_o = as_z(case, z_init).copy()
    if not all(r < 0 for _, r in constraint_residuals(case, z_o)):
        raise NotStrictlyFeasible("z_init must strictly satisfy every constraint")
    callbacks = objective_callbacks(case, obj)
    trace = IterationTrace(initial_objective=callbacks.value(z_o))
    prev = None
    for k in range(config.max_outer):
        t0 = time.perf_counter()
        try:
            bp = base_points(case, z_o, config.solver)
            planes = hyperplanes(case, bp)
            problem = build_restricted(case, planes, callbacks, bp)
            res = solve(problem.program, z_o, config.solver)
        except RadOPFError as exc:
            exc.args = (f"outer iteration {k}: {exc}",)
            exc.iteration = k
            raise
        z_hat = res.x
        report = check_original_feasibility(case, z_hat, FEASIBILITY_TOL)
        if not report.feasible:
            raise FeasibilityRegression(
                f"outer iteration {k} produced an infeasible point: {report.violations[:3]}")
        c = callbacks.value(z_hat)
        trace.records.append(IterationRecord(
            k=k, objective=c, z=z_hat.copy(), max_violation=report.max_violation,
            projection_residuals=dict(bp.residuals), newton_iterations=res.newton_iterations,
            wall_ms=1e3 * (time.perf_counter() - t0), dropped=len(bp.dropped),
        ))
        log.info("iteration %d: objective %.10g, max violation %.3e", k, c, report.max_violation)
        if prev is not None and (c - prev) ** 2 <= config.eps:
            trace.converged = True
            break
        prev = c
        z_o = z_hat
    final = trace.records[-1]
    return OPFResult(trace=trace, point=OperatingPoint.from_z(case, final.z),
                     objective_value=final.objective,
                     feasibility=check_original_feasibility(case, final.z, FEASIBILITY_TOL))


def simulate_measurements(case: NetworkCase, z_true, noise_sigma: float = 0.0,
                          seed: Optional[int] = None) -> MeasurementSet:
    p, q = injections(case, z_true)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, 1.0, size=(2, case.n_buses)) * noise_sigma
    return MeasurementSet(p_hat=p + noise[0], q_hat=q + noise[1], noise_sigma=noise_sigma, seed=seed)
