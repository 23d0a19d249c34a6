"""Independent references: cone relaxation, brute-force grid search, region rasters."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .algorithm import Convexity, Objective, classify_objective
from .convexsolver import (ConstraintBlock, SmoothConvexProgram, SolverConfig, Status, phase1,
                           solve)
from .errors import InfeasibleError, TooLarge
from .model import NetworkCase, require_valid, z_bounds
from .restriction import BasePoints, Hyperplane, hyperplanes, restricted_mask
from .transform import EdgeSum, feasible_mask, injection_rows, stacked_rows

EXACT_TOL = 1e-6
MAX_ORACLE_EDGES = 3
MAX_ORACLE_RESOLUTION = 2001


# ------------------------------------------------------------- relaxation

@dataclass
class RelaxationResult:
    R: np.ndarray
    I: np.ndarray
    objective_value: float
    exactness_gap: float
    recovered_z: Optional[np.ndarray]
    newton_iterations: int = 0

    @property
    def exact(self) -> bool:
        return self.recovered_z is not None

    def to_dict(self) -> dict:
        return {
            "R": self.R.tolist(), "I": self.I.tolist(),
            "objective_value": self.objective_value, "exactness_gap": self.exactness_gap,
            "exact": self.exact,
            "recovered_z": None if self.recovered_z is None else self.recovered_z.tolist(),
            "newton_iterations": self.newton_iterations,
        }


class _BallRows:
    """R_e^2 + I_e^2 over x = (R, I)."""

    def __init__(self, n_edges: int):
        self.n = n_edges

    def values(self, x):
        R, I = x[: self.n], x[self.n:]
        return R * R + I * I

    def jacobian(self, x):
        R, I = x[: self.n], x[self.n:]
        return np.hstack([np.diag(2.0 * R), np.diag(2.0 * I)])

    def weighted_hessian(self, x, w):
        return np.diag(np.concatenate([2.0 * w, 2.0 * w]))


def _linear_objective(case: NetworkCase, obj: Objective) -> tuple[np.ndarray, np.ndarray]:
    """(alpha, beta) with objective = alpha . (1 - R) + beta . I."""
    if obj.variant == "loss":
        return 2.0 * case.g, np.zeros(case.n_edges)
    c = np.asarray(obj.coeffs if obj.coeffs is not None else case.cost_coeffs, dtype=float)
    p_rows, _ = injection_rows(case)
    return c @ p_rows.alpha, c @ p_rows.beta


def socp_relaxation(case: NetworkCase, obj: Objective,
                    config: SolverConfig = SolverConfig()) -> RelaxationResult:
    """Replace (cos, sin) of each edge by (R, I) with R^2 + I^2 <= 1, 0 <= R <= 1.

    Injections become linear in (R, I), so the problem is a second-order cone
    program; it is solved with the package's barrier method.
    """
    require_valid(case)
    if classify_objective(obj) is not Convexity.CONVEX:
        raise ValueError("the relaxation handles the loss and linear cost objectives only")
    E = case.n_edges
    rows = stacked_rows(case)
    bmin = np.concatenate([case.bounds("p")[0], case.bounds("q")[0]])
    bmax = np.concatenate([case.bounds("p")[1], case.bounds("q")[1]])
    # f(R, I) = alpha . 1 - alpha . R + beta . I
    const = rows.alpha.sum(axis=1)
    G = np.hstack([-rows.alpha, rows.beta])
    A_parts, r_parts = [], []
    hi_rows = np.isfinite(bmax)
    lo_rows = np.isfinite(bmin)
    if hi_rows.any():
        A_parts.append(G[hi_rows])
        r_parts.append(bmax[hi_rows] - const[hi_rows])
    if lo_rows.any():
        A_parts.append(-G[lo_rows])
        r_parts.append(const[lo_rows] - bmin[lo_rows])
    A = np.vstack(A_parts) if A_parts else None
    r = np.concatenate(r_parts) if r_parts else None

    a_obj, b_obj = _linear_objective(case, obj)
    grad = np.concatenate([-a_obj, b_obj])
    base = float(a_obj.sum())
    from .convexsolver import Callbacks

    objective = Callbacks(lambda x: base + float(grad @ x), lambda x: grad, lambda x: np.zeros(2 * E))
    zlo, zhi = z_bounds(case)
    program = SmoothConvexProgram(
        dimension=2 * E, objective=objective,
        smooth=[ConstraintBlock(_BallRows(E), np.ones(E))],
        A=A, r=r,
        lo=np.concatenate([np.zeros(E), zlo]), hi=np.concatenate([np.ones(E), zhi]),
    )
    guess = np.concatenate([np.full(E, 0.5), 0.5 * (zlo + zhi)])
    start = phase1(program, guess, config)
    if start.status != Status.OPTIMAL:
        raise InfeasibleError("the relaxation is infeasible, so the original problem is too",
                              best_violation=start.s)
    res = solve(program, start.x, config)
    R, I = res.x[:E].copy(), res.x[E:].copy()
    gap = float(np.max(1.0 - R * R - I * I)) if E else 0.0
    recovered = I.copy() if gap <= EXACT_TOL else None
    return RelaxationResult(R, I, res.objective_value, gap, recovered,
                            start.newton_iterations + res.newton_iterations)


# ----------------------------------------------------------------- oracle

@dataclass
class OracleResult:
    best_objective: float
    argmin: Optional[np.ndarray]
    feasible_count: int
    resolution: int
    tolerance: float

    def to_dict(self) -> dict:
        return {"best_objective": self.best_objective,
                "argmin": None if self.argmin is None else self.argmin.tolist(),
                "feasible_count": self.feasible_count, "resolution": self.resolution,
                "tolerance": self.tolerance}


def _objective_on_grid(case: NetworkCase, obj: Objective, Z: np.ndarray) -> np.ndarray:
    one_minus_c = 1.0 - np.sqrt(np.clip(1.0 - Z * Z, 0.0, None))
    if obj.variant in ("loss", "cost"):
        a, b = _linear_objective(case, obj)
        return one_minus_c @ a + Z @ b
    if obj.variant == "estimate":
        rows = stacked_rows(case)
        target = np.concatenate([obj.measurements.p_hat, obj.measurements.q_hat])
        vals = one_minus_c @ rows.alpha.T + Z @ rows.beta.T
        return np.sum((vals - target) ** 2, axis=1)
    raise ValueError(f"unknown objective variant {obj.variant!r}")


def grid_step_tolerance(case: NetworkCase, obj: Objective, resolution: int) -> float:
    """One grid step per axis times the largest slope of the objective on the box.

    Only meaningful for the convex edge-sum objectives, whose partial
    derivatives are monotone in each coordinate, so the largest slope sits at
    a box corner.
    """
    lo, hi = z_bounds(case)
    step = (hi - lo) / max(resolution - 1, 1)
    a, b = _linear_objective(case, obj)
    slope = lambda z: np.abs(a * z / np.sqrt(1.0 - z * z) + b)
    return float(np.sum(np.maximum(slope(lo), slope(hi)) * step))


def grid_oracle(case: NetworkCase, obj: Objective, resolution: int = 201,
                chunk: int = 1 << 18) -> OracleResult:
    """Exhaustive search over a uniform grid of the z box (at most three edges)."""
    require_valid(case)
    E = case.n_edges
    if E > MAX_ORACLE_EDGES:
        raise TooLarge(f"grid oracle handles at most {MAX_ORACLE_EDGES} edges, case has {E}")
    if not 2 <= resolution <= MAX_ORACLE_RESOLUTION:
        raise ValueError(f"resolution must lie in [2, {MAX_ORACLE_RESOLUTION}]")
    lo, hi = z_bounds(case)
    axes = [np.linspace(lo[e], hi[e], resolution) for e in range(E)]
    total = resolution**E
    best, arg, count = math.inf, None, 0
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        Z = np.column_stack([axes[e][k] for e, k in enumerate(np.unravel_index(idx, (resolution,) * E))])
        ok = feasible_mask(case, Z)
        count += int(ok.sum())
        if not ok.any():
            continue
        vals = _objective_on_grid(case, obj, Z[ok])
        j = int(np.argmin(vals))
        if vals[j] < best:
            best, arg = float(vals[j]), Z[ok][j].copy()
    tol = grid_step_tolerance(case, obj, resolution) if obj.variant in ("loss", "cost") else math.nan
    return OracleResult(best, arg, count, resolution, tol)


# ----------------------------------------------------------------- raster

@dataclass
class RasterGrid:
    edges: tuple[int, int]
    resolution: int
    axis_a: np.ndarray
    axis_b: np.ndarray
    original: Optional[np.ndarray]    # (resolution, resolution) bool, [i_a, i_b]
    restricted: Optional[np.ndarray]
    fixed_values: np.ndarray

    def angle_axes(self) -> tuple[np.ndarray, np.ndarray]:
        """Grid axes in angle-difference space (theta = asin z)."""
        return np.arcsin(self.axis_a), np.arcsin(self.axis_b)

    def to_csv(self) -> str:
        """One line per cell in row-major order; a column not computed is left empty."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["z_a", "z_b", "original", "restricted"])
        for i, za in enumerate(self.axis_a):
            for j, zb in enumerate(self.axis_b):
                o = "" if self.original is None else int(self.original[i, j])
                r = "" if self.restricted is None else int(self.restricted[i, j])
                w.writerow([repr(float(za)), repr(float(zb)), o, r])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "edges": list(self.edges), "resolution": self.resolution,
            "original_feasible_cells": None if self.original is None else int(self.original.sum()),
            "restricted_feasible_cells": None if self.restricted is None else int(self.restricted.sum()),
            "subset_violations": self.subset_violations() if self.original is not None
            and self.restricted is not None else None,
        }

    def boundary_cells(self) -> np.ndarray:
        """Cells whose 8-neighbourhood holds both original-feasible and -infeasible cells."""
        feas = self.original
        padded_any = np.pad(feas, 1, mode="edge")
        n = self.resolution
        has_true = np.zeros_like(feas)
        has_false = np.zeros_like(feas)
        for di in (0, 1, 2):
            for dj in (0, 1, 2):
                win = padded_any[di:di + n, dj:dj + n]
                has_true |= win
                has_false |= ~win
        return has_true & has_false

    def subset_violations(self, exempt_boundary: bool = True) -> int:
        """Cells flagged restricted-feasible but original-infeasible."""
        bad = self.restricted & ~self.original
        if exempt_boundary:
            bad &= ~self.boundary_cells()
        return int(bad.sum())


def raster_region(case: NetworkCase, edges: Sequence[int], resolution: int = 200,
                  mode: str = "both", planes: Optional[list[Hyperplane]] = None,
                  base: Optional[BasePoints] = None, fixed_values=None) -> RasterGrid:
    """Feasibility flags on a grid over the z box of two edges.

    ``mode`` is "original", "restricted" or "both".  The restriction comes from
    ``planes`` or, failing that, from the tangent planes at ``base``.  Edges
    not selected are pinned to ``fixed_values`` (zeros by default).
    """
    a, b = (int(e) for e in edges)
    if a == b:
        raise ValueError("the two raster edges must differ")
    for e in (a, b):
        if not 0 <= e < case.n_edges:
            raise ValueError(f"edge index {e} out of range")
    if mode not in ("original", "restricted", "both"):
        raise ValueError(f"unknown raster mode {mode!r}")
    lo, hi = z_bounds(case)
    fixed = np.zeros(case.n_edges) if fixed_values is None else np.asarray(fixed_values, dtype=float).copy()
    if fixed.shape != (case.n_edges,):
        raise ValueError("fixed_values needs one entry per edge")
    axis_a = np.linspace(lo[a], hi[a], resolution)
    axis_b = np.linspace(lo[b], hi[b], resolution)
    A, B = np.meshgrid(axis_a, axis_b, indexing="ij")
    Z = np.tile(fixed, (resolution * resolution, 1))
    Z[:, a] = A.ravel()
    Z[:, b] = B.ravel()
    shape = (resolution, resolution)
    original = feasible_mask(case, Z).reshape(shape) if mode in ("original", "both") else None
    restricted = None
    if mode in ("restricted", "both"):
        if planes is None:
            if base is None:
                raise ValueError("restricted mode needs hyperplanes or base points")
            planes = hyperplanes(case, base)
        restricted = restricted_mask(case, planes, Z).reshape(shape)
    return RasterGrid((a, b), resolution, axis_a, axis_b, original, restricted, fixed)
