"""Radial network data model: records, JSON case files, validation.

All quantities are per-unit (powers, admittances) or radians (angles).  Voltage
magnitudes are fixed at 1 throughout the package; there is no field for them.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any

import numpy as np

from .errors import ParseError

INF = math.inf


@dataclass(frozen=True)
class BusRecord:
    id: int
    p_min: float = -INF
    p_max: float = INF
    q_min: float = -INF
    q_max: float = INF
    cost_coeff: float = 0.0


@dataclass(frozen=True)
class EdgeRecord:
    """A line in its canonical orientation ``from -> to``.

    ``b`` follows the convention where an inductive line has ``b > 0``.
    """

    from_bus: int
    to_bus: int
    g: float
    b: float
    theta_min: float
    theta_max: float


@dataclass(frozen=True)
class NetworkCase:
    buses: tuple[BusRecord, ...]
    edges: tuple[EdgeRecord, ...]
    slack_bus: int

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "edges", tuple(self.edges))

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def bus_index(self) -> dict[int, int]:
        return {bus.id: k for k, bus in enumerate(self.buses)}

    @cached_property
    def tail(self) -> np.ndarray:
        return np.array([self.bus_index[e.from_bus] for e in self.edges], dtype=int)

    @cached_property
    def head(self) -> np.ndarray:
        return np.array([self.bus_index[e.to_bus] for e in self.edges], dtype=int)

    @cached_property
    def g(self) -> np.ndarray:
        return np.array([e.g for e in self.edges], dtype=float)

    @cached_property
    def b(self) -> np.ndarray:
        return np.array([e.b for e in self.edges], dtype=float)

    @cached_property
    def incidence(self) -> np.ndarray:
        """Signed bus-edge incidence: +1 at the tail, -1 at the head."""
        a = np.zeros((self.n_buses, self.n_edges))
        cols = np.arange(self.n_edges)
        a[self.tail, cols] = 1.0
        a[self.head, cols] = -1.0
        return a

    @cached_property
    def adjacency(self) -> dict[int, list[int]]:
        """Bus position -> incident edge indices, in file order."""
        adj: dict[int, list[int]] = {k: [] for k in range(self.n_buses)}
        for e, (t, h) in enumerate(zip(self.tail, self.head)):
            adj[int(t)].append(e)
            adj[int(h)].append(e)
        return adj

    def bounds(self, kind: str) -> tuple[np.ndarray, np.ndarray]:
        if kind == "p":
            return (np.array([b.p_min for b in self.buses], dtype=float),
                    np.array([b.p_max for b in self.buses], dtype=float))
        if kind == "q":
            return (np.array([b.q_min for b in self.buses], dtype=float),
                    np.array([b.q_max for b in self.buses], dtype=float))
        raise ValueError(f"kind must be 'p' or 'q', got {kind!r}")

    @property
    def cost_coeffs(self) -> np.ndarray:
        return np.array([b.cost_coeff for b in self.buses], dtype=float)


@dataclass
class ValidationReport:
    violations: list[tuple[str, str, str]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, rule, element, message):
        self.violations.append((rule, element, message))

    def to_dict(self):
        return {
            "ok": self.ok,
            "violations": [{"rule": r, "element": e, "message": m} for r, e, m in self.violations],
            "warnings": list(self.warnings),
        }


# ---------------------------------------------------------------- JSON I/O

def _number(value, path, allow_inf=False):
    if isinstance(value, bool):
        raise ParseError("expected a number, got a boolean", path)
    if isinstance(value, (int, float)):
        return float(value)
    if allow_inf and isinstance(value, str) and value in ("inf", "+inf", "-inf"):
        return INF if value != "-inf" else -INF
    raise ParseError(f"expected a number, got {type(value).__name__}", path)


def _integer(value, path):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParseError(f"expected an integer, got {type(value).__name__}", path)
    return value


def _require(obj, key, path):
    if not isinstance(obj, dict):
        raise ParseError("expected an object", path)
    if key not in obj:
        raise ParseError("missing required field", f"{path}.{key}")
    return obj[key]


def case_from_dict(doc: Any) -> NetworkCase:
    if not isinstance(doc, dict):
        raise ParseError("expected an object", "$")
    slack = _integer(_require(doc, "slack_bus", "$"), "$.slack_bus")
    raw_buses = _require(doc, "buses", "$")
    raw_edges = _require(doc, "edges", "$")
    if not isinstance(raw_buses, list):
        raise ParseError("expected an array", "$.buses")
    if not isinstance(raw_edges, list):
        raise ParseError("expected an array", "$.edges")

    buses = []
    for k, raw in enumerate(raw_buses):
        path = f"$.buses[{k}]"
        bus_id = _integer(_require(raw, "id", path), f"{path}.id")
        kw = {}
        for name, default in (("p_min", -INF), ("p_max", INF), ("q_min", -INF), ("q_max", INF)):
            kw[name] = _number(raw[name], f"{path}.{name}", allow_inf=True) if name in raw else default
        kw["cost_coeff"] = _number(raw["cost_coeff"], f"{path}.cost_coeff") if "cost_coeff" in raw else 0.0
        buses.append(BusRecord(id=bus_id, **kw))

    edges = []
    for k, raw in enumerate(raw_edges):
        path = f"$.edges[{k}]"
        edges.append(EdgeRecord(
            from_bus=_integer(_require(raw, "from", path), f"{path}.from"),
            to_bus=_integer(_require(raw, "to", path), f"{path}.to"),
            g=_number(_require(raw, "g", path), f"{path}.g"),
            b=_number(_require(raw, "b", path), f"{path}.b"),
            theta_min=_number(_require(raw, "theta_min", path), f"{path}.theta_min"),
            theta_max=_number(_require(raw, "theta_max", path), f"{path}.theta_max"),
        ))
    return NetworkCase(buses=tuple(buses), edges=tuple(edges), slack_bus=slack)


def parse_case(text: str | bytes) -> NetworkCase:
    """Parse a case JSON document.  Absent bounds default to +/-inf."""
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"malformed JSON: {exc}", "$") from exc
    return case_from_dict(doc)


def _encode_bound(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def case_to_dict(case: NetworkCase) -> dict:
    return {
        "slack_bus": case.slack_bus,
        "buses": [
            {"id": b.id, "p_min": _encode_bound(b.p_min), "p_max": _encode_bound(b.p_max),
             "q_min": _encode_bound(b.q_min), "q_max": _encode_bound(b.q_max),
             "cost_coeff": b.cost_coeff}
            for b in case.buses
        ],
        "edges": [
            {"from": e.from_bus, "to": e.to_bus, "g": e.g, "b": e.b,
             "theta_min": e.theta_min, "theta_max": e.theta_max}
            for e in case.edges
        ],
    }


def serialize_case(case: NetworkCase, indent=2) -> str:
    return json.dumps(case_to_dict(case), indent=indent)


def load_case(path) -> NetworkCase:
    with open(path, "rb") as fh:
        return parse_case(fh.read())


# ------------------------------------------------------------- validation

def validate(case: NetworkCase) -> ValidationReport:
    """Check every record invariant plus the tree requirement.

    Violations are collected, never raised.
    """
    report = ValidationReport()
    half_pi = math.pi / 2

    seen: set[int] = set()
    for bus in case.buses:
        tag = f"bus {bus.id}"
        if bus.id in seen:
            report.add("duplicate bus id", tag, "bus ids must be unique")
        seen.add(bus.id)
        values = (bus.p_min, bus.p_max, bus.q_min, bus.q_max, bus.cost_coeff)
        if any(math.isnan(v) for v in values):
            report.add("nan value", tag, "bounds and cost must not be NaN")
            continue
        if bus.p_min > bus.p_max:
            report.add("p bounds inverted", tag, f"p_min={bus.p_min} > p_max={bus.p_max}")
        if bus.q_min > bus.q_max:
            report.add("q bounds inverted", tag, f"q_min={bus.q_min} > q_max={bus.q_max}")
        if not math.isfinite(bus.cost_coeff) or bus.cost_coeff < 0:
            report.add("negative cost", tag, f"cost_coeff={bus.cost_coeff} must be finite and >= 0")

    if case.slack_bus not in seen:
        report.add("slack missing", f"bus {case.slack_bus}", "slack bus is not among the buses")

    endpoints_ok = True
    for k, e in enumerate(case.edges):
        tag = f"edge {k}"
        if e.from_bus == e.to_bus:
            report.add("self loop", tag, "from and to must differ")
        for end in (e.from_bus, e.to_bus):
            if end not in seen:
                report.add("unknown bus", tag, f"bus {end} does not exist")
                endpoints_ok = False
        if not math.isfinite(e.g) or e.g < 0:
            report.add("negative g", tag, f"g={e.g} must be finite and >= 0")
        if not math.isfinite(e.b) or e.b < 0:
            report.add("negative b", tag, f"b={e.b} must be finite and >= 0 (q(z) loses convexity otherwise)")
        for name, th in (("theta_min", e.theta_min), ("theta_max", e.theta_max)):
            if not (-half_pi < th < half_pi):
                report.add("angle bound outside (-pi/2, pi/2)", tag, f"{name}={th}")
        if e.theta_min > e.theta_max:
            report.add("angle bounds inverted", tag, f"theta_min={e.theta_min} > theta_max={e.theta_max}")

    n = len(seen)
    if len(case.edges) != max(n - 1, 0):
        report.add("not a tree", "network", f"{len(case.edges)} edges for {n} buses (need {max(n - 1, 0)})")
    elif endpoints_ok and n > 0 and not _connected(case):
        report.add("not a tree", "network", "graph is disconnected")
    return report


def _connected(case: NetworkCase) -> bool:
    nbrs: dict[int, list[int]] = {b.id: [] for b in case.buses}
    for e in case.edges:
        nbrs[e.from_bus].append(e.to_bus)
        nbrs[e.to_bus].append(e.from_bus)
    start = case.buses[0].id
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in nbrs[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == len(nbrs)


def require_valid(case: NetworkCase) -> None:
    from .errors import ValidationError

    report = validate(case)
    if not report.ok:
        raise ValidationError(report)


def z_bounds(case: NetworkCase) -> tuple[np.ndarray, np.ndarray]:
    """Per-edge interval for z = sin(theta): the sine of each angle bound."""
    lo = np.sin([e.theta_min for e in case.edges])
    hi = np.sin([e.theta_max for e in case.edges])
    return np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
