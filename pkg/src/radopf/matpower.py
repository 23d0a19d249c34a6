"""Import of MATPOWER ``.m`` case files (bus, branch and gen tables only).

Anything the unit-voltage radial model cannot represent (shunts, line
charging, taps, phase shifters, voltage limits) is dropped with a warning.
"""
from __future__ import annotations

import math
import re

import numpy as np

from .errors import ParseError
from .model import BusRecord, EdgeRecord, NetworkCase, ValidationReport, validate

# column indices, MATPOWER layout
BUS_I, BUS_TYPE, PD, QD, GS, BS = 0, 1, 2, 3, 4, 5
VMAX, VMIN = 11, 12
F_BUS, T_BUS, BR_R, BR_X, BR_B = 0, 1, 2, 3, 4
TAP, SHIFT, BR_STATUS, ANGMIN, ANGMAX = 8, 9, 10, 11, 12
GEN_BUS, QMAX, QMIN, GEN_STATUS, PMAX, PMIN = 0, 3, 4, 7, 8, 9

REF = 3

_TABLE_RE = r"mpc\.{name}\s*=\s*\[(.*?)\]\s*;"


def _strip_comments(text: str) -> str:
    return "\n".join(line.split("%", 1)[0] for line in text.splitlines())


def _table(text: str, name: str, required=True, min_cols=1):
    m = re.search(_TABLE_RE.format(name=name), text, flags=re.S)
    if m is None:
        if required:
            raise ParseError(f"table mpc.{name} not found", f"mpc.{name}")
        return None
    rows = []
    for k, chunk in enumerate(re.split(r"[;\n]", m.group(1))):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            rows.append([float(tok) for tok in re.split(r"[\s,]+", chunk) if tok])
        except ValueError as exc:
            raise ParseError(f"non-numeric entry in row {len(rows)}: {exc}", f"mpc.{name}") from exc
    if not rows:
        return np.zeros((0, min_cols))
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ParseError("ragged table rows", f"mpc.{name}")
    if width < min_cols:
        raise ParseError(f"expected at least {min_cols} columns, found {width}", f"mpc.{name}")
    return np.array(rows)


def _scalar(text: str, name: str, default: float) -> float:
    m = re.search(rf"mpc\.{name}\s*=\s*([-+0-9.eE]+)\s*;", text)
    return float(m.group(1)) if m else default


def _angle_limits(row, default: float):
    if row.size <= ANGMAX:
        return -default, default
    lo, hi = math.radians(row[ANGMIN]), math.radians(row[ANGMAX])
    if row[ANGMIN] == 0 and row[ANGMAX] == 0:
        return -default, default
    limit = math.pi / 2
    if lo <= -limit:
        lo = -default
    if hi >= limit:
        hi = default
    return lo, hi


def import_matpower(text: str, *, default_angle: float = math.pi / 3,
                    load_tolerance: float = 0.0) -> tuple[NetworkCase, ValidationReport]:
    """Convert a MATPOWER case into a :class:`NetworkCase`.

    :param default_angle: angle-difference bound (rad) used where the file has none.
    :param load_tolerance: per-unit half-width added to any bus whose p or q
        bounds coincide (fixed loads), so the case keeps a strict interior.
        Zero keeps the file's values untouched.
    :return: the case and a validation report whose warnings list every
        ignored field.
    """
    text = _strip_comments(text)
    base = _scalar(text, "baseMVA", 100.0)
    bus = _table(text, "bus", min_cols=4)
    branch = _table(text, "branch", min_cols=4)
    gen = _table(text, "gen", min_cols=10)
    warnings: list[str] = []
    if re.search(r"mpc\.gencost\s*=", text):
        warnings.append("gencost ignored (cost_coeff set to 0)")

    ids = [int(r[BUS_I]) for r in bus]
    pg_lo = dict.fromkeys(ids, 0.0)
    pg_hi = dict.fromkeys(ids, 0.0)
    qg_lo = dict.fromkeys(ids, 0.0)
    qg_hi = dict.fromkeys(ids, 0.0)
    for k, row in enumerate(gen):
        if row[GEN_STATUS] <= 0:
            continue
        at = int(row[GEN_BUS])
        if at not in pg_lo:
            raise ParseError(f"generator {k} at unknown bus {at}", "mpc.gen")
        pg_lo[at] += row[PMIN] / base
        pg_hi[at] += row[PMAX] / base
        qg_lo[at] += row[QMIN] / base
        qg_hi[at] += row[QMAX] / base

    buses = []
    slack = None
    vlim_warned = False
    for row in bus:
        i = int(row[BUS_I])
        pd, qd = row[PD] / base, row[QD] / base
        if bus.shape[1] > BS and (row[GS] != 0 or row[BS] != 0):
            warnings.append(f"bus {i}: shunt ignored (GS={row[GS]}, BS={row[BS]})")
        if bus.shape[1] > VMIN and not vlim_warned:
            warnings.append("voltage-magnitude bounds ignored (|V| = 1 assumed)")
            vlim_warned = True
        if int(row[BUS_TYPE]) == REF and slack is None:
            slack = i
        p = [pg_lo[i] - pd, pg_hi[i] - pd]
        q = [qg_lo[i] - qd, qg_hi[i] - qd]
        for pair in (p, q):
            if load_tolerance > 0 and pair[0] == pair[1]:
                pair[0] -= load_tolerance
                pair[1] += load_tolerance
        buses.append(BusRecord(id=i, p_min=float(p[0]), p_max=float(p[1]), q_min=float(q[0]), q_max=float(q[1])))
    if slack is None:
        with_gen = [int(r[GEN_BUS]) for r in gen if r[GEN_STATUS] > 0]
        slack = with_gen[0] if with_gen else ids[0]
        warnings.append(f"no reference bus in file; bus {slack} used as slack")

    edges = []
    for k, row in enumerate(branch):
        f, t = int(row[F_BUS]), int(row[T_BUS])
        tag = f"branch {k} ({f}-{t})"
        if branch.shape[1] > BR_STATUS and row[BR_STATUS] == 0:
            continue
        r, x = row[BR_R], row[BR_X]
        denom = r * r + x * x
        if denom == 0:
            raise ParseError(f"{tag} has zero impedance", "mpc.branch")
        if branch.shape[1] > BR_B and row[BR_B] != 0:
            warnings.append(f"{tag}: line charging ignored (B={row[BR_B]})")
        if branch.shape[1] > TAP and row[TAP] not in (0.0, 1.0):
            warnings.append(f"{tag}: tap ignored ({row[TAP]})")
        if branch.shape[1] > SHIFT and row[SHIFT] != 0:
            warnings.append(f"{tag}: phase shift ignored ({row[SHIFT]})")
        lo, hi = _angle_limits(row, default_angle)
        edges.append(EdgeRecord(from_bus=f, to_bus=t, g=float(r / denom), b=float(x / denom),
                                theta_min=lo, theta_max=hi))

    case = NetworkCase(buses=tuple(buses), edges=tuple(edges), slack_bus=slack)
    report = validate(case)
    report.warnings[:0] = warnings
    return case, report


def write_matpower(case_rows: dict, name: str = "case") -> str:
    """Render raw bus/gen/branch row lists as a MATPOWER file.

    ``case_rows`` holds ``baseMVA`` and lists ``bus``, ``gen``, ``branch`` of
    numeric rows in MATPOWER column order.  Used to produce synthetic feeders.
    """
    def block(rows):
        return "\n".join("\t" + "\t".join(repr(float(v)) for v in r) + ";" for r in rows)

    return (
        f"function mpc = {name}\n"
        "mpc.version = '2';\n"
        f"mpc.baseMVA = {case_rows.get('baseMVA', 100.0):g};\n"
        f"mpc.bus = [\n{block(case_rows['bus'])}\n];\n"
        f"mpc.gen = [\n{block(case_rows['gen'])}\n];\n"
        f"mpc.branch = [\n{block(case_rows['branch'])}\n];\n"
    )
