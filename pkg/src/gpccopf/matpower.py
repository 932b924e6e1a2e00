"""
Import of MATPOWER ``.m`` case files into a GridCase.

The grid model has no line-charging or tap-ratio terms on branches, so the import
folds each branch's charging susceptance into the two end-bus shunts (b/2 each) and
drops tap ratios and phase shifts. Loads and renewable units share one reactive ratio
``gamma``; renewable units are not part of MATPOWER data and are passed in by bus.
"""

from __future__ import annotations

import logging
import re
from collections.abc import Mapping
from pathlib import Path

import numpy as np
import numpy.typing as npt

from gpccopf.errors import CaseFormatError
from gpccopf.grid import Branch, Bus, BusKind, Gen, GridCase, Load, Res, validate_case

__all__ = ["parse_matpower_case", "load_matpower_case", "PLACEHOLDER_RATING_MVA"]

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

# rateA = 0 means "unlimited" in MATPOWER
PLACEHOLDER_RATING_MVA = 1000.0

_KINDS = {1: BusKind.PQ, 2: BusKind.PV, 3: BusKind.SLACK}
_BASE_RE = re.compile(r"mpc\.baseMVA\s*=\s*([-+0-9.eE]+)\s*;")


def _matrix(text: str, name: str, min_cols: int) -> FloatArray:
    m = re.search(rf"mpc\.{name}\s*=\s*\[(.*?)\]\s*;", text, re.DOTALL)
    if m is None:
        raise CaseFormatError.make("MATPOWER table missing", table=name)
    rows = []
    for raw in re.split(r"[;\n]", m.group(1)):
        line = raw.split("%", 1)[0].strip()
        if not line:
            continue
        try:
            rows.append([float(v) for v in line.replace(",", " ").split()])
        except ValueError as e:
            raise CaseFormatError.make(f"bad number in {name}: {e}", table=name) from e
    if not rows:
        raise CaseFormatError.make("MATPOWER table is empty", table=name)
    width = min(len(r) for r in rows)
    if width < min_cols:
        raise CaseFormatError.make(
            "MATPOWER table has too few columns", table=name, columns=width, needed=min_cols
        )
    return np.array([r[:width] for r in rows], np.float64)


def _quadratic(row: FloatArray) -> tuple[float, float, float]:
    if int(row[0]) != 2:
        raise CaseFormatError.make("only polynomial generator costs are supported", model=row[0])
    n = int(row[3])
    coeffs = [float(c) for c in row[4 : 4 + n]]
    if n > 3 or len(coeffs) != n:
        raise CaseFormatError.make("generator cost must be at most quadratic", terms=n)
    padded = [0.0] * (3 - n) + coeffs
    return padded[0], padded[1], padded[2]


def parse_matpower_case(
    text: str,
    *,
    res_mw: Mapping[int, float] | None = None,
    gamma: float = 0.3,
    rating_mva: float = PLACEHOLDER_RATING_MVA,
) -> GridCase:
    """
    Build a validated GridCase from MATPOWER text. ``res_mw`` maps bus id to the
    forecast output of a renewable unit placed there.
    """
    m = _BASE_RE.search(text)
    if m is None:
        raise CaseFormatError.make("mpc.baseMVA not found")
    base = float(m.group(1))
    bus = _matrix(text, "bus", 13)
    gen = _matrix(text, "gen", 10)
    branch = _matrix(text, "branch", 11)
    gencost = _matrix(text, "gencost", 5)

    shunt_b = {int(r[0]): float(r[5]) / base for r in bus}
    for r in branch:
        if r[10] > 0:
            shunt_b[int(r[0])] += 0.5 * float(r[4])
            shunt_b[int(r[1])] += 0.5 * float(r[4])

    buses = []
    for r in bus:
        kind = _KINDS.get(int(r[1]))
        if kind is None:
            raise CaseFormatError.make("isolated buses are not supported", bus=int(r[0]))
        bid = int(r[0])
        g_sh = float(r[4]) / base
        buses.append(Bus(bid, kind, float(r[12]), float(r[11]), g_sh, shunt_b[bid]))

    branches = tuple(
        Branch(
            int(r[0]),
            int(r[1]),
            float(r[2]),
            float(r[3]),
            (float(r[5]) if r[5] > 0 else rating_mva) / base,
        )
        for r in branch
        if r[10] > 0
    )

    if gencost.shape[0] < gen.shape[0]:
        raise CaseFormatError.make(
            "gencost has fewer rows than gen", gens=gen.shape[0], costs=gencost.shape[0]
        )
    gens = []
    for r, cost in zip(gen, gencost, strict=False):
        if r[7] <= 0:
            continue
        c2, c1, c0 = _quadratic(cost)
        gens.append(
            Gen(
                bus=int(r[0]),
                p_min=float(r[9]) / base,
                p_max=float(r[8]) / base,
                q_min=float(r[4]) / base,
                q_max=float(r[3]) / base,
                v_set=float(r[5]),
                c2=c2 * base * base,
                c1=c1 * base,
                c0=c0,
            )
        )

    loads = tuple(Load(int(r[0]), float(r[2]) / base, gamma) for r in bus if r[2] > 0)
    res = tuple(Res(b, mw / base, gamma) for b, mw in sorted((res_mw or {}).items()))

    case = GridCase(
        base_mva=base,
        buses=tuple(buses),
        branches=branches,
        gens=tuple(gens),
        loads=loads,
        res_units=res,
    )
    validate_case(case)
    logger.info(
        "imported MATPOWER case: %d buses, %d branches, %d gens, %d loads",
        case.m, case.n, len(case.gens), len(case.loads),
    )
    return case


def load_matpower_case(
    path: Path,
    *,
    res_mw: Mapping[int, float] | None = None,
    gamma: float = 0.3,
    rating_mva: float = PLACEHOLDER_RATING_MVA,
) -> GridCase:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise CaseFormatError.make("cannot read MATPOWER file", path=str(path)) from e
    return parse_matpower_case(text, res_mw=res_mw, gamma=gamma, rating_mva=rating_mva)
