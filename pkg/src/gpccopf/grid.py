"""
gpccopf.grid
============

Static network description: buses, branches, generators, loads and renewable units,
plus the bus-admittance matrix.

Case files carry MW / MVAr and per-MW cost coefficients; everything inside a
:class:`GridCase` is per-unit on ``base_mva``. Bus ids are arbitrary integers and a dense
index map (``GridCase.bus_index``) is built once per case.
"""

from __future__ import annotations

import logging
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass
from enum import StrEnum
from functools import cached_property
from pathlib import Path

import msgspec
import msgspec.json
import numpy as np
import numpy.typing as npt
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from gpccopf.constants import BUILTIN_PREFIX, builtin_case_path
from gpccopf.errors import (
    CaseFormatError,
    CaseValidationError,
    DanglingBranchError,
    DuplicateBusError,
    NoSlackBusError,
    ZeroImpedanceError,
)

__all__ = [
    "BusKind",
    "Bus",
    "Branch",
    "Gen",
    "Load",
    "Res",
    "GridCase",
    "parse_case",
    "serialize_case",
    "load_case",
    "validate_case",
    "admittance_matrix",
    "branch_admittances",
]

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
ComplexArray = npt.NDArray[np.complex128]
IntArray = npt.NDArray[np.intp]


class BusKind(StrEnum):
    SLACK = "slack"
    PV = "pv"
    PQ = "pq"


@dataclass(frozen=True, slots=True)
class Bus:
    id: int
    kind: BusKind
    v_min: float
    v_max: float
    g_shunt: float = 0.0
    b_shunt: float = 0.0


@dataclass(frozen=True, slots=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    s_max: float


@dataclass(frozen=True, slots=True)
class Gen:
    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    v_set: float
    c2: float
    c1: float
    c0: float

    def cost(self, p: float) -> float:
        return self.c2 * p * p + self.c1 * p + self.c0


@dataclass(frozen=True, slots=True)
class Load:
    """A constant power-factor injection point (q = gamma * p)."""

    bus: int
    p_ref: float
    gamma: float


# Renewable units share the load record; only their sign in the balance differs.
Res = Load


@dataclass(frozen=True)
class GridCase:
    """
    Immutable grid model. Index helpers are cached on first use; the instance is safe to
    share between threads once constructed.
    """

    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    gens: tuple[Gen, ...]
    loads: tuple[Load, ...]
    res_units: tuple[Res, ...] = ()

    # ---- sizes ----------------------------------------------------------------------

    @property
    def m(self) -> int:
        """Number of buses."""
        return len(self.buses)

    @property
    def n(self) -> int:
        """Number of branches."""
        return len(self.branches)

    # ---- index maps -----------------------------------------------------------------

    @cached_property
    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def slack(self) -> int:
        return next(i for i, b in enumerate(self.buses) if b.kind is BusKind.SLACK)

    @cached_property
    def slack_gen(self) -> int:
        """Position of the slack generator within ``gens``."""
        slack_id = self.buses[self.slack].id
        return next(k for k, g in enumerate(self.gens) if g.bus == slack_id)

    @cached_property
    def pv(self) -> IntArray:
        return np.array([i for i, b in enumerate(self.buses) if b.kind is BusKind.PV], np.intp)

    @cached_property
    def pq(self) -> IntArray:
        return np.array([i for i, b in enumerate(self.buses) if b.kind is BusKind.PQ], np.intp)

    @cached_property
    def gen_buses(self) -> IntArray:
        return np.array([self.bus_index[g.bus] for g in self.gens], np.intp)

    @cached_property
    def load_buses(self) -> IntArray:
        return np.array([self.bus_index[ld.bus] for ld in self.loads], np.intp)

    @cached_property
    def res_buses(self) -> IntArray:
        return np.array([self.bus_index[r.bus] for r in self.res_units], np.intp)

    @cached_property
    def branch_from(self) -> IntArray:
        return np.array([self.bus_index[br.from_bus] for br in self.branches], np.intp)

    @cached_property
    def branch_to(self) -> IntArray:
        return np.array([self.bus_index[br.to_bus] for br in self.branches], np.intp)

    @cached_property
    def non_slack_gens(self) -> IntArray:
        return np.array([k for k in range(len(self.gens)) if k != self.slack_gen], np.intp)

    # ---- convenience vectors --------------------------------------------------------

    @cached_property
    def p_load_ref(self) -> FloatArray:
        return np.array([ld.p_ref for ld in self.loads], np.float64)

    @cached_property
    def p_res_ref(self) -> FloatArray:
        return np.array([r.p_ref for r in self.res_units], np.float64)

    @cached_property
    def p_gen_bounds(self) -> tuple[FloatArray, FloatArray]:
        return (
            np.array([g.p_min for g in self.gens], np.float64),
            np.array([g.p_max for g in self.gens], np.float64),
        )

    @cached_property
    def cost_coeffs(self) -> tuple[FloatArray, FloatArray, FloatArray]:
        return (
            np.array([g.c2 for g in self.gens], np.float64),
            np.array([g.c1 for g in self.gens], np.float64),
            np.array([g.c0 for g in self.gens], np.float64),
        )

    @cached_property
    def v_set(self) -> FloatArray:
        """Initial voltage magnitudes: 1 p.u. everywhere, v_set at generator buses."""
        v = np.ones(self.m)
        for g, i in zip(self.gens, self.gen_buses, strict=True):
            v[i] = g.v_set
        return v

    def bus_id(self, index: int) -> int:
        return self.buses[index].id

    def generation_cost(self, p_g: Sequence[float] | FloatArray) -> float:
        c2, c1, c0 = self.cost_coeffs
        p = np.asarray(p_g, dtype=np.float64)
        return float(np.sum(c2 * p * p + c1 * p + c0))


# ─────────── case file (MW units, exact field names) ───────────


class _BusDoc(msgspec.Struct, forbid_unknown_fields=True):
    id: int
    kind: BusKind
    v_min: float
    v_max: float
    g_shunt: float = 0.0
    b_shunt: float = 0.0


class _BranchDoc(msgspec.Struct, forbid_unknown_fields=True):
    from_: int = msgspec.field(name="from")
    to: int
    r: float
    x: float
    s_max_mva: float


class _GenDoc(msgspec.Struct, forbid_unknown_fields=True):
    bus: int
    p_min_mw: float
    p_max_mw: float
    q_min_mvar: float
    q_max_mvar: float
    v_set: float
    c2: float
    c1: float
    c0: float


class _InjectionDoc(msgspec.Struct, forbid_unknown_fields=True):
    bus: int
    p_ref_mw: float
    gamma: float


class _CaseDoc(msgspec.Struct):
    base_mva: float
    buses: list[_BusDoc]
    branches: list[_BranchDoc]
    gens: list[_GenDoc]
    loads: list[_InjectionDoc] = msgspec.field(default_factory=list)
    res: list[_InjectionDoc] = msgspec.field(default_factory=list)


def _from_doc(doc: _CaseDoc) -> GridCase:
    base = doc.base_mva
    if not base > 0:
        raise CaseFormatError.make("base_mva must be positive", base_mva=base)
    return GridCase(
        base_mva=base,
        buses=tuple(Bus(b.id, b.kind, b.v_min, b.v_max, b.g_shunt, b.b_shunt) for b in doc.buses),
        branches=tuple(
            Branch(br.from_, br.to, br.r, br.x, br.s_max_mva / base) for br in doc.branches
        ),
        gens=tuple(
            Gen(
                bus=g.bus,
                p_min=g.p_min_mw / base,
                p_max=g.p_max_mw / base,
                q_min=g.q_min_mvar / base,
                q_max=g.q_max_mvar / base,
                v_set=g.v_set,
                c2=g.c2 * base * base,
                c1=g.c1 * base,
                c0=g.c0,
            )
            for g in doc.gens
        ),
        loads=tuple(Load(ld.bus, ld.p_ref_mw / base, ld.gamma) for ld in doc.loads),
        res_units=tuple(Res(r.bus, r.p_ref_mw / base, r.gamma) for r in doc.res),
    )


def _to_doc(case: GridCase) -> _CaseDoc:
    base = case.base_mva
    return _CaseDoc(
        base_mva=base,
        buses=[_BusDoc(b.id, b.kind, b.v_min, b.v_max, b.g_shunt, b.b_shunt) for b in case.buses],
        branches=[
            _BranchDoc(from_=br.from_bus, to=br.to_bus, r=br.r, x=br.x, s_max_mva=br.s_max * base)
            for br in case.branches
        ],
        gens=[
            _GenDoc(
                bus=g.bus,
                p_min_mw=g.p_min * base,
                p_max_mw=g.p_max * base,
                q_min_mvar=g.q_min * base,
                q_max_mvar=g.q_max * base,
                v_set=g.v_set,
                c2=g.c2 / (base * base),
                c1=g.c1 / base,
                c0=g.c0,
            )
            for g in case.gens
        ],
        loads=[_InjectionDoc(ld.bus, ld.p_ref * base, ld.gamma) for ld in case.loads],
        res=[_InjectionDoc(r.bus, r.p_ref * base, r.gamma) for r in case.res_units],
    )


def parse_case(text: str | bytes) -> GridCase:
    """Decode and validate a JSON case file."""
    try:
        doc = msgspec.json.decode(text, type=_CaseDoc)
    except msgspec.ValidationError as e:
        raise CaseFormatError.make(f"invalid case file: {e}") from e
    except msgspec.DecodeError as e:
        raise CaseFormatError.make(f"malformed JSON: {e}") from e
    case = _from_doc(doc)
    validate_case(case)
    logger.debug("parsed case: %d buses, %d branches, %d gens", case.m, case.n, len(case.gens))
    return case


def serialize_case(case: GridCase) -> bytes:
    return msgspec.json.format(msgspec.json.encode(_to_doc(case)), indent=2) + b"\n"


def load_case(ref: str | Path) -> GridCase:
    """Load a case from a path, or a bundled case via ``builtin:<name>``."""
    s = str(ref)
    path = builtin_case_path(s[len(BUILTIN_PREFIX) :]) if s.startswith(BUILTIN_PREFIX) else Path(s)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CaseFormatError.make("cannot read case file", path=str(path)) from e
    return parse_case(data)


# ─────────── validation ───────────


def _check_pair(lo: float, hi: float, what: str, **context: int) -> None:
    if lo > hi:
        raise CaseValidationError.make(f"{what}: min exceeds max", lo=lo, hi=hi, **context)


def validate_case(case: GridCase) -> None:
    """Raise on the first violated GridCase invariant."""
    counts = Counter(b.id for b in case.buses)
    dup = [bid for bid, c in counts.items() if c > 1]
    if dup:
        raise DuplicateBusError.make("duplicate bus id", bus=dup[0])

    slacks = [b.id for b in case.buses if b.kind is BusKind.SLACK]
    if not slacks:
        raise NoSlackBusError.make("no slack bus")
    if len(slacks) > 1:
        raise CaseValidationError.make("more than one slack bus", buses=str(slacks))

    ids = set(counts)
    for k, br in enumerate(case.branches):
        for end in (br.from_bus, br.to_bus):
            if end not in ids:
                raise DanglingBranchError.make("branch endpoint is not a bus", branch=k, bus=end)
        if br.from_bus == br.to_bus:
            raise CaseValidationError.make("branch is a self-loop", branch=k, bus=br.from_bus)
        if br.r < 0 or br.x == 0 or br.s_max <= 0:
            raise CaseValidationError.make(
                "branch needs r >= 0, x != 0, s_max > 0", branch=k, r=br.r, x=br.x
            )

    for b in case.buses:
        if not 0 < b.v_min <= b.v_max:
            raise CaseValidationError.make("voltage bounds need 0 < v_min <= v_max", bus=b.id)

    gen_counts = Counter(g.bus for g in case.gens)
    for g in case.gens:
        if g.bus not in ids:
            raise CaseValidationError.make("generator at unknown bus", bus=g.bus)
        if gen_counts[g.bus] > 1:
            raise CaseValidationError.make("one generator per bus is supported", bus=g.bus)
        _check_pair(g.p_min, g.p_max, "generator active limits", bus=g.bus)
        _check_pair(g.q_min, g.q_max, "generator reactive limits", bus=g.bus)
        if min(g.c2, g.c1, g.c0) < 0:
            raise CaseValidationError.make("cost coefficients must be nonnegative", bus=g.bus)

    by_id = {b.id: b for b in case.buses}
    for b in case.buses:
        if b.kind is not BusKind.PQ and b.id not in gen_counts:
            raise CaseValidationError.make(f"{b.kind} bus without a generator", bus=b.id)
    for g in case.gens:
        if by_id[g.bus].kind is BusKind.PQ:
            raise CaseValidationError.make("generator at a PQ bus", bus=g.bus)

    for ld in (*case.loads, *case.res_units):
        if ld.bus not in ids:
            raise CaseValidationError.make("injection at unknown bus", bus=ld.bus)
        if ld.gamma < 0:
            raise CaseValidationError.make("gamma must be nonnegative", bus=ld.bus)

    if case.m > 1:
        idx = case.bus_index
        rows = [idx[br.from_bus] for br in case.branches]
        cols = [idx[br.to_bus] for br in case.branches]
        graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(case.m, case.m))
        n_comp, _ = connected_components(graph, directed=False)
        if n_comp > 1:
            raise CaseValidationError.make("grid is not connected", components=int(n_comp))


# ─────────── admittance ───────────


def branch_admittances(case: GridCase) -> ComplexArray:
    """Series admittance y = 1 / (r + jx) per branch."""
    z = np.array([complex(br.r, br.x) for br in case.branches], dtype=np.complex128)
    bad = np.flatnonzero(z == 0)
    if bad.size:
        br = case.branches[int(bad[0])]
        raise ZeroImpedanceError.make(
            "zero-impedance branch", branch=int(bad[0]), from_bus=br.from_bus, to_bus=br.to_bus
        )
    return 1.0 / z


def admittance_matrix(case: GridCase) -> ComplexArray:
    """
    Dense bus-admittance matrix Y = G + jB (standard sign convention):
    off-diagonal (k, j) = -y_kj, diagonal (k, k) = sum_j y_kj + shunt_k.
    """
    y = branch_admittances(case)
    f, t = case.branch_from, case.branch_to
    Y = np.zeros((case.m, case.m), dtype=np.complex128)
    np.add.at(Y, (f, t), -y)
    np.add.at(Y, (t, f), -y)
    np.add.at(Y, (f, f), y)
    np.add.at(Y, (t, t), y)
    Y[np.diag_indices(case.m)] += np.array(
        [complex(b.g_shunt, b.b_shunt) for b in case.buses], dtype=np.complex128
    )
    return Y
